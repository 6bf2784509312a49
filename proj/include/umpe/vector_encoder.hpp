// SPDX-License-Identifier: Apache-2.0
//
// Vector-prior branch: SE(2) pre-alignment of HD/SD polylines, sinusoidal
// tokenization, a 6-layer set transformer with per-token confidence, dual
// cross-attention with an additive log-confidence bias, and presence-
// normalized channel-wise gating of the two sources.

#pragma once

#include "umpe/nn.hpp"
#include "umpe/priors.hpp"

namespace umpe {

struct VectorEncoderConfig {
  std::int64_t dim = 32;  // token width C (= heads * head_dim)
  std::int64_t heads = 4;
  std::int64_t enc_depth = 6;
  std::int64_t enc_ff = 64;
  int n_freqs = 8;                      // K
  double omega0 = 2.0 * kPi / 60.0;     // lowest frequency spans the window
  int n_categories = kNumCategories;
  double eps = kEps;                    // confidence clamp / presence log
  double lambda_t = 0.1;
  double lambda_r = 1.0;
  std::int64_t regressor_hidden = 32;
  bool share_kv = false;  // share W_K/W_V (and W_O) across HD/SD

  std::int64_t raw_token_dim() const {
    return static_cast<std::int64_t>(kPolylinePoints) * 4 * n_freqs +
           n_categories + 2;
  }
};

/// Geometrically spaced frequencies omega0 * 2^(k-1), k = 1..K.
std::vector<double> geometric_freqs(int k, double omega0);

/// [sin(w_k x), cos(w_k x), sin(w_k y), cos(w_k y)] for k = 1..K.
std::vector<double> sinusoidal_embed(double x, double y,
                                     const std::vector<double>& freqs);

/// One source's polylines flattened for the graph. `points` is [N*P, 2]
/// raw (pre-correction) coordinates; pass a leaf to probe gradients.
struct VectorSourceInput {
  nn::Var points;
  std::vector<int> categories;  // per polyline
  int count = 0;
  bool present = false;

  static VectorSourceInput from_set(const PolylineSet& set, bool present);
};

class VectorEncoder {
public:
  VectorEncoder(nn::ParamStore& ps, const std::string& prefix,
                const VectorEncoderConfig& cfg);

  struct SourceResult {
    nn::Var y;           // [HW, C]; zero tokens when absent/empty
    nn::Var tokens;      // [N, C] or null
    nn::Var confidence;  // [N] or null
    nn::Var pose;        // [3] or null
    nn::Var se2_reg;     // [1] or null
  };

  struct FrameResult {
    nn::Var y_fused;  // [HW, C]; equals the input queries when passthrough
    nn::Var se2_reg;  // [1] sum over present sources (may be null)
    nn::Var gates;    // [2, C] or null (diagnostics)
    std::array<SourceResult, 2> per_source;  // HD, SD
    bool passthrough = false;                // both sources absent
  };

  /// One frame. `bev` is [HW, C]; pose overrides replace the regressed
  /// correction (oracle tests, diagnostics).
  FrameResult forward(const nn::Var& bev, const VectorSourceInput& hd,
                      const VectorSourceInput& sd,
                      const nn::Var& hd_pose_override = nullptr,
                      const nn::Var& sd_pose_override = nullptr) const;

  /// Raw token z_i per polyline: [N, P*4K + K_cat + 2], point block first,
  /// then category one-hot, then source one-hot.
  nn::Var tokenize(const nn::Var& corrected_points,
                   const std::vector<int>& categories, SourceId source) const;

  /// 6-layer set encoder + sigmoid confidence head. Input [N, raw_dim].
  std::pair<nn::Var, nn::Var> encode_tokens(const nn::Var& z) const;

  /// Regresses (dx, dy, dtheta) from mean point position and pooled BEV
  /// tokens; zero-initialized head, so the correction starts at identity.
  nn::Var predict_pose(const nn::Var& points, const nn::Var& bev) const;

  /// lambda_t * |T|^2 + lambda_r * dtheta^2.
  nn::Var se2_regularizer(const nn::Var& pose) const;

  const VectorEncoderConfig& config() const { return cfg_; }

private:
  SourceResult encode_source(const nn::Var& bev, const VectorSourceInput& src,
                             SourceId id, const nn::Var& pose_override) const;

  VectorEncoderConfig cfg_;
  std::vector<double> freqs_;
  nn::Linear in_proj_;
  nn::TransformerEncoder encoder_;
  nn::Linear conf_head_;
  nn::Linear reg_fc1_, reg_fc2_;
  nn::Linear wq_;
  std::array<nn::Linear, 2> wk_, wv_, wo_;  // [HD, SD]; aliased if share_kv
  nn::Linear gate_fc1_, gate_fc2_;
};

}  // namespace umpe
