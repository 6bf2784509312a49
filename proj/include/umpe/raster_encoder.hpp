// SPDX-License-Identifier: Apache-2.0
//
// Raster-prior branch: shared convolutional backbone with every-stage FiLM
// source conditioning, 1x1 projection + resize to the BEV canvas, per-source
// SE(2) micro-alignment on the feature lattice, and presence-normalized
// gating of the two raster streams.

#pragma once

#include "umpe/nn.hpp"
#include "umpe/priors.hpp"

namespace umpe {

struct RasterEncoderConfig {
  std::int64_t dim = 32;                    // output token width C
  std::vector<std::int64_t> widths = {16, 32, 64, 64};
  std::int64_t embed_dim = 32;              // source embedding D
  double eps = kEps;
  double lambda_t = 0.1;
  double lambda_r = 1.0;
  std::int64_t regressor_hidden = 32;
  bool share_film = true;     // one FiLM projection per stage, shared by both
                              // sources (the embedding c carries identity)
  bool feature_gate = true;   // Feagate (pooled tokens) vs Congate (embeddings)
  bool identity_backbone = false;  // single 1x1 stride-1 stage; test fixture
};

class RasterEncoder {
public:
  RasterEncoder(nn::ParamStore& ps, const std::string& prefix,
                const RasterEncoderConfig& cfg);

  /// Channel-wise (1+gamma) * A + beta with [gamma, beta] = W c + b,
  /// broadcast over space. film takes A:[B,Cw,H,W], gb:[2*Cw].
  static nn::Var film(const nn::Var& a, const nn::Var& gamma_beta);

  /// Learned source embedding (one-hot identity through a small MLP).
  nn::Var source_embedding(SourceId src) const;

  /// FiLM-conditioned backbone + 1x1 projection + bilinear resize back to
  /// the input canvas. img: [B,3,H,W] in [0,1] -> [B,C,H,W].
  nn::Var encode_raster(const nn::Var& img, SourceId src) const;

  struct AlignResult {
    nn::Var pose;     // [B*3] flattened poses, one per frame
    nn::Var aligned;  // [B,C,H,W]
    nn::Var tokens;   // [B,HW,C]
    nn::Var se2_reg;  // [1], summed over the batch
  };

  /// Pose from pooled features + pooled BEV reference (zero-init head),
  /// normalized affine, bilinear warp, FlattenHW. `pose_override` is
  /// [B*3] when given; `reg_weights` scales each frame's regularizer
  /// (used to exclude frames where this source is absent).
  AlignResult micro_align(const nn::Var& fmap, const nn::Var& bev_ref,
                          const geom::BEVGridSpec& grid,
                          const nn::Var& pose_override = nullptr,
                          const std::vector<double>* reg_weights = nullptr) const;

  struct FrameResult {
    nn::Var z_fused;  // [B,HW,C]; null when the whole family is absent
    nn::Var se2_reg;  // [1] or null
    nn::Var gates;    // [B,2,C] or null
    std::array<AlignResult, 2> per_source;  // sat, rsd (tokens null if absent)
    bool absent = false;
  };

  /// Batched forward over one raster family. imgs are [B,3,H,W] (already
  /// masked for absent frames); presence is per frame x source.
  FrameResult forward(const nn::Var& bev_ref,  // [B,HW,C]
                      const nn::Var& sat_img, const nn::Var& rsd_img,
                      const std::vector<std::array<bool, 2>>& presence,
                      const geom::BEVGridSpec& grid,
                      const nn::Var& sat_pose_override = nullptr,
                      const nn::Var& rsd_pose_override = nullptr) const;

  const RasterEncoderConfig& config() const { return cfg_; }

private:
  nn::Var backbone(const nn::Var& img, const nn::Var& cond) const;

  RasterEncoderConfig cfg_;
  nn::Linear emb_fc1_, emb_fc2_;
  struct Stage {
    nn::Var down_w, down_b;
    nn::Var res1_w, res1_b, res2_w, res2_b;
    nn::Linear film_proj;  // zero-init: identity modulation at start
  };
  std::vector<Stage> stages_;
  nn::Var proj_w, proj_b;  // 1x1 to C
  nn::Linear reg_fc1_, reg_fc2_;
  nn::Linear gate_fc1_, gate_fc2_;
};

/// [B,C,H,W] -> [B,HW,C]; FlattenHW then unflatten is the identity.
nn::Var flatten_hw(const nn::Var& fmap);
nn::Var unflatten_hw(const nn::Var& tokens, std::int64_t h, std::int64_t w);

}  // namespace umpe
