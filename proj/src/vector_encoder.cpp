// SPDX-License-Identifier: Apache-2.0

#include "umpe/vector_encoder.hpp"

#include <cmath>

namespace umpe {

using namespace nn;

std::vector<double> geometric_freqs(int k, double omega0) {
  validate(k >= 1, "need at least one frequency");
  std::vector<double> freqs(static_cast<std::size_t>(k));
  double w = omega0;
  for (int i = 0; i < k; ++i, w *= 2.0) freqs[static_cast<std::size_t>(i)] = w;
  return freqs;
}

std::vector<double> sinusoidal_embed(double x, double y,
                                     const std::vector<double>& freqs) {
  std::vector<double> out;
  out.reserve(freqs.size() * 4);
  for (double w : freqs) {
    out.push_back(std::sin(w * x));
    out.push_back(std::cos(w * x));
    out.push_back(std::sin(w * y));
    out.push_back(std::cos(w * y));
  }
  return out;
}

VectorSourceInput VectorSourceInput::from_set(const PolylineSet& set,
                                              bool present) {
  VectorSourceInput in;
  in.present = present;
  if (!present) return in;  // absent payloads never reach the graph
  in.count = set.count();
  if (in.count == 0) return in;
  Tensor pts({static_cast<std::int64_t>(in.count) * kPolylinePoints, 2});
  std::int64_t row = 0;
  for (const auto& pl : set.polylines) {
    validate(static_cast<int>(pl.points.size()) == kPolylinePoints,
             "polyline must carry exactly P points");
    validate(pl.category >= 0 && pl.category < kNumCategories,
             "polyline category out of range");
    in.categories.push_back(pl.category);
    for (const auto& p : pl.points) {
      pts[row * 2] = p.x;
      pts[row * 2 + 1] = p.y;
      ++row;
    }
  }
  in.points = constant(std::move(pts));
  return in;
}

VectorEncoder::VectorEncoder(nn::ParamStore& ps, const std::string& prefix,
                             const VectorEncoderConfig& cfg)
    : cfg_(cfg), freqs_(geometric_freqs(cfg.n_freqs, cfg.omega0)) {
  validate(cfg.dim % cfg.heads == 0, "heads must divide token width");
  in_proj_ = Linear(ps, prefix + ".in_proj", cfg.raw_token_dim(), cfg.dim);
  encoder_ = TransformerEncoder(ps, prefix + ".enc", cfg.enc_depth, cfg.dim,
                                cfg.heads, cfg.enc_ff);
  conf_head_ = Linear(ps, prefix + ".conf", cfg.dim, 1);
  reg_fc1_ = Linear(ps, prefix + ".se2.fc1", cfg.dim + 2, cfg.regressor_hidden);
  reg_fc2_ = Linear(ps, prefix + ".se2.fc2", cfg.regressor_hidden, 3, true,
                    Init::Zero);
  wq_ = Linear(ps, prefix + ".attn.wq", cfg.dim, cfg.dim, false);
  const char* src_tag[2] = {".attn.hd", ".attn.sd"};
  for (int s = 0; s < 2; ++s) {
    if (cfg.share_kv && s == 1) {
      wk_[1] = wk_[0];
      wv_[1] = wv_[0];
      wo_[1] = wo_[0];
      break;
    }
    wk_[s] = Linear(ps, prefix + src_tag[s] + ".wk", cfg.dim, cfg.dim, false);
    wv_[s] = Linear(ps, prefix + src_tag[s] + ".wv", cfg.dim, cfg.dim, false);
    wo_[s] = Linear(ps, prefix + src_tag[s] + ".wo", cfg.dim, cfg.dim);
  }
  gate_fc1_ = Linear(ps, prefix + ".gate.fc1", 2 * cfg.dim, 2 * cfg.dim);
  gate_fc2_ = Linear(ps, prefix + ".gate.fc2", 2 * cfg.dim, 2 * cfg.dim);
}

Var VectorEncoder::tokenize(const Var& corrected_points,
                            const std::vector<int>& categories,
                            SourceId source) const {
  const std::int64_t n = static_cast<std::int64_t>(categories.size());
  validate(corrected_points->val.ndim() == 2 &&
               corrected_points->val.dim(0) == n * kPolylinePoints &&
               corrected_points->val.dim(1) == 2,
           "tokenize: corrected points must be [N*P, 2]");
  Var x = slice(corrected_points, 1, 0, 1);  // [N*P, 1]
  Var y = slice(corrected_points, 1, 1, 1);
  // Per-frequency block order fixed as [sin wx, cos wx, sin wy, cos wy].
  std::vector<Var> blocks;
  blocks.reserve(freqs_.size() * 4);
  for (double w : freqs_) {
    blocks.push_back(sin_op(mul_scalar(x, w)));
    blocks.push_back(cos_op(mul_scalar(x, w)));
    blocks.push_back(sin_op(mul_scalar(y, w)));
    blocks.push_back(cos_op(mul_scalar(y, w)));
  }
  Var phi = concat(blocks, 1);  // [N*P, 4K]
  Var flat = reshape(phi, {n, static_cast<std::int64_t>(kPolylinePoints) * 4 *
                                  cfg_.n_freqs});
  // Trailing semantics: category one-hot then source one-hot.
  Tensor tail({n, static_cast<std::int64_t>(cfg_.n_categories) + 2});
  for (std::int64_t i = 0; i < n; ++i) {
    tail.at2(i, categories[static_cast<std::size_t>(i)]) = 1.0;
    tail.at2(i, cfg_.n_categories + (source == SourceId::HD ? 0 : 1)) = 1.0;
  }
  return concat({flat, constant(std::move(tail))}, 1);
}

std::pair<Var, Var> VectorEncoder::encode_tokens(const Var& z) const {
  validate(z->val.dim(0) >= 1, "encode_tokens: empty token set");
  Var tokens = encoder_(in_proj_(z));
  Var u = sigmoid(reshape(conf_head_(tokens), {tokens->val.dim(0)}));
  return {tokens, u};
}

Var VectorEncoder::predict_pose(const Var& points, const Var& bev) const {
  Var mean_pt = mean_axis(points, 0, false);  // [2]
  Var mean_bev = mean_axis(bev, 0, false);    // [C]
  Var feat = reshape(concat({mean_pt, mean_bev}, 0), {1, cfg_.dim + 2});
  Var h = gelu(reg_fc1_(feat));
  return reshape(reg_fc2_(h), {3});
}

Var VectorEncoder::se2_regularizer(const Var& pose) const {
  Var t = slice(pose, 0, 0, 2);
  Var th = slice(pose, 0, 2, 1);
  Var t2 = sum_all(mul(t, t));
  Var th2 = sum_all(mul(th, th));
  return add(mul_scalar(t2, cfg_.lambda_t), mul_scalar(th2, cfg_.lambda_r));
}

VectorEncoder::SourceResult VectorEncoder::encode_source(
    const Var& bev, const VectorSourceInput& src, SourceId id,
    const Var& pose_override) const {
  SourceResult res;
  const std::int64_t hw = bev->val.dim(0);
  if (!src.present || src.count == 0) {
    // Absent or locally-empty source: defined as the all-zero token matrix.
    res.y = constant(Tensor({hw, cfg_.dim}));
    return res;
  }
  res.pose = pose_override ? pose_override : predict_pose(src.points, bev);
  res.se2_reg = se2_regularizer(res.pose);
  Var corrected = geom::se2_apply_var(res.pose, src.points);
  Var z = tokenize(corrected, src.categories, id);
  auto [tokens, conf] = encode_tokens(z);
  res.tokens = tokens;
  res.confidence = conf;
  const int s = (id == SourceId::HD) ? 0 : 1;
  Var bias = log_op(clamp(conf, cfg_.eps, 1.0));
  Var attn = multihead_attention(wq_(bev), wk_[s](tokens), wv_[s](tokens),
                                 cfg_.heads, bias);
  res.y = wo_[s](attn);
  return res;
}

VectorEncoder::FrameResult VectorEncoder::forward(
    const Var& bev, const VectorSourceInput& hd, const VectorSourceInput& sd,
    const Var& hd_pose_override, const Var& sd_pose_override) const {
  validate(bev->val.ndim() == 2 && bev->val.dim(1) == cfg_.dim,
           "vector forward: bev must be [HW, C]");
  FrameResult out;
  if (!hd.present && !sd.present) {
    // Both absent: identity passthrough keeps the no-vector-prior baseline.
    out.y_fused = bev;
    out.passthrough = true;
    return out;
  }
  out.per_source[0] = encode_source(bev, hd, SourceId::HD, hd_pose_override);
  out.per_source[1] = encode_source(bev, sd, SourceId::SD, sd_pose_override);
  for (const auto& sr : out.per_source)
    if (sr.se2_reg)
      out.se2_reg = out.se2_reg ? add(out.se2_reg, sr.se2_reg) : sr.se2_reg;

  // Presence-normalized channel-wise gates over pooled token evidence.
  Var pooled_hd = mean_axis(out.per_source[0].y, 0, false);  // [C]
  Var pooled_sd = mean_axis(out.per_source[1].y, 0, false);
  Var logits = gate_fc2_(
      gelu(gate_fc1_(reshape(concat({pooled_hd, pooled_sd}, 0),
                             {1, 2 * cfg_.dim}))));
  Var l_hd = slice(logits, 1, 0, cfg_.dim);
  Var l_sd = slice(logits, 1, cfg_.dim, cfg_.dim);
  const double log_pi_hd = std::log((hd.present ? 1.0 : 0.0) + cfg_.eps);
  const double log_pi_sd = std::log((sd.present ? 1.0 : 0.0) + cfg_.eps);
  Var stacked = concat({reshape(add_scalar(l_hd, log_pi_hd), {1, 1, cfg_.dim}),
                        reshape(add_scalar(l_sd, log_pi_sd), {1, 1, cfg_.dim})},
                       1);
  Var gates = softmax(stacked, 1);  // [1, 2, C]
  out.gates = reshape(gates, {2, cfg_.dim});
  Var g_hd = reshape(slice(gates, 1, 0, 1), {1, cfg_.dim});
  Var g_sd = reshape(slice(gates, 1, 1, 1), {1, cfg_.dim});
  out.y_fused = add(mul(g_hd, out.per_source[0].y),
                    mul(g_sd, out.per_source[1].y));
  return out;
}

}  // namespace umpe
