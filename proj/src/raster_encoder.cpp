// SPDX-License-Identifier: Apache-2.0

#include "umpe/raster_encoder.hpp"

#include <cmath>

namespace umpe {

using namespace nn;

Var flatten_hw(const Var& fmap) {
  const auto& s = fmap->val.shape();
  validate(s.size() == 4, "flatten_hw expects [B,C,H,W]");
  return transpose_last2(reshape(fmap, {s[0], s[1], s[2] * s[3]}));
}

Var unflatten_hw(const Var& tokens, std::int64_t h, std::int64_t w) {
  const auto& s = tokens->val.shape();
  validate(s.size() == 3 && s[1] == h * w, "unflatten_hw shape mismatch");
  return reshape(transpose_last2(tokens), {s[0], s[2], h, w});
}

RasterEncoder::RasterEncoder(nn::ParamStore& ps, const std::string& prefix,
                             const RasterEncoderConfig& cfg)
    : cfg_(cfg) {
  validate(!cfg.widths.empty(), "backbone needs at least one stage");
  emb_fc1_ = Linear(ps, prefix + ".emb.fc1", 2, cfg.embed_dim);
  emb_fc2_ = Linear(ps, prefix + ".emb.fc2", cfg.embed_dim, cfg.embed_dim);
  std::int64_t cin = 3;
  const auto widths = cfg.identity_backbone
                          ? std::vector<std::int64_t>{cfg.dim}
                          : cfg.widths;
  const std::int64_t k = cfg.identity_backbone ? 1 : 3;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const std::string sp = prefix + ".s" + std::to_string(i);
    Stage st;
    const std::int64_t w = widths[i];
    st.down_w = ps.create(sp + ".down.w", {w, cin, k, k}, Init::XavierUniform);
    st.down_b = ps.create(sp + ".down.b", {w}, Init::Zero);
    st.res1_w = ps.create(sp + ".res1.w", {w, w, k, k}, Init::XavierUniform);
    st.res1_b = ps.create(sp + ".res1.b", {w}, Init::Zero);
    st.res2_w = ps.create(sp + ".res2.w", {w, w, k, k}, Init::XavierUniform);
    st.res2_b = ps.create(sp + ".res2.b", {w}, Init::Zero);
    // Zero-init FiLM: modulation starts as the identity for every source.
    st.film_proj = Linear(ps, sp + ".film", cfg.embed_dim, 2 * w, true,
                          Init::Zero);
    stages_.push_back(std::move(st));
    cin = w;
  }
  proj_w = ps.create(prefix + ".proj.w", {cfg.dim, cin, 1, 1},
                     Init::XavierUniform);
  proj_b = ps.create(prefix + ".proj.b", {cfg.dim}, Init::Zero);
  reg_fc1_ = Linear(ps, prefix + ".se2.fc1", 2 * cfg.dim, cfg.regressor_hidden);
  reg_fc2_ = Linear(ps, prefix + ".se2.fc2", cfg.regressor_hidden, 3, true,
                    Init::Zero);
  gate_fc1_ = Linear(ps, prefix + ".gate.fc1",
                     cfg.feature_gate ? 2 * cfg.dim : 2 * cfg.embed_dim,
                     2 * cfg.dim);
  gate_fc2_ = Linear(ps, prefix + ".gate.fc2", 2 * cfg.dim, 2 * cfg.dim);
}

Var RasterEncoder::film(const Var& a, const Var& gamma_beta) {
  const auto& s = a->val.shape();
  validate(s.size() == 4, "film expects [B,C,H,W]");
  const std::int64_t c = s[1];
  validate(gamma_beta->val.numel() == 2 * c, "film parameter size mismatch");
  Var gamma = reshape(slice(gamma_beta, 0, 0, c), {1, c, 1, 1});
  Var beta = reshape(slice(gamma_beta, 0, c, c), {1, c, 1, 1});
  return add(mul(a, add_scalar(gamma, 1.0)), beta);
}

Var RasterEncoder::source_embedding(SourceId src) const {
  validate(src == SourceId::Sat || src == SourceId::RSD,
           "raster source embedding expects sat or rsd");
  Tensor onehot({1, 2});
  onehot[src == SourceId::Sat ? 0 : 1] = 1.0;
  Var c = emb_fc2_(gelu(emb_fc1_(constant(std::move(onehot)))));
  return reshape(c, {cfg_.embed_dim});
}

Var RasterEncoder::backbone(const Var& img, const Var& cond) const {
  const std::int64_t stride = cfg_.identity_backbone ? 1 : 2;
  const std::int64_t pad = cfg_.identity_backbone ? 0 : 1;
  Var h = img;
  for (const auto& st : stages_) {
    h = gelu(conv2d(h, st.down_w, st.down_b, stride, pad));
    Var r = conv2d(gelu(conv2d(h, st.res1_w, st.res1_b, 1, pad)), st.res2_w,
                   st.res2_b, 1, pad);
    h = gelu(add(h, r));
    h = film(h, reshape(st.film_proj(reshape(cond, {1, cfg_.embed_dim})),
                        {2 * st.down_w->val.dim(0)}));
  }
  return h;
}

Var RasterEncoder::encode_raster(const Var& img, SourceId src) const {
  const auto& s = img->val.shape();
  validate(s.size() == 4 && s[1] == 3, "encode_raster expects [B,3,H,W]");
  Var cond = source_embedding(src);
  Var feat = backbone(img, cond);
  Var proj = conv2d(feat, proj_w, proj_b, 1, 0);
  return bilinear_resize(proj, s[2], s[3]);
}

RasterEncoder::AlignResult RasterEncoder::micro_align(
    const Var& fmap, const Var& bev_ref, const geom::BEVGridSpec& grid,
    const Var& pose_override, const std::vector<double>* reg_weights) const {
  const auto& s = fmap->val.shape();
  validate(s.size() == 4 && s[1] == cfg_.dim, "micro_align expects [B,C,H,W]");
  const std::int64_t b = s[0];
  validate(bev_ref->val.ndim() == 3 && bev_ref->val.dim(0) == b,
           "micro_align: bev_ref must be [B,HW,C]");
  AlignResult out;
  if (pose_override) {
    validate(pose_override->val.numel() == b * 3, "pose override must be [B*3]");
    out.pose = pose_override;
  } else {
    Var pooled_f = mean_axis(mean_axis(fmap, 3, false), 2, false);  // [B,C]
    Var pooled_bev = mean_axis(bev_ref, 1, false);                  // [B,C]
    Var h = gelu(reg_fc1_(concat({pooled_f, pooled_bev}, 1)));
    out.pose = reshape(reg_fc2_(h), {b * 3});  // zero-init head: identity
  }
  // Per-frame normalized affines, Eq.-7 layout.
  std::vector<Var> thetas;
  std::vector<Var> regs;
  thetas.reserve(static_cast<std::size_t>(b));
  for (std::int64_t i = 0; i < b; ++i) {
    Var pose_i = slice(out.pose, 0, i * 3, 3);
    thetas.push_back(geom::affine_theta_var(pose_i, grid));
    Var t = slice(pose_i, 0, 0, 2);
    Var th = slice(pose_i, 0, 2, 1);
    Var reg_i = add(mul_scalar(sum_all(mul(t, t)), cfg_.lambda_t),
                    mul_scalar(sum_all(mul(th, th)), cfg_.lambda_r));
    if (reg_weights)
      reg_i = mul_scalar(reg_i, (*reg_weights)[static_cast<std::size_t>(i)]);
    regs.push_back(reg_i);
  }
  Var theta = thetas.size() == 1 ? thetas[0] : concat(thetas, 0);
  out.se2_reg = regs.size() == 1 ? regs[0] : sum_all(concat(regs, 0));
  out.aligned = affine_warp(fmap, theta);
  out.tokens = flatten_hw(out.aligned);
  return out;
}

RasterEncoder::FrameResult RasterEncoder::forward(
    const Var& bev_ref, const Var& sat_img, const Var& rsd_img,
    const std::vector<std::array<bool, 2>>& presence,
    const geom::BEVGridSpec& grid, const Var& sat_pose_override,
    const Var& rsd_pose_override) const {
  FrameResult out;
  const std::int64_t b = static_cast<std::int64_t>(presence.size());
  bool any_sat = false, any_rsd = false;
  for (const auto& p : presence) {
    any_sat |= p[0];
    any_rsd |= p[1];
  }
  if (!any_sat && !any_rsd) {
    out.absent = true;
    return out;
  }
  const std::int64_t hw = grid.h * grid.w;
  auto run_source = [&](const Var& img, SourceId id, const Var& override_pose,
                        bool any, int slot) -> AlignResult {
    AlignResult r;
    if (!any) {
      r.tokens = constant(Tensor({b, hw, cfg_.dim}));
      return r;
    }
    std::vector<double> weights(static_cast<std::size_t>(b));
    for (std::int64_t i = 0; i < b; ++i)
      weights[static_cast<std::size_t>(i)] =
          presence[static_cast<std::size_t>(i)][static_cast<std::size_t>(slot)]
              ? 1.0
              : 0.0;
    Var fmap = encode_raster(img, id);
    return micro_align(fmap, bev_ref, grid, override_pose, &weights);
  };
  out.per_source[0] =
      run_source(sat_img, SourceId::Sat, sat_pose_override, any_sat, 0);
  out.per_source[1] =
      run_source(rsd_img, SourceId::RSD, rsd_pose_override, any_rsd, 1);
  for (const auto& sr : out.per_source)
    if (sr.se2_reg)
      out.se2_reg = out.se2_reg ? add(out.se2_reg, sr.se2_reg) : sr.se2_reg;

  // Gates: evidence from pooled post-alignment tokens (Feagate) or from the
  // source embeddings alone (Congate ablation).
  Var evidence;
  if (cfg_.feature_gate) {
    Var pooled_sat = mean_axis(out.per_source[0].tokens, 1, false);  // [B,C]
    Var pooled_rsd = mean_axis(out.per_source[1].tokens, 1, false);
    evidence = concat({pooled_sat, pooled_rsd}, 1);  // [B,2C]
  } else {
    Var e = reshape(concat({source_embedding(SourceId::Sat),
                            source_embedding(SourceId::RSD)},
                           0),
                    {1, 2 * cfg_.embed_dim});
    // Same conditioning row for every frame.
    std::vector<Var> rows(static_cast<std::size_t>(b), e);
    evidence = b == 1 ? e : concat(rows, 0);
  }
  Var logits = gate_fc2_(gelu(gate_fc1_(evidence)));  // [B,2C]
  Var l_sat = reshape(slice(logits, 1, 0, cfg_.dim), {b, 1, cfg_.dim});
  Var l_rsd = reshape(slice(logits, 1, cfg_.dim, cfg_.dim), {b, 1, cfg_.dim});
  Tensor pi_sat({b, 1, 1}), pi_rsd({b, 1, 1});
  for (std::int64_t i = 0; i < b; ++i) {
    pi_sat[i] = std::log((presence[static_cast<std::size_t>(i)][0] ? 1.0 : 0.0) +
                         cfg_.eps);
    pi_rsd[i] = std::log((presence[static_cast<std::size_t>(i)][1] ? 1.0 : 0.0) +
                         cfg_.eps);
  }
  Var stacked = concat({add(l_sat, constant(std::move(pi_sat))),
                        add(l_rsd, constant(std::move(pi_rsd)))},
                       1);               // [B,2,C]
  Var gates = softmax(stacked, 1);
  out.gates = gates;
  Var g_sat = reshape(slice(gates, 1, 0, 1), {b, 1, cfg_.dim});
  Var g_rsd = reshape(slice(gates, 1, 1, 1), {b, 1, cfg_.dim});
  out.z_fused = add(mul(g_sat, out.per_source[0].tokens),
                    mul(g_rsd, out.per_source[1].tokens));
  return out;
}

}  // namespace umpe
