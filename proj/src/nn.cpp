// SPDX-License-Identifier: Apache-2.0

#include "umpe/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace umpe::nn {

Var ParamStore::create(const std::string& name, Shape shape, Init init) {
  for (const auto& [n, v] : items_)
    validate(n != name, "duplicate parameter name: " + name);
  Tensor t(shape);
  switch (init) {
    case Init::Zero:
      break;
    case Init::One:
      for (auto& x : t.vec()) x = 1.0;
      break;
    case Init::XavierUniform: {
      validate(shape.size() >= 2, "xavier init needs rank >= 2: " + name);
      const double fan_in = static_cast<double>(shape[shape.size() - 2]);
      const double fan_out = static_cast<double>(shape[shape.size() - 1]);
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      for (auto& x : t.vec()) x = rng_.uniform(-limit, limit);
      break;
    }
  }
  Var v = leaf(std::move(t));
  items_.emplace_back(name, v);
  return v;
}

Var ParamStore::find(const std::string& name) const {
  for (const auto& [n, v] : items_)
    if (n == name) return v;
  throw ValidationError("parameter not found: " + name);
}

std::int64_t ParamStore::total_elements() const {
  std::int64_t n = 0;
  for (const auto& [nm, v] : items_) n += v->val.numel();
  return n;
}

std::uint64_t ParamStore::weight_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [nm, v] : items_) {
    h = fnv1a64(nm, h);
    h = fnv1a64(v->val.data(), sizeof(double) * v->val.numel(), h);
  }
  return h;
}

void ParamStore::zero_grads() {
  for (auto& [n, v] : items_) v->zero_grad();
}

Linear::Linear(ParamStore& ps, const std::string& prefix, std::int64_t in,
               std::int64_t out, bool bias, Init init) {
  w = ps.create(prefix + ".w", {in, out}, init);
  if (bias) b = ps.create(prefix + ".b", {out}, Init::Zero);
}

Var Linear::operator()(const Var& x) const {
  Var y = matmul(x, w);
  return b ? add(y, b) : y;
}

LayerNorm::LayerNorm(ParamStore& ps, const std::string& prefix,
                     std::int64_t dim) {
  gamma = ps.create(prefix + ".gamma", {dim}, Init::One);
  beta = ps.create(prefix + ".beta", {dim}, Init::Zero);
}

Var multihead_attention(const Var& q, const Var& k, const Var& v,
                        std::int64_t heads, const Var& key_bias) {
  const std::int64_t c = q->val.dim(-1);
  validate(c % heads == 0, "head count must divide token width");
  const std::int64_t d = c / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Var bias_row;
  if (key_bias) {
    // [Nk] -> [1, Nk]: broadcast over query rows within each head.
    bias_row = reshape(key_bias, {1, key_bias->val.numel()});
  }
  std::vector<Var> head_outs;
  head_outs.reserve(heads);
  for (std::int64_t hh = 0; hh < heads; ++hh) {
    Var qh = slice(q, 1, hh * d, d);
    Var kh = slice(k, 1, hh * d, d);
    Var vh = slice(v, 1, hh * d, d);
    Var logits = mul_scalar(matmul(qh, transpose_last2(kh)), scale);
    if (bias_row) logits = add(logits, bias_row);
    head_outs.push_back(matmul(softmax(logits, -1), vh));
  }
  return concat(head_outs, 1);
}

TransformerEncoder::TransformerEncoder(ParamStore& ps,
                                       const std::string& prefix,
                                       std::int64_t depth, std::int64_t dim,
                                       std::int64_t n_heads,
                                       std::int64_t ff_dim)
    : heads(n_heads) {
  layers.resize(static_cast<std::size_t>(depth));
  for (std::int64_t i = 0; i < depth; ++i) {
    const std::string lp = prefix + ".l" + std::to_string(i);
    Layer& l = layers[static_cast<std::size_t>(i)];
    l.ln1 = LayerNorm(ps, lp + ".ln1", dim);
    l.ln2 = LayerNorm(ps, lp + ".ln2", dim);
    l.wq = Linear(ps, lp + ".wq", dim, dim);
    l.wk = Linear(ps, lp + ".wk", dim, dim);
    l.wv = Linear(ps, lp + ".wv", dim, dim);
    l.wo = Linear(ps, lp + ".wo", dim, dim);
    l.ff1 = Linear(ps, lp + ".ff1", dim, ff_dim);
    l.ff2 = Linear(ps, lp + ".ff2", ff_dim, dim);
  }
  final_ln = LayerNorm(ps, prefix + ".ln_f", dim);
}

Var TransformerEncoder::operator()(const Var& x) const {
  Var h = x;
  for (const auto& l : layers) {
    Var n1 = l.ln1(h);
    Var attn =
        multihead_attention(l.wq(n1), l.wk(n1), l.wv(n1), heads, nullptr);
    h = add(h, l.wo(attn));
    Var n2 = l.ln2(h);
    h = add(h, l.ff2(gelu(l.ff1(n2))));
  }
  return final_ln(h);
}

Adam::Adam(const std::vector<std::pair<std::string, Var>>& params,
           const std::vector<std::string>& group_names,
           const std::function<int(const std::string&)>& group_of,
           AdamConfig cfg)
    : group_names_(group_names), lrs_(group_names.size(), 0.0), cfg_(cfg) {
  slots_.reserve(params.size());
  for (const auto& [name, p] : params) {
    const int g = group_of(name);
    validate(g >= 0 && g < static_cast<int>(group_names_.size()),
             "parameter '" + name + "' assigned to no optimizer group");
    slots_.push_back({p, Tensor(p->val.shape()), Tensor(p->val.shape()), g});
  }
}

void Adam::set_lr(const std::string& group, double lr) {
  for (std::size_t i = 0; i < group_names_.size(); ++i)
    if (group_names_[i] == group) {
      lrs_[i] = lr;
      return;
    }
  throw ValidationError("unknown optimizer group: " + group);
}

double Adam::lr(const std::string& group) const {
  for (std::size_t i = 0; i < group_names_.size(); ++i)
    if (group_names_[i] == group) return lrs_[i];
  throw ValidationError("unknown optimizer group: " + group);
}

std::int64_t Adam::group_size(int g) const {
  std::int64_t n = 0;
  for (const auto& s : slots_)
    if (s.group == g) ++n;
  return n;
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& s : slots_) {
    const double lr = lrs_[static_cast<std::size_t>(s.group)];
    double* p = s.p->val.data();
    double* m = s.m.data();
    double* v = s.v.data();
    const std::int64_t n = s.p->val.numel();
    const bool has_g = s.p->has_grad();
    const double* g = has_g ? s.p->grad.data() : nullptr;
    for (std::int64_t i = 0; i < n; ++i) {
      const double gi = has_g ? g[i] : 0.0;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                    cfg_.weight_decay * p[i]);
    }
  }
}

void Adam::zero_grads() {
  for (auto& s : slots_) s.p->zero_grad();
}

// --- checkpoint format ---
// "UMPECKP1" | u64 config_hash | u32 rev_len | rev | u32 n_extra |
//   { u32 klen, key, f64 value }* | u32 n_params |
//   { u32 nlen, name, u32 ndim, i64 dims[], f64 data[] }*

namespace {

constexpr char kMagic[8] = {'U', 'M', 'P', 'E', 'C', 'K', 'P', '1'};

template <typename T>
void put(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  validate(static_cast<bool>(is), "truncated checkpoint");
  return v;
}

void put_str(std::ofstream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_str(std::ifstream& is) {
  const auto n = get<std::uint32_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  validate(static_cast<bool>(is), "truncated checkpoint");
  return s;
}

CheckpointMeta read_meta(std::ifstream& is) {
  char magic[8];
  is.read(magic, 8);
  validate(static_cast<bool>(is) && std::memcmp(magic, kMagic, 8) == 0,
           "not a checkpoint file");
  CheckpointMeta meta;
  meta.config_hash = get<std::uint64_t>(is);
  meta.git_rev = get_str(is);
  const auto n_extra = get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_extra; ++i) {
    std::string k = get_str(is);
    meta.extra[k] = get<double>(is);
  }
  return meta;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& ps,
                     const CheckpointMeta& meta) {
  std::ofstream os(path, std::ios::binary);
  validate(static_cast<bool>(os), "cannot open checkpoint for writing: " + path);
  os.write(kMagic, 8);
  put<std::uint64_t>(os, meta.config_hash);
  put_str(os, meta.git_rev);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(meta.extra.size()));
  for (const auto& [k, v] : meta.extra) {
    put_str(os, k);
    put<double>(os, v);
  }
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ps.items().size()));
  for (const auto& [name, v] : ps.items()) {
    put_str(os, name);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(v->val.ndim()));
    for (auto d : v->val.shape()) put<std::int64_t>(os, d);
    os.write(reinterpret_cast<const char*>(v->val.data()),
             static_cast<std::streamsize>(sizeof(double) * v->val.numel()));
  }
  validate(static_cast<bool>(os), "checkpoint write failed: " + path);
}

CheckpointMeta load_checkpoint(const std::string& path, ParamStore& ps) {
  std::ifstream is(path, std::ios::binary);
  validate(static_cast<bool>(is), "cannot open checkpoint: " + path);
  CheckpointMeta meta = read_meta(is);
  const auto n = get<std::uint32_t>(is);
  validate(n == ps.items().size(),
           "checkpoint parameter count does not match model");
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = get_str(is);
    const auto nd = get<std::uint32_t>(is);
    Shape shape(nd);
    for (auto& d : shape) d = get<std::int64_t>(is);
    Var v = ps.find(name);
    validate(v->val.shape() == shape,
             "checkpoint shape mismatch for " + name);
    is.read(reinterpret_cast<char*>(v->val.data()),
            static_cast<std::streamsize>(sizeof(double) * v->val.numel()));
    validate(static_cast<bool>(is), "truncated checkpoint at " + name);
  }
  return meta;
}

CheckpointMeta read_checkpoint_meta(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  validate(static_cast<bool>(is), "cannot open checkpoint: " + path);
  return read_meta(is);
}

}  // namespace umpe::nn
