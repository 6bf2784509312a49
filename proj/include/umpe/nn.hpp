// SPDX-License-Identifier: Apache-2.0
//
// Small module zoo on top of the autodiff graph: named parameters, linear /
// layer-norm / attention blocks, the Adam optimizer with parameter groups,
// and checkpoint serialization.

#pragma once

#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "umpe/autodiff.hpp"
#include "umpe/rng.hpp"

namespace umpe::nn {

enum class Init { Zero, XavierUniform, One };

/// Owns every trainable parameter of a model, in registration order.
/// Names are hierarchical ("vector.enc.l0.attn.wq") so optimizers can form
/// groups and checkpoints can match by name.
class ParamStore {
public:
  explicit ParamStore(std::uint64_t seed) : rng_(seed) {}

  Var create(const std::string& name, Shape shape, Init init);
  const std::vector<std::pair<std::string, Var>>& items() const { return items_; }
  Var find(const std::string& name) const;
  std::int64_t total_elements() const;
  std::uint64_t weight_hash() const;
  void zero_grads();

private:
  RngStream rng_;
  std::vector<std::pair<std::string, Var>> items_;
};

struct Linear {
  Var w;  // [in, out]
  Var b;  // [out], may be null

  Linear() = default;
  Linear(ParamStore& ps, const std::string& prefix, std::int64_t in,
         std::int64_t out, bool bias = true, Init init = Init::XavierUniform);
  Var operator()(const Var& x) const;
};

struct LayerNorm {
  Var gamma, beta;

  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& prefix, std::int64_t dim);
  Var operator()(const Var& x) const { return layer_norm(x, gamma, beta); }
};

/// Scaled dot-product attention over pre-projected tokens.
/// q:[Nq,C] k,v:[Nk,C], heads*head_dim == C. `key_bias` ([Nk] or null) is
/// added to every logit row, i.e. broadcast along queries and heads.
Var multihead_attention(const Var& q, const Var& k, const Var& v,
                        std::int64_t heads, const Var& key_bias);

/// Pre-norm transformer encoder (self-attention over a token set, no
/// positional encoding, hence permutation-equivariant).
struct TransformerEncoder {
  struct Layer {
    LayerNorm ln1, ln2;
    Linear wq, wk, wv, wo;
    Linear ff1, ff2;
  };
  std::vector<Layer> layers;
  LayerNorm final_ln;
  std::int64_t heads = 0;

  TransformerEncoder() = default;
  TransformerEncoder(ParamStore& ps, const std::string& prefix,
                     std::int64_t depth, std::int64_t dim, std::int64_t heads,
                     std::int64_t ff_dim);
  Var operator()(const Var& x) const;  // [N,C] -> [N,C]
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Adam with decoupled weight decay and named parameter groups. Every
/// parameter must land in exactly one group (audited at construction).
class Adam {
public:
  Adam(const std::vector<std::pair<std::string, Var>>& params,
       const std::vector<std::string>& group_names,
       const std::function<int(const std::string&)>& group_of,
       AdamConfig cfg = {});

  void set_lr(const std::string& group, double lr);
  double lr(const std::string& group) const;
  void step();
  void zero_grads();
  std::int64_t steps_taken() const { return t_; }
  const std::vector<std::string>& groups() const { return group_names_; }
  std::int64_t group_size(int g) const;  // parameter tensors in group g

private:
  struct Slot {
    Var p;
    Tensor m, v;
    int group;
  };
  std::vector<Slot> slots_;
  std::vector<std::string> group_names_;
  std::vector<double> lrs_;
  AdamConfig cfg_;
  std::int64_t t_ = 0;
};

struct CheckpointMeta {
  std::uint64_t config_hash = 0;
  std::string git_rev;
  std::map<std::string, double> extra;  // epoch, alpha, seed, ...
};

void save_checkpoint(const std::string& path, const ParamStore& ps,
                     const CheckpointMeta& meta);
/// Loads by exact name match into an already-constructed store; throws on
/// any missing or shape-mismatched tensor.
CheckpointMeta load_checkpoint(const std::string& path, ParamStore& ps);
CheckpointMeta read_checkpoint_meta(const std::string& path);

}  // namespace umpe::nn
