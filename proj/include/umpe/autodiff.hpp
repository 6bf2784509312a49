// SPDX-License-Identifier: Apache-2.0
//
// Tape-free reverse-mode autodiff over Tensor. Ops build a DAG of Nodes;
// backward() topologically sorts from a scalar root and pulls gradients
// into every node that requires them. Graphs are rebuilt per forward pass;
// leaves (parameters, probed inputs) persist across passes.

#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "umpe/tensor.hpp"

namespace umpe::nn {

class Node;
using Var = std::shared_ptr<Node>;

class Node {
public:
  Tensor val;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  bool has_grad() const { return grad.numel() == val.numel() && val.numel() > 0; }
  void add_grad(const Tensor& g);
  void zero_grad() { grad = Tensor(); }
};

/// Leaf that participates in differentiation (parameters, probed inputs).
Var leaf(Tensor t);
/// Leaf that does not (data, masks, constants).
Var constant(Tensor t);
Var constant_scalar(double v);

/// Internal: wraps an op result. Drops parents when nothing requires grad.
Var op_node(Tensor val, std::vector<Var> parents,
            std::function<void(Node&)> backward);

/// Reverse pass from a scalar root (numel == 1).
void backward(const Var& root);

// --- elementwise / broadcast ---
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var log_op(const Var& a);
Var exp_op(const Var& a);
Var sqrt_op(const Var& a);
Var sigmoid(const Var& a);
Var gelu(const Var& a);
Var tanh_op(const Var& a);
Var sin_op(const Var& a);
Var cos_op(const Var& a);
Var abs_op(const Var& a);
Var clamp(const Var& a, double lo, double hi);

// --- shape ---
Var reshape(const Var& a, Shape s);
Var transpose_last2(const Var& a);
Var slice(const Var& a, std::int64_t axis, std::int64_t start, std::int64_t len);
Var concat(const std::vector<Var>& xs, std::int64_t axis);

// --- reductions ---
Var sum_axis(const Var& a, std::int64_t axis, bool keepdim);
Var mean_axis(const Var& a, std::int64_t axis, bool keepdim);
Var sum_all(const Var& a);   // -> shape {1}
Var mean_all(const Var& a);  // -> shape {1}

// --- linear algebra ---
/// [m,k]@[k,n], [B,m,k]@[B,k,n], or [B,m,k]@[k,n].
Var matmul(const Var& a, const Var& b);

// --- fused NN ops ---
Var softmax(const Var& a, std::int64_t axis);
/// LayerNorm over the last axis; gamma/beta shaped [C].
Var layer_norm(const Var& x, const Var& gamma, const Var& beta,
               double eps = 1e-5);
/// x:[B,Cin,H,W] w:[Cout,Cin,kh,kw] b:[Cout] (may be null).
Var conv2d(const Var& x, const Var& w, const Var& b, std::int64_t stride,
           std::int64_t pad);
/// Align-corners bilinear resize of [B,C,H,W] to (oh, ow).
Var bilinear_resize(const Var& x, std::int64_t oh, std::int64_t ow);
/// Align-corners bilinear warp with zeros padding. x:[B,C,H,W],
/// theta:[B,2,3] over normalized output coords (Eq.-style 2x3 affine).
Var affine_warp(const Var& x, const Var& theta);
/// Mean binary cross-entropy on logits; positives weighted by pos_weight.
Var bce_with_logits(const Var& logits, const Var& targets,
                    double pos_weight = 1.0);

// --- finite-difference harness ---
struct GradCheckResult {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::string worst;  // "leaf[i]" label of the worst element
  bool pass(double rtol) const { return max_rel_err < rtol; }
};

/// Compares analytic gradients of f() (a scalar Var rebuilt per call) against
/// central differences for every element of every probe leaf.
GradCheckResult grad_check(const std::function<Var()>& f,
                           const std::vector<std::pair<std::string, Var>>& probes,
                           double h = 1e-5);

}  // namespace umpe::nn
