// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major double tensor, the storage type behind the autodiff graph.
// Double precision throughout: the gradient-check suites compare analytic
// gradients against central finite differences at 1e-4 relative error, which
// float32 cannot support.

#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

#include "umpe/common.hpp"

namespace umpe::nn {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);

class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v);
  static Tensor scalar(double v) { return full({1}, v); }

  std::int64_t ndim() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t numel() const { return numel_; }
  std::int64_t dim(std::int64_t i) const;
  const Shape& shape() const { return shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // Convenience indexers for the common ranks.
  double& at2(std::int64_t i, std::int64_t j) { return data_[static_cast<std::size_t>(i * shape_[1] + j)]; }
  double at2(std::int64_t i, std::int64_t j) const { return data_[static_cast<std::size_t>(i * shape_[1] + j)]; }
  double& at3(std::int64_t i, std::int64_t j, std::int64_t k) {
    return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  double at3(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  double& at4(std::int64_t i, std::int64_t j, std::int64_t k, std::int64_t l) {
    return data_[static_cast<std::size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }
  double at4(std::int64_t i, std::int64_t j, std::int64_t k, std::int64_t l) const {
    return data_[static_cast<std::size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  Tensor reshaped(Shape new_shape) const;

  bool all_finite() const;
  double max_abs() const;

private:
  Shape shape_;
  std::vector<double> data_;
  std::int64_t numel_ = 0;
};

std::int64_t shape_numel(const Shape& s);

/// NumPy-style broadcast of two shapes; throws ValidationError on mismatch.
Shape broadcast_shapes(const Shape& a, const Shape& b);

/// Elementwise op with broadcasting. F: double(double, double).
template <typename F>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, F&& f);

/// Sum `t` down to `target` shape (inverse of broadcasting), for backward.
Tensor reduce_to_shape(const Tensor& t, const Shape& target);

/// C[m,n] += or = A[m,k] @ B[k,n], optionally transposing either input.
/// Backed by Eigen; `accumulate` adds into C instead of overwriting.
void gemm(const double* a, const double* b, double* c, std::int64_t m,
          std::int64_t k, std::int64_t n, bool trans_a, bool trans_b,
          bool accumulate);

// --- template impl ---

template <typename F>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, F&& f) {
  if (a.same_shape(b)) {  // fast path
    Tensor out(a.shape());
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
    return out;
  }
  Shape os = broadcast_shapes(a.shape(), b.shape());
  Tensor out(os);
  const std::int64_t nd = static_cast<std::int64_t>(os.size());
  // Strides with 0 on broadcast axes.
  std::vector<std::int64_t> sa(nd, 0), sb(nd, 0), idx(nd, 0);
  {
    std::int64_t stride = 1;
    for (std::int64_t d = static_cast<std::int64_t>(a.ndim()) - 1; d >= 0; --d) {
      std::int64_t od = d + nd - a.ndim();
      sa[od] = (a.dim(d) == 1) ? 0 : stride;
      stride *= a.dim(d);
    }
    stride = 1;
    for (std::int64_t d = static_cast<std::int64_t>(b.ndim()) - 1; d >= 0; --d) {
      std::int64_t od = d + nd - b.ndim();
      sb[od] = (b.dim(d) == 1) ? 0 : stride;
      stride *= b.dim(d);
    }
  }
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const std::int64_t n = out.numel();
  std::int64_t oa = 0, ob = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    po[i] = f(pa[oa], pb[ob]);
    for (std::int64_t d = nd - 1; d >= 0; --d) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < os[d]) break;
      oa -= sa[d] * idx[d];
      ob -= sb[d] * idx[d];
      idx[d] = 0;
    }
  }
  return out;
}

}  // namespace umpe::nn
