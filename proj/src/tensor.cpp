// SPDX-License-Identifier: Apache-2.0

#include "umpe/tensor.hpp"

#include <Eigen/Core>

#include <cmath>
#include <sstream>

namespace umpe::nn {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) {
    validate(d >= 0, "negative dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape shape)
    : shape_(std::move(shape)), numel_(shape_numel(shape_)) {
  data_.assign(static_cast<std::size_t>(numel_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)),
      numel_(shape_numel(shape_)) {
  validate(static_cast<std::int64_t>(data_.size()) == numel_,
           "data size does not match shape " + shape_str(shape_));
}

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  for (auto& x : t.data_) x = v;
  return t;
}

std::int64_t Tensor::dim(std::int64_t i) const {
  if (i < 0) i += ndim();
  validate(i >= 0 && i < ndim(), "dim index out of range");
  return shape_[static_cast<std::size_t>(i)];
}

Tensor Tensor::reshaped(Shape new_shape) const {
  validate(shape_numel(new_shape) == numel_,
           "reshape " + shape_str(shape_) + " -> " + shape_str(new_shape) +
               " changes element count");
  return Tensor(std::move(new_shape), data_);
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t nd = std::max(a.size(), b.size());
  Shape out(nd, 1);
  for (std::size_t i = 0; i < nd; ++i) {
    std::int64_t da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
    std::int64_t db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
    validate(da == db || da == 1 || db == 1,
             "shapes not broadcastable: " + shape_str(a) + " vs " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

Tensor reduce_to_shape(const Tensor& t, const Shape& target) {
  if (t.shape() == target) return t;
  const std::int64_t nd = t.ndim();
  const std::int64_t tnd = static_cast<std::int64_t>(target.size());
  validate(tnd <= nd, "reduce_to_shape target has more dims than source");
  Tensor out(target);
  std::vector<std::int64_t> tstride(nd, 0);
  {
    std::int64_t stride = 1;
    for (std::int64_t d = tnd - 1; d >= 0; --d) {
      std::int64_t sd = d + nd - tnd;
      validate(target[d] == t.dim(sd) || target[d] == 1,
               "reduce_to_shape: incompatible target");
      tstride[sd] = (target[d] == 1) ? 0 : stride;
      stride *= target[d];
    }
  }
  std::vector<std::int64_t> idx(nd, 0);
  const double* ps = t.data();
  double* po = out.data();
  std::int64_t off = 0;
  const std::int64_t n = t.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    po[off] += ps[i];
    for (std::int64_t d = nd - 1; d >= 0; --d) {
      ++idx[d];
      off += tstride[d];
      if (idx[d] < t.dim(d)) break;
      off -= tstride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return out;
}

void gemm(const double* a, const double* b, double* c, std::int64_t m,
          std::int64_t k, std::int64_t n, bool trans_a, bool trans_b,
          bool accumulate) {
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  using MMap = Eigen::Map<Mat>;
  MMap C(c, m, n);
  auto run = [&](const auto& A, const auto& B) {
    if (accumulate)
      C.noalias() += A * B;
    else
      C.noalias() = A * B;
  };
  if (!trans_a && !trans_b)
    run(CMap(a, m, k), CMap(b, k, n));
  else if (trans_a && !trans_b)
    run(CMap(a, k, m).transpose(), CMap(b, k, n));
  else if (!trans_a && trans_b)
    run(CMap(a, m, k), CMap(b, n, k).transpose());
  else
    run(CMap(a, k, m).transpose(), CMap(b, n, k).transpose());
}

}  // namespace umpe::nn
