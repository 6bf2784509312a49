// SPDX-License-Identifier: Apache-2.0

#include "umpe/geometry.hpp"

#include <cmath>

namespace umpe::geom {

double wrap_angle(double theta) {
  double a = std::remainder(theta, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;  // remainder may return exactly -pi
  return a;
}

BEVGridSpec BEVGridSpec::for_window(std::int64_t h, std::int64_t w) {
  validate(h >= 2 && w >= 2, "BEV grid dims must be >= 2");
  return {h, w, 2.0 * kXHalfExtent / static_cast<double>(w),
          2.0 * kYHalfExtent / static_cast<double>(h)};
}

BEVGridSpec BEVGridSpec::custom(std::int64_t h, std::int64_t w, double mpp_x,
                                double mpp_y) {
  validate(h >= 2 && w >= 2, "BEV grid dims must be >= 2");
  validate(mpp_x > 0 && mpp_y > 0, "meters-per-pixel must be positive");
  return {h, w, mpp_x, mpp_y};
}

Vec2 se2_apply(const Pose2& pose, const Vec2& p) {
  const double c = std::cos(pose.dtheta);
  const double s = std::sin(pose.dtheta);
  return {c * p.x - s * p.y + pose.dx, s * p.x + c * p.y + pose.dy};
}

PointArray se2_apply(const Pose2& pose, const PointArray& pts) {
  validate(std::isfinite(pose.dx) && std::isfinite(pose.dy) &&
               std::isfinite(pose.dtheta),
           "se2_apply: non-finite pose");
  const double c = std::cos(pose.dtheta);
  const double s = std::sin(pose.dtheta);
  PointArray out;
  out.reserve(pts.size());
  for (const Vec2& p : pts) {
    validate(std::isfinite(p.x) && std::isfinite(p.y),
             "se2_apply: non-finite point");
    out.push_back({c * p.x - s * p.y + pose.dx, s * p.x + c * p.y + pose.dy});
  }
  return out;
}

Pose2 se2_invert(const Pose2& pose) {
  const double c = std::cos(pose.dtheta);
  const double s = std::sin(pose.dtheta);
  // Inverse rotation applied to the negated translation.
  return Pose2{-(c * pose.dx + s * pose.dy), -(-s * pose.dx + c * pose.dy),
               wrap_angle(-pose.dtheta)};
}

Pose2 se2_compose(const Pose2& a, const Pose2& b) {
  const double c = std::cos(a.dtheta);
  const double s = std::sin(a.dtheta);
  return Pose2{c * b.dx - s * b.dy + a.dx, s * b.dx + c * b.dy + a.dy,
               wrap_angle(a.dtheta + b.dtheta)};
}

double polyline_length(const PointArray& pts) {
  double len = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    len += std::hypot(pts[i].x - pts[i - 1].x, pts[i].y - pts[i - 1].y);
  return len;
}

PointArray resample_polyline(const PointArray& pts, int p, bool* degenerate) {
  validate(pts.size() >= 2, "resample_polyline needs >= 2 points");
  validate(p >= 2, "resample_polyline needs P >= 2");
  if (degenerate) *degenerate = false;
  std::vector<double> cum(pts.size(), 0.0);
  for (std::size_t i = 1; i < pts.size(); ++i)
    cum[i] = cum[i - 1] +
             std::hypot(pts[i].x - pts[i - 1].x, pts[i].y - pts[i - 1].y);
  const double total = cum.back();
  if (total == 0.0) {
    if (degenerate) *degenerate = true;
    return PointArray(static_cast<std::size_t>(p), pts.front());
  }
  PointArray out(static_cast<std::size_t>(p));
  out.front() = pts.front();
  out.back() = pts.back();
  std::size_t seg = 0;
  for (int i = 1; i + 1 < p; ++i) {
    const double target = total * static_cast<double>(i) / (p - 1);
    while (seg + 2 < pts.size() && cum[seg + 1] < target) ++seg;
    const double seg_len = cum[seg + 1] - cum[seg];
    const double t = seg_len > 0.0 ? (target - cum[seg]) / seg_len : 0.0;
    out[static_cast<std::size_t>(i)] = {
        pts[seg].x + t * (pts[seg + 1].x - pts[seg].x),
        pts[seg].y + t * (pts[seg + 1].y - pts[seg].y)};
  }
  return out;
}

namespace {

struct Clipped {
  bool keep = false;
  Vec2 a, b;
  double t0 = 0.0, t1 = 1.0;
};

Clipped clip_segment(Vec2 p, Vec2 q, double xmin, double xmax, double ymin,
                     double ymax) {
  const double dx = q.x - p.x, dy = q.y - p.y;
  const double pk[4] = {-dx, dx, -dy, dy};
  const double qk[4] = {p.x - xmin, xmax - p.x, p.y - ymin, ymax - p.y};
  double t0 = 0.0, t1 = 1.0;
  int e0 = -1, e1 = -1;
  for (int k = 0; k < 4; ++k) {
    if (pk[k] == 0.0) {
      if (qk[k] < 0.0) return {};
      continue;
    }
    const double r = qk[k] / pk[k];
    if (pk[k] < 0.0) {
      if (r > t1) return {};
      if (r > t0) {
        t0 = r;
        e0 = k;
      }
    } else {
      if (r < t0) return {};
      if (r < t1) {
        t1 = r;
        e1 = k;
      }
    }
  }
  if (t0 >= t1) return {};
  Clipped c;
  c.keep = true;
  c.t0 = t0;
  c.t1 = t1;
  c.a = (t0 == 0.0) ? p : Vec2{p.x + t0 * dx, p.y + t0 * dy};
  c.b = (t1 == 1.0) ? q : Vec2{p.x + t1 * dx, p.y + t1 * dy};
  // Snap the clipping edge's coordinate exactly onto the window boundary.
  const double bounds[4] = {xmin, xmax, ymin, ymax};
  if (e0 >= 0) (e0 < 2 ? c.a.x : c.a.y) = bounds[e0];
  if (e1 >= 0) (e1 < 2 ? c.b.x : c.b.y) = bounds[e1];
  return c;
}

}  // namespace

std::vector<PointArray> clip_polyline_window(const PointArray& pts,
                                             double xmin, double xmax,
                                             double ymin, double ymax) {
  std::vector<PointArray> pieces;
  PointArray cur;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    Clipped c = clip_segment(pts[i], pts[i + 1], xmin, xmax, ymin, ymax);
    if (!c.keep) {
      if (cur.size() >= 2) pieces.push_back(std::move(cur));
      cur.clear();
      continue;
    }
    if (cur.empty() || c.t0 > 0.0) {
      if (cur.size() >= 2) pieces.push_back(std::move(cur));
      cur = {c.a};
    }
    cur.push_back(c.b);
    if (c.t1 < 1.0) {
      pieces.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (cur.size() >= 2) pieces.push_back(std::move(cur));
  return pieces;
}

AffineMatrix affine_theta(const Pose2& pose, const BEVGridSpec& grid) {
  validate(grid.h >= 2 && grid.w >= 2, "affine_theta: grid dims must be >= 2");
  const double c = std::cos(pose.dtheta);
  const double s = std::sin(pose.dtheta);
  AffineMatrix th;
  th.m[0][0] = c;
  th.m[0][1] = -s;
  th.m[0][2] = 2.0 / (static_cast<double>(grid.w) - 1.0) * pose.dx / grid.mpp_x;
  th.m[1][0] = s;
  th.m[1][1] = c;
  th.m[1][2] = 2.0 / (static_cast<double>(grid.h) - 1.0) * pose.dy / grid.mpp_y;
  return th;
}

nn::Tensor warp_bilinear(const nn::Tensor& fmap, const AffineMatrix& theta) {
  validate(fmap.ndim() == 3, "warp_bilinear expects [C,H,W]");
  validate(fmap.all_finite(), "warp_bilinear: non-finite feature map");
  const auto& s = fmap.shape();
  nn::Var x = nn::constant(fmap.reshaped({1, s[0], s[1], s[2]}));
  nn::Tensor th({1, 2, 3});
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) th[i * 3 + j] = theta.m[i][j];
  nn::Var out = nn::affine_warp(x, nn::constant(std::move(th)));
  return out->val.reshaped({s[0], s[1], s[2]});
}

nn::Var se2_apply_var(const nn::Var& pose, const nn::Var& pts) {
  validate(pose->val.numel() == 3, "se2_apply_var: pose must be [3]");
  validate(pts->val.ndim() == 2 && pts->val.dim(1) == 2,
           "se2_apply_var: pts must be [N,2]");
  using namespace nn;
  Var t = reshape(slice(pose, 0, 0, 2), {1, 2});
  Var ang = slice(pose, 0, 2, 1);
  Var c = cos_op(ang), s = sin_op(ang);
  // pts @ R^T with R = [[c,-s],[s,c]].
  Var rt = reshape(concat({c, s, neg(s), c}, 0), {2, 2});
  return add(matmul(pts, rt), t);
}

nn::Var affine_theta_var(const nn::Var& pose, const BEVGridSpec& grid) {
  validate(pose->val.numel() == 3, "affine_theta_var: pose must be [3]");
  validate(grid.h >= 2 && grid.w >= 2, "affine_theta_var: grid dims >= 2");
  using namespace nn;
  const double kx = 2.0 / ((static_cast<double>(grid.w) - 1.0) * grid.mpp_x);
  const double ky = 2.0 / ((static_cast<double>(grid.h) - 1.0) * grid.mpp_y);
  Var tx = mul_scalar(slice(pose, 0, 0, 1), kx);
  Var ty = mul_scalar(slice(pose, 0, 1, 1), ky);
  Var ang = slice(pose, 0, 2, 1);
  Var c = cos_op(ang), s = sin_op(ang);
  return reshape(concat({c, neg(s), tx, s, c, ty}, 0), {1, 2, 3});
}

}  // namespace umpe::geom
