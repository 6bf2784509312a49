// SPDX-License-Identifier: Apache-2.0
//
// Planar rigid-motion and resampling primitives shared by data preparation
// and both encoder branches. Pure functions; the *_var forms build autodiff
// graph nodes so gradients flow to poses and points.

#pragma once

#include <vector>

#include "umpe/autodiff.hpp"
#include "umpe/common.hpp"

namespace umpe::geom {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

using PointArray = std::vector<Vec2>;

/// Wraps to (-pi, pi], ties to +pi.
double wrap_angle(double theta);

/// Small rigid correction (dx, dy meters; dtheta radians, wrapped).
struct Pose2 {
  double dx = 0.0;
  double dy = 0.0;
  double dtheta = 0.0;

  static Pose2 identity() { return {}; }
  Pose2 normalized() const { return {dx, dy, wrap_angle(dtheta)}; }
  bool is_identity() const { return dx == 0.0 && dy == 0.0 && dtheta == 0.0; }
};

/// BEV canvas geometry. Rows span the lateral axis (h * mpp_y == 30 m),
/// columns the longitudinal axis (w * mpp_x == 60 m); see common.hpp for
/// the full convention.
struct BEVGridSpec {
  std::int64_t h = 0;
  std::int64_t w = 0;
  double mpp_x = 0.0;
  double mpp_y = 0.0;

  /// Standard window: mpp derived from the 60 m x 30 m extents.
  static BEVGridSpec for_window(std::int64_t h, std::int64_t w);
  /// Arbitrary spec (tests, tiles); dims >= 2.
  static BEVGridSpec custom(std::int64_t h, std::int64_t w, double mpp_x,
                            double mpp_y);

  double x_of_col(double c) const { return -0.5 * w * mpp_x + (c + 0.5) * mpp_x; }
  double y_of_row(double r) const { return 0.5 * h * mpp_y - (r + 0.5) * mpp_y; }
  double col_of_x(double x) const { return (x + 0.5 * w * mpp_x) / mpp_x - 0.5; }
  double row_of_y(double y) const { return (0.5 * h * mpp_y - y) / mpp_y - 0.5; }
};

/// 2x3 affine over normalized [-1,1] coordinates (align-corners).
struct AffineMatrix {
  double m[2][3] = {{1, 0, 0}, {0, 1, 0}};
};

/// p' = R(dtheta) p + T. Rejects non-finite input.
PointArray se2_apply(const Pose2& pose, const PointArray& pts);
Vec2 se2_apply(const Pose2& pose, const Vec2& p);

/// Group inverse: se2_apply(se2_invert(p), se2_apply(p, x)) == x.
Pose2 se2_invert(const Pose2& pose);

/// Applying `b` first, then `a`.
Pose2 se2_compose(const Pose2& a, const Pose2& b);

/// Uniform arc-length resampling to exactly p points, endpoints preserved
/// exactly. A zero-length polyline replicates its point and sets *degenerate.
PointArray resample_polyline(const PointArray& pts, int p,
                             bool* degenerate = nullptr);

double polyline_length(const PointArray& pts);

/// Liang-Barsky clip of a polyline to an axis-aligned window; polylines
/// leaving and re-entering split into separate pieces. Clipped endpoints
/// carry the window coordinate exactly.
std::vector<PointArray> clip_polyline_window(const PointArray& pts,
                                             double xmin, double xmax,
                                             double ymin, double ymax);

/// Normalized affine for the warp: t_x = 2/(W-1) * dx/m_x,
/// t_y = 2/(H-1) * dy/m_y, rotation block [[cos,-sin],[sin,cos]].
AffineMatrix affine_theta(const Pose2& pose, const BEVGridSpec& grid);

/// Bilinear warp of a [C,H,W] map by theta (align-corners, zeros padding).
nn::Tensor warp_bilinear(const nn::Tensor& fmap, const AffineMatrix& theta);

// --- differentiable forms ---

/// pose:[3] pts:[N,2] -> [N,2].
nn::Var se2_apply_var(const nn::Var& pose, const nn::Var& pts);

/// pose:[3] -> theta [1,2,3] suitable for nn::affine_warp.
nn::Var affine_theta_var(const nn::Var& pose, const BEVGridSpec& grid);

}  // namespace umpe::geom
