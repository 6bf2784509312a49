// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "umpe/geometry.hpp"
#include "umpe/rng.hpp"

using namespace umpe;
using namespace umpe::geom;

namespace {

// Independent scalar oracle for the rigid correction, written against the
// rotation matrix definition directly.
Vec2 rigid_oracle(double dx, double dy, double dth, Vec2 p) {
  return {std::cos(dth) * p.x - std::sin(dth) * p.y + dx,
          std::sin(dth) * p.x + std::cos(dth) * p.y + dy};
}

// Arc-length oracle: subdivide every segment densely, then walk the dense
// chain to the target length.
Vec2 point_at_arclen_dense(const PointArray& poly, double target) {
  constexpr int kSub = 20000;
  PointArray dense;
  for (std::size_t i = 0; i + 1 < poly.size(); ++i)
    for (int k = 0; k < kSub; ++k) {
      double t = static_cast<double>(k) / kSub;
      dense.push_back({poly[i].x + t * (poly[i + 1].x - poly[i].x),
                       poly[i].y + t * (poly[i + 1].y - poly[i].y)});
    }
  dense.push_back(poly.back());
  double acc = 0.0;
  for (std::size_t i = 1; i < dense.size(); ++i) {
    double seg = std::hypot(dense[i].x - dense[i - 1].x,
                            dense[i].y - dense[i - 1].y);
    if (acc + seg >= target) {
      double t = seg > 0 ? (target - acc) / seg : 0.0;
      return {dense[i - 1].x + t * (dense[i].x - dense[i - 1].x),
              dense[i - 1].y + t * (dense[i].y - dense[i - 1].y)};
    }
    acc += seg;
  }
  return dense.back();
}

}  // namespace

TEST_SUITE_BEGIN("geometry");

TEST_CASE("se2_apply identity and quarter turn") {
  PointArray pts{{3.2, -1.1}};
  PointArray out = se2_apply(Pose2::identity(), pts);
  CHECK(out[0].x == 3.2);
  CHECK(out[0].y == -1.1);

  out = se2_apply({0, 0, kPi / 2}, {{1, 0}});
  CHECK(out[0].x == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(out[0].y == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("se2_apply matches scalar oracle") {
  Vec2 expect = rigid_oracle(0.5, -0.25, 0.1, {2, 1});
  PointArray out = se2_apply({0.5, -0.25, 0.1}, {{2, 1}});
  CHECK(out[0].x == doctest::Approx(expect.x).epsilon(1e-15));
  CHECK(out[0].y == doctest::Approx(expect.y).epsilon(1e-15));
}

TEST_CASE("se2_apply rejects non-finite input") {
  CHECK_THROWS_AS(se2_apply({0, 0, 0}, {{std::nan(""), 0.0}}), ValidationError);
  CHECK_THROWS_AS(
      se2_apply({std::numeric_limits<double>::infinity(), 0, 0}, {{1.0, 0.0}}),
      ValidationError);
}

TEST_CASE("se2_invert basics and round trip") {
  Pose2 id = se2_invert(Pose2::identity());
  CHECK(id.is_identity());
  Pose2 t = se2_invert({1, 0, 0});
  CHECK(t.dx == doctest::Approx(-1.0));
  CHECK(t.dy == doctest::Approx(0.0));
  CHECK(t.dtheta == doctest::Approx(0.0));

  RngStream rng(101);
  for (int trial = 0; trial < 50; ++trial) {
    Pose2 p{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-3, 3)};
    Pose2 pinv = se2_invert(p);
    for (int j = 0; j < 5; ++j) {
      Vec2 x{rng.uniform(-30, 30), rng.uniform(-15, 15)};
      Vec2 rt = se2_apply(pinv, se2_apply(p, x));
      CHECK(std::abs(rt.x - x.x) < 1e-10);
      CHECK(std::abs(rt.y - x.y) < 1e-10);
    }
  }
}

TEST_CASE("se2 isometry and composition properties") {
  RngStream rng(103);
  for (int trial = 0; trial < 50; ++trial) {
    Pose2 a{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-3, 3)};
    Pose2 b{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-3, 3)};
    Vec2 p{rng.uniform(-20, 20), rng.uniform(-10, 10)};
    Vec2 q{rng.uniform(-20, 20), rng.uniform(-10, 10)};
    const double before = std::hypot(p.x - q.x, p.y - q.y);
    Vec2 ap = se2_apply(a, p), aq = se2_apply(a, q);
    CHECK(std::abs(std::hypot(ap.x - aq.x, ap.y - aq.y) - before) < 1e-10);

    Vec2 lhs = se2_apply(a, se2_apply(b, p));
    Vec2 rhs = se2_apply(se2_compose(a, b), p);
    CHECK(std::abs(lhs.x - rhs.x) < 1e-10);
    CHECK(std::abs(lhs.y - rhs.y) < 1e-10);
  }
}

TEST_CASE("angle wrapping lands in (-pi, pi]") {
  CHECK(wrap_angle(kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(-kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(3 * kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(0.0) == 0.0);
  CHECK(wrap_angle(2 * kPi) == doctest::Approx(0.0));
  RngStream rng(107);
  for (int i = 0; i < 200; ++i) {
    double a = wrap_angle(rng.uniform(-50, 50));
    CHECK(a > -kPi);
    CHECK(a <= kPi);
  }
}

TEST_CASE("resample uniform segment") {
  PointArray seg{{0, 0}, {10, 0}};
  PointArray out = resample_polyline(seg, 11);
  REQUIRE(out.size() == 11);
  for (int i = 0; i < 11; ++i) {
    CHECK(out[i].x == doctest::Approx(i).epsilon(1e-12));
    CHECK(out[i].y == 0.0);
  }
}

TEST_CASE("resample idempotent on already-uniform polyline") {
  PointArray in;
  for (int i = 0; i < 7; ++i) in.push_back({2.0 * i, 1.0});
  PointArray out = resample_polyline(in, 7);
  for (int i = 0; i < 7; ++i) {
    CHECK(out[i].x == doctest::Approx(in[i].x).epsilon(1e-12));
    CHECK(out[i].y == doctest::Approx(in[i].y).epsilon(1e-12));
  }
}

TEST_CASE("resample L-shape against dense arc-length oracle") {
  PointArray lshape{{0, 0}, {4, 0}, {4, 4}};
  PointArray out = resample_polyline(lshape, 5);
  REQUIRE(out.size() == 5);
  // Exact expected points at arc lengths 0,2,4,6,8.
  PointArray expect{{0, 0}, {2, 0}, {4, 0}, {4, 2}, {4, 4}};
  for (int i = 0; i < 5; ++i) {
    CHECK(out[i].x == doctest::Approx(expect[i].x).epsilon(1e-12));
    CHECK(out[i].y == doctest::Approx(expect[i].y).epsilon(1e-12));
    Vec2 oracle = point_at_arclen_dense(lshape, 8.0 * i / 4.0);
    CHECK(std::abs(out[i].x - oracle.x) < 1e-3);
    CHECK(std::abs(out[i].y - oracle.y) < 1e-3);
  }
}

namespace {

// Arc-length coordinate of a point lying on a (non-self-intersecting)
// polyline; scans forward from *seg_hint so repeated calls walk the chain.
double arc_coord_on_chain(const PointArray& poly, Vec2 pt,
                          std::size_t* seg_hint) {
  double cum = 0.0;
  for (std::size_t s = 0; s + 1 < poly.size(); ++s) {
    const double ex = poly[s + 1].x - poly[s].x;
    const double ey = poly[s + 1].y - poly[s].y;
    const double len2 = ex * ex + ey * ey;
    const double len = std::sqrt(len2);
    if (s >= *seg_hint && len2 > 0) {
      const double t = ((pt.x - poly[s].x) * ex + (pt.y - poly[s].y) * ey) / len2;
      if (t >= -1e-12 && t <= 1.0 + 1e-12) {
        const double px = poly[s].x + t * ex, py = poly[s].y + t * ey;
        if (std::hypot(pt.x - px, pt.y - py) < 1e-9) {
          *seg_hint = s;
          return cum + t * len;
        }
      }
    }
    cum += len;
  }
  FAIL("point not on chain");
  return 0.0;
}

}  // namespace

TEST_CASE("resample preserves endpoints exactly and spaces arc length evenly") {
  RngStream rng(109);
  for (int trial = 0; trial < 20; ++trial) {
    // Monotone-x chains cannot self-intersect, so arc coordinates are
    // unambiguous.
    PointArray poly;
    double x = rng.uniform(-25, -20);
    int n = rng.uniform_int(2, 8);
    for (int i = 0; i < n; ++i) {
      poly.push_back({x, rng.uniform(-10, 10)});
      x += rng.uniform(0.5, 6.0);
    }
    PointArray out = resample_polyline(poly, 11);
    CHECK(out.front().x == poly.front().x);
    CHECK(out.front().y == poly.front().y);
    CHECK(out.back().x == poly.back().x);
    CHECK(out.back().y == poly.back().y);
    const double want = polyline_length(poly) / 10.0;
    std::size_t hint = 0;
    double prev = 0.0;
    for (std::size_t i = 1; i < out.size(); ++i) {
      const double arc = arc_coord_on_chain(poly, out[i], &hint);
      CHECK(std::abs((arc - prev) - want) < 1e-9);
      prev = arc;
    }
  }
}

TEST_CASE("resample degenerate polyline replicates and flags") {
  bool degenerate = false;
  PointArray out = resample_polyline({{1, 2}, {1, 2}}, 11, &degenerate);
  CHECK(degenerate);
  REQUIRE(out.size() == 11);
  for (const auto& p : out) {
    CHECK(p.x == 1.0);
    CHECK(p.y == 2.0);
  }
}

TEST_CASE("affine_theta identity and half-canvas shift") {
  BEVGridSpec grid = BEVGridSpec::custom(60, 30, 1.0, 1.0);
  AffineMatrix id = affine_theta(Pose2::identity(), grid);
  CHECK(id.m[0][0] == 1.0);
  CHECK(id.m[0][1] == 0.0);
  CHECK(id.m[0][2] == 0.0);
  CHECK(id.m[1][0] == 0.0);
  CHECK(id.m[1][1] == 1.0);
  CHECK(id.m[1][2] == 0.0);

  AffineMatrix half =
      affine_theta({grid.mpp_x * (grid.w - 1) / 2.0, 0, 0}, grid);
  CHECK(half.m[0][2] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(half.m[1][2] == 0.0);
}

TEST_CASE("affine_theta substitution oracle") {
  BEVGridSpec grid = BEVGridSpec::custom(60, 30, 1.0, 1.0);
  Pose2 pose{0.5, -0.25, 0.1};
  AffineMatrix th = affine_theta(pose, grid);
  CHECK(th.m[0][0] == doctest::Approx(std::cos(0.1)).epsilon(1e-15));
  CHECK(th.m[0][1] == doctest::Approx(-std::sin(0.1)).epsilon(1e-15));
  CHECK(th.m[0][2] == doctest::Approx(2.0 / 29.0 * 0.5).epsilon(1e-15));
  CHECK(th.m[1][0] == doctest::Approx(std::sin(0.1)).epsilon(1e-15));
  CHECK(th.m[1][1] == doctest::Approx(std::cos(0.1)).epsilon(1e-15));
  CHECK(th.m[1][2] == doctest::Approx(2.0 / 59.0 * -0.25).epsilon(1e-15));
}

TEST_CASE("warp identity is exact on grid points") {
  RngStream rng(113);
  nn::Tensor img({2, 6, 7});
  for (auto& v : img.vec()) v = rng.uniform(-1, 1);
  nn::Tensor out = warp_bilinear(img, AffineMatrix{});
  for (std::int64_t i = 0; i < img.numel(); ++i)
    CHECK(std::abs(out[i] - img[i]) < 1e-12);
}

TEST_CASE("warp round-trip on smooth image (isotropic grid)") {
  // Rotations in normalized coordinates compose inversely only when the
  // pixel scaling is isotropic, so the round-trip property is checked on a
  // square grid.
  const std::int64_t n = 64;
  BEVGridSpec grid = BEVGridSpec::custom(n, n, 1.0, 1.0);
  nn::Tensor img({1, n, n});
  for (std::int64_t r = 0; r < n; ++r)
    for (std::int64_t c = 0; c < n; ++c)
      img[r * n + c] = std::sin(kPi * c / n) + 0.5 * std::cos(kPi * r / n);
  Pose2 pose{0.7, -0.4, 0.06};
  nn::Tensor warped = warp_bilinear(img, affine_theta(pose, grid));
  nn::Tensor back = warp_bilinear(warped, affine_theta(se2_invert(pose), grid));
  const std::int64_t margin = 5;
  double max_diff = 0.0;
  for (std::int64_t r = margin; r < n - margin; ++r)
    for (std::int64_t c = margin; c < n - margin; ++c)
      max_diff = std::max(max_diff, std::abs(back[r * n + c] - img[r * n + c]));
  CHECK(max_diff < 1e-3);
}

TEST_CASE("se2_apply_var matches plain version and gradchecks") {
  RngStream rng(127);
  nn::Tensor pts({4, 2});
  PointArray plain;
  for (int i = 0; i < 4; ++i) {
    plain.push_back({rng.uniform(-5, 5), rng.uniform(-5, 5)});
    pts[i * 2] = plain.back().x;
    pts[i * 2 + 1] = plain.back().y;
  }
  Pose2 pose{0.4, -0.7, 0.23};
  nn::Var pose_v = nn::leaf(nn::Tensor({3}, {pose.dx, pose.dy, pose.dtheta}));
  nn::Var pts_v = nn::leaf(pts);
  nn::Var out = se2_apply_var(pose_v, pts_v);
  PointArray expect = se2_apply(pose, plain);
  for (int i = 0; i < 4; ++i) {
    CHECK(out->val.at2(i, 0) == doctest::Approx(expect[i].x).epsilon(1e-14));
    CHECK(out->val.at2(i, 1) == doctest::Approx(expect[i].y).epsilon(1e-14));
  }
  auto f = [&] {
    nn::Var y = se2_apply_var(pose_v, pts_v);
    return nn::sum_all(nn::mul(y, y));
  };
  auto r = nn::grad_check(f, {{"pose", pose_v}, {"pts", pts_v}});
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("gradient of warp wrt pose matches finite differences") {
  BEVGridSpec grid = BEVGridSpec::custom(8, 8, 1.0, 1.0);
  RngStream rng(131);
  nn::Tensor img({1, 1, 8, 8});
  for (auto& v : img.vec()) v = rng.uniform(0, 1);
  nn::Var img_v = nn::constant(img);
  // Fractional offsets keep every sample away from bilinear cell edges.
  nn::Var pose = nn::leaf(nn::Tensor({3}, {0.313, -0.221, 0.0731}));
  auto f = [&] {
    nn::Var th = affine_theta_var(pose, grid);
    nn::Var warped = nn::affine_warp(img_v, th);
    RngStream wr(7);
    nn::Tensor w(warped->val.shape());
    for (auto& v : w.vec()) v = wr.uniform(-1, 1);
    return nn::sum_all(nn::mul(warped, nn::constant(std::move(w))));
  };
  auto r = nn::grad_check(f, {{"pose", pose}}, 1e-6);
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("grid spec pixel mapping round-trips") {
  BEVGridSpec g = BEVGridSpec::for_window(20, 40);
  CHECK(g.mpp_x == doctest::Approx(1.5));
  CHECK(g.mpp_y == doctest::Approx(1.5));
  CHECK(g.x_of_col(g.col_of_x(7.31)) == doctest::Approx(7.31));
  CHECK(g.y_of_row(g.row_of_y(-4.2)) == doctest::Approx(-4.2));
  // Extent coverage: W*mpp_x == 60, H*mpp_y == 30.
  CHECK(g.w * g.mpp_x == doctest::Approx(60.0));
  CHECK(g.h * g.mpp_y == doctest::Approx(30.0));
}

TEST_SUITE_END();
