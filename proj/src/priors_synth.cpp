// SPDX-License-Identifier: Apache-2.0

#include "umpe/priors_synth.hpp"

#include <json.hpp>

#include "umpe/priors_ingest.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace umpe::synth {

namespace fs = std::filesystem;

void NoiseSpec::check() const {
  validate(drift_xy_max >= 0 && drift_xy_max <= 2.0,
           "drift_xy_max must be in [0, 2] m");
  validate(drift_theta_max_deg >= 0 && drift_theta_max_deg <= 5.0,
           "drift_theta_max_deg must be in [0, 5] deg");
  for (double r : {sd_decimation, sat_occlusion, obs_occlusion})
    validate(r >= 0.0 && r <= 1.0, "noise rates must be in [0, 1]");
  validate(obs_noise >= 0.0, "obs_noise must be non-negative");
  validate(sd_smooth_passes >= 0 && sat_blur_passes >= 0 && obs_blur_passes >= 0,
           "blur/smooth passes must be non-negative");
}

namespace {

geom::PointArray offset_curve(const geom::PointArray& line, double d) {
  geom::PointArray out(line.size());
  const std::size_t n = line.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = line[i == 0 ? 0 : i - 1];
    const auto& b = line[i + 1 < n ? i + 1 : n - 1];
    double tx = b.x - a.x, ty = b.y - a.y;
    const double len = std::hypot(tx, ty);
    if (len > 0) {
      tx /= len;
      ty /= len;
    } else {
      tx = 1;
      ty = 0;
    }
    // (-ty, tx) points to the left of the direction of travel.
    out[i] = {line[i].x - d * ty, line[i].y + d * tx};
  }
  return out;
}

void add_clipped(std::vector<WorldElement>& dst, int cls, int category,
                 const geom::PointArray& pts) {
  for (auto& piece : geom::clip_polyline_window(pts, -kXHalfExtent,
                                                kXHalfExtent, -kYHalfExtent,
                                                kYHalfExtent))
    dst.push_back({cls, category, std::move(piece)});
}

struct RoadLayout {
  geom::PointArray centerline;  // dense, unclipped
  int lanes = 1;
  int category = 0;
};

void emit_road(const RoadLayout& road, const WorldSpec& spec, WorldMap& world) {
  const double half = road.lanes * spec.lane_width / 2.0;
  for (double side : {+half, -half})
    add_clipped(world.elements, static_cast<int>(MapClass::Boundary),
                road.category, offset_curve(road.centerline, side));
  for (int k = 1; k < road.lanes; ++k)
    add_clipped(world.elements, static_cast<int>(MapClass::Divider),
                road.category,
                offset_curve(road.centerline, -half + k * spec.lane_width));
  for (auto& piece :
       geom::clip_polyline_window(road.centerline, -kXHalfExtent, kXHalfExtent,
                                  -kYHalfExtent, kYHalfExtent))
    world.roads.push_back({std::move(piece), road.lanes, road.category, half});
}

}  // namespace

WorldMap gen_world(std::uint64_t seed, const WorldSpec& spec) {
  validate(spec.min_lanes >= 1 && spec.max_lanes >= spec.min_lanes,
           "bad lane count range");
  WorldMap world;
  world.seed = seed;
  RngStream rng(derive_seed(seed, "world"));

  RoadLayout main_road;
  main_road.lanes = rng.uniform_int(spec.min_lanes, spec.max_lanes);
  main_road.category = rng.uniform_int(0, 3);  // motorway..secondary
  const double amp = rng.uniform(0.0, spec.curve_amplitude);
  const double wavelength = rng.uniform(45.0, 95.0);
  const double phase = rng.uniform(0.0, 2.0 * kPi);
  const double offset = rng.uniform(-3.0, 3.0);
  for (double x = -kXHalfExtent - 4.0; x <= kXHalfExtent + 4.0; x += 1.0)
    main_road.centerline.push_back(
        {x, offset + amp * std::sin(2.0 * kPi * x / wavelength + phase)});
  emit_road(main_road, spec, world);

  std::vector<RoadLayout> roads{main_road};
  if (rng.bernoulli(spec.intersection_prob)) {
    RoadLayout cross;
    cross.lanes = rng.uniform_int(1, 2);
    cross.category = rng.uniform_int(3, 6);  // secondary..service
    const double xc = rng.uniform(-15.0, 15.0);
    const double lean = rng.uniform(-0.2, 0.2);
    for (double y = -kYHalfExtent - 4.0; y <= kYHalfExtent + 4.0; y += 1.0)
      cross.centerline.push_back({xc + lean * y, y});
    emit_road(cross, spec, world);
    roads.push_back(cross);
  }

  const int n_crossings =
      spec.max_crossings > 0 ? rng.uniform_int(0, spec.max_crossings) : 0;
  const double main_half = main_road.lanes * spec.lane_width / 2.0;
  for (int k = 0; k < n_crossings; ++k) {
    const double xq = rng.uniform(-24.0, 24.0);
    // Locate the spine sample nearest xq for position and tangent.
    std::size_t idx = 0;
    double best = 1e300;
    for (std::size_t i = 0; i < main_road.centerline.size(); ++i) {
      const double d = std::abs(main_road.centerline[i].x - xq);
      if (d < best) {
        best = d;
        idx = i;
      }
    }
    const auto& c = main_road.centerline[idx];
    const auto& a = main_road.centerline[idx == 0 ? 0 : idx - 1];
    const auto& b = main_road.centerline[std::min(
        idx + 1, main_road.centerline.size() - 1)];
    double tx = b.x - a.x, ty = b.y - a.y;
    const double len = std::hypot(tx, ty);
    tx /= len;
    ty /= len;
    const double nx = -ty, ny = tx;
    const double hw = 1.5;                // half-length along the road
    const double hh = main_half + 0.5;    // spans the full road width
    geom::PointArray ring{
        {c.x - hw * tx - hh * nx, c.y - hw * ty - hh * ny},
        {c.x + hw * tx - hh * nx, c.y + hw * ty - hh * ny},
        {c.x + hw * tx + hh * nx, c.y + hw * ty + hh * ny},
        {c.x - hw * tx + hh * nx, c.y - hw * ty + hh * ny}};
    ring.push_back(ring.front());
    add_clipped(world.elements, static_cast<int>(MapClass::PedCrossing),
                main_road.category, ring);
  }
  return world;
}

namespace {

geom::PointArray coarsen(const geom::PointArray& line, double decimation,
                         int smooth_passes, RngStream& rng) {
  geom::PointArray pts;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const bool endpoint = (i == 0 || i + 1 == line.size());
    if (endpoint || !rng.bernoulli(decimation)) pts.push_back(line[i]);
  }
  if (pts.size() < 2) pts = {line.front(), line.back()};
  for (int pass = 0; pass < smooth_passes; ++pass) {
    geom::PointArray sm = pts;
    for (std::size_t i = 1; i + 1 < pts.size(); ++i) {
      sm[i].x = 0.25 * pts[i - 1].x + 0.5 * pts[i].x + 0.25 * pts[i + 1].x;
      sm[i].y = 0.25 * pts[i - 1].y + 0.5 * pts[i].y + 0.25 * pts[i + 1].y;
    }
    pts = std::move(sm);
  }
  return pts;
}

void append_prior_polylines(PolylineSet& dst, const geom::PointArray& dense,
                            int category, const geom::Pose2& drift) {
  geom::PointArray drifted = geom::se2_apply(drift, dense);
  for (auto& piece :
       geom::clip_polyline_window(drifted, -kXHalfExtent, kXHalfExtent,
                                  -kYHalfExtent, kYHalfExtent)) {
    Polyline pl;
    pl.category = category;
    pl.points = geom::resample_polyline(piece, kPolylinePoints, &pl.degenerate);
    dst.polylines.push_back(std::move(pl));
  }
}

void overlay_class(ImageU8& dst, const ImageU8& mono, int channel) {
  for (int r = 0; r < dst.h; ++r)
    for (int c = 0; c < dst.w; ++c)
      if (mono.at(r, c, 0) > 0) dst.at(r, c, channel) = 255;
}

void occlude(ImageU8& img, double target_fraction, Rgb color, RngStream& rng) {
  if (target_fraction <= 0.0) return;
  const std::int64_t target =
      static_cast<std::int64_t>(target_fraction * img.h * img.w);
  std::vector<char> covered(static_cast<std::size_t>(img.h) * img.w, 0);
  std::int64_t area = 0;
  int guard = 0;
  while (area < target && guard++ < 64) {
    const int ph = std::max(1, static_cast<int>(rng.uniform(0.18, 0.45) * img.h));
    const int pw = std::max(1, static_cast<int>(rng.uniform(0.12, 0.35) * img.w));
    const int r0 = rng.uniform_int(0, std::max(0, img.h - ph));
    const int c0 = rng.uniform_int(0, std::max(0, img.w - pw));
    for (int r = r0; r < std::min(img.h, r0 + ph); ++r)
      for (int c = c0; c < std::min(img.w, c0 + pw); ++c) {
        img.set(r, c, color);
        char& seen = covered[static_cast<std::size_t>(r) * img.w + c];
        if (!seen) {
          seen = 1;
          ++area;
        }
      }
  }
}

ImageU8 render_satellite(const WorldMap& world, const NoiseSpec& noise,
                         const geom::BEVGridSpec& grid, RngStream& rng) {
  const int h = static_cast<int>(grid.h), w = static_cast<int>(grid.w);
  ImageU8 img(h, w);
  // Two-tone value-noise ground texture from a coarse random lattice.
  const int cell = 4;
  const int gh = h / cell + 2, gw = w / cell + 2;
  std::vector<double> lattice(static_cast<std::size_t>(gh) * gw);
  for (auto& v : lattice) v = rng.uniform01();
  const Rgb tone_a{96, 112, 72}, tone_b{140, 126, 96};
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double fr = static_cast<double>(r) / cell;
      const double fc = static_cast<double>(c) / cell;
      const int r0 = static_cast<int>(fr), c0 = static_cast<int>(fc);
      const double ar = fr - r0, ac = fc - c0;
      const double v =
          (1 - ar) * ((1 - ac) * lattice[r0 * gw + c0] +
                      ac * lattice[r0 * gw + c0 + 1]) +
          ar * ((1 - ac) * lattice[(r0 + 1) * gw + c0] +
                ac * lattice[(r0 + 1) * gw + c0 + 1]);
      Rgb px;
      for (int ch = 0; ch < 3; ++ch)
        px[ch] = static_cast<unsigned char>(
            std::lround(tone_a[ch] + v * (tone_b[ch] - tone_a[ch])));
      img.set(r, c, px);
    }
  // Road surfaces from centerline offsets, then markings.
  const Rgb asphalt{70, 70, 74};
  for (const auto& road : world.roads) {
    geom::PointArray left = offset_curve(road.centerline, road.half_width);
    geom::PointArray right = offset_curve(road.centerline, -road.half_width);
    geom::PointArray ring = left;
    ring.insert(ring.end(), right.rbegin(), right.rend());
    fill_polygon(img, grid, ring, asphalt);
  }
  for (const auto& el : world.elements) {
    switch (static_cast<MapClass>(el.cls)) {
      case MapClass::Boundary:
        draw_polyline(img, grid, el.points, {235, 235, 230}, 1);
        break;
      case MapClass::Divider:
        draw_polyline(img, grid, el.points, {210, 205, 160}, 1);
        break;
      case MapClass::PedCrossing: {
        ImageU8 mono(h, w);
        fill_polygon(mono, grid, el.points, {255, 255, 255});
        for (int r = 0; r < h; ++r)
          for (int c = 0; c < w; ++c)
            // Stripe bands, two pixels on / two off along the column axis.
            if (mono.at(r, c, 0) > 0 && ((c / 2) % 2 == 0))
              img.set(r, c, {225, 225, 228});
        break;
      }
    }
  }
  blur_box3(img, noise.sat_blur_passes);
  occlude(img, noise.sat_occlusion,
          rng.bernoulli(0.5) ? Rgb{188, 188, 192} : Rgb{32, 32, 36}, rng);
  return img;
}

}  // namespace

ImageU8 render_gt_raster(const WorldMap& world, const geom::BEVGridSpec& grid) {
  const int h = static_cast<int>(grid.h), w = static_cast<int>(grid.w);
  ImageU8 out(h, w);
  for (int cls = 0; cls < kNumMapClasses; ++cls) {
    ImageU8 mono(h, w);
    for (const auto& el : world.elements) {
      if (el.cls != cls) continue;
      if (static_cast<MapClass>(cls) == MapClass::PedCrossing)
        fill_polygon(mono, grid, el.points, {255, 255, 255});
      else
        draw_polyline(mono, grid, el.points, {255, 255, 255}, 1);
    }
    overlay_class(out, mono, cls);
  }
  return out;
}

PriorBundle derive_priors(const WorldMap& world, const NoiseSpec& noise,
                          const geom::BEVGridSpec& grid, RngStream& rng,
                          const std::array<geom::Pose2, kNumSources>* forced_drift) {
  noise.check();
  PriorBundle b;
  b.presence = PresenceMask::all_present();
  const double th_max = noise.drift_theta_max_deg * kPi / 180.0;
  for (int s = 0; s < kNumSources; ++s) {
    b.drift[static_cast<std::size_t>(s)] =
        forced_drift ? (*forced_drift)[static_cast<std::size_t>(s)]
                     : geom::Pose2{rng.uniform(-noise.drift_xy_max,
                                               noise.drift_xy_max),
                                   rng.uniform(-noise.drift_xy_max,
                                               noise.drift_xy_max),
                                   rng.uniform(-th_max, th_max)};
    b.drift_known[static_cast<std::size_t>(s)] = true;
  }

  // HD: precise boundaries only.
  for (const auto& el : world.elements)
    if (el.cls == static_cast<int>(MapClass::Boundary))
      append_prior_polylines(b.hd, el.points, el.category,
                             b.drift[static_cast<int>(SourceId::HD)]);

  // SD: coarsened road skeleton, shared between the vector and raster forms.
  std::vector<std::pair<geom::PointArray, int>> coarse;
  for (const auto& road : world.roads)
    coarse.emplace_back(
        coarsen(road.centerline, noise.sd_decimation, noise.sd_smooth_passes, rng),
        road.category);
  for (const auto& [line, cat] : coarse)
    append_prior_polylines(b.sd, line, cat,
                           b.drift[static_cast<int>(SourceId::SD)]);

  PolylineSet rsd_vectors{SourceId::SD, {}};
  for (const auto& [line, cat] : coarse)
    append_prior_polylines(rsd_vectors, line, cat,
                           b.drift[static_cast<int>(SourceId::RSD)]);
  b.rsd = ingest::rasterize_sd(rsd_vectors, grid, noise.sd_stroke_px);

  // Satellite: textured render in true pose, drift injected via warp.
  ImageU8 sat = render_satellite(world, noise, grid, rng);
  const geom::Pose2& dsat = b.drift[static_cast<int>(SourceId::Sat)];
  if (!dsat.is_identity()) {
    nn::Tensor t = image_to_tensor(sat);
    t = geom::warp_bilinear(t, geom::affine_theta(geom::se2_invert(dsat), grid));
    sat = tensor_to_image(t);
  }
  b.sat = {SourceId::Sat, std::move(sat), grid.mpp_x, grid.mpp_y};
  return b;
}

void source_dropout(PriorBundle& bundle, double p, RngStream& rng) {
  validate(p >= 0.0 && p <= 1.0, "dropout probability out of range");
  for (const auto& family : {kVectorFamily, kRasterFamily}) {
    if (!rng.bernoulli(p)) continue;
    const SourceId victim = family[rng.next_below(2)];
    const SourceId other = (victim == family[0]) ? family[1] : family[0];
    // Never empty a family: only drop when the sibling stays available.
    if (bundle.presence.present(other)) bundle.presence.set(victim, false);
  }
}

ImageU8 render_bev_observation(const WorldMap& world, const NoiseSpec& noise,
                               const geom::BEVGridSpec& grid, RngStream& rng) {
  noise.check();
  ImageU8 gt = render_gt_raster(world, grid);
  nn::Tensor t = image_to_tensor(gt);
  for (auto& v : t.vec()) v += rng.normal(0.0, noise.obs_noise);
  ImageU8 img = tensor_to_image(t);
  blur_box3(img, noise.obs_blur_passes);
  occlude(img, noise.obs_occlusion, {0, 0, 0}, rng);
  return img;
}

PriorBundle synth_frame(std::uint64_t dataset_seed, std::int64_t frame_id,
                        const WorldSpec& wspec, const NoiseSpec& noise,
                        const geom::BEVGridSpec& grid) {
  const std::uint64_t frame_seed =
      derive_seed(dataset_seed, static_cast<std::uint64_t>(frame_id));
  WorldMap world = gen_world(derive_seed(frame_seed, "w"), wspec);
  RngStream rng_priors(derive_seed(frame_seed, "p"));
  PriorBundle b = derive_priors(world, noise, grid, rng_priors);
  b.frame_id = frame_id;
  b.gt_raster = render_gt_raster(world, grid);
  for (const auto& el : world.elements) {
    GtInstance gi;
    gi.cls = el.cls;
    bool degenerate = false;
    gi.points = geom::resample_polyline(el.points, kPolylinePoints, &degenerate);
    if (!degenerate) b.gt_instances.push_back(std::move(gi));
  }
  RngStream rng_obs(derive_seed(frame_seed, "o"));
  b.obs = render_bev_observation(world, noise, grid, rng_obs);
  return b;
}

void synth_dataset(const std::string& out_dir, std::uint64_t dataset_seed,
                   int frames, const WorldSpec& wspec, const NoiseSpec& noise,
                   const geom::BEVGridSpec& grid) {
  validate(frames > 0, "frame count must be positive");
  fs::create_directories(out_dir);
  for (int i = 0; i < frames; ++i) {
    PriorBundle b = synth_frame(dataset_seed, i, wspec, noise, grid);
    char name[32];
    std::snprintf(name, sizeof name, "frame_%06d", i);
    ingest::write_bundle((fs::path(out_dir) / name).string(), b);
  }
  nlohmann::json manifest;
  manifest["seed"] = dataset_seed;
  manifest["frames"] = frames;
  manifest["grid"] = {{"h", grid.h}, {"w", grid.w}, {"mpp_x", grid.mpp_x},
                      {"mpp_y", grid.mpp_y}};
  std::ofstream os(fs::path(out_dir) / "dataset.json");
  validate(static_cast<bool>(os), "cannot write dataset.json");
  os << manifest.dump(2) << '\n';
}

}  // namespace umpe::synth
