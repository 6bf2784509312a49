// SPDX-License-Identifier: Apache-2.0
//
// Procedural desk-scale worlds and all four derived priors plus the noisy
// BEV observation. Everything is deterministic per (dataset seed, frame id):
// each frame owns a derived child stream, so parallel and serial generation
// agree bit-for-bit.

#pragma once

#include "umpe/priors.hpp"
#include "umpe/rng.hpp"

namespace umpe::synth {

struct WorldSpec {
  int min_lanes = 1;
  int max_lanes = 3;
  double lane_width = 3.5;
  double intersection_prob = 0.5;
  int max_crossings = 3;      // pedestrian crossings, 0..max per frame
  double curve_amplitude = 4.0;
};

struct WorldElement {
  int cls = 0;       // MapClass
  int category = 0;  // SD road class of the owning road
  geom::PointArray points;  // dense, clipped to the extent
};

struct WorldRoad {
  geom::PointArray centerline;  // dense, clipped
  int lanes = 1;
  int category = 0;
  double half_width = 1.75;
};

struct WorldMap {
  std::uint64_t seed = 0;
  std::vector<WorldElement> elements;
  std::vector<WorldRoad> roads;
};

struct NoiseSpec {
  double drift_xy_max = 1.5;         // meters, must stay within +-2
  double drift_theta_max_deg = 4.0;  // degrees, must stay within +-5
  double sd_decimation = 0.35;       // interior-point drop rate
  int sd_smooth_passes = 2;
  int sd_stroke_px = 1;              // rasterized-SD stroke width
  int sat_blur_passes = 1;
  double sat_occlusion = 0.08;       // fraction of canvas patched over
  double obs_noise = 0.2;            // additive noise stddev in [0,1] space
  double obs_occlusion = 0.35;       // target occluded canvas fraction
  int obs_blur_passes = 1;

  void check() const;
};

WorldMap gen_world(std::uint64_t seed, const WorldSpec& spec);

/// Derives HD/SD/sat/rsd plus GT supervision from a world. Per-source drift
/// poses are sampled from `rng` unless `forced_drift` pins them (tests).
PriorBundle derive_priors(const WorldMap& world, const NoiseSpec& noise,
                          const geom::BEVGridSpec& grid, RngStream& rng,
                          const std::array<geom::Pose2, kNumSources>*
                              forced_drift = nullptr);

/// Per family ({HD,SD} and {sat,rsd}), with probability p picks one of the
/// two sources uniformly and masks its presence. Payload is retained; the
/// loader masks it out. Never empties a family.
void source_dropout(PriorBundle& bundle, double p, RngStream& rng);

/// Class rasters corrupted by additive noise, occlusion rectangles and a
/// mild blur; the trainable stem that lifts this to model width lives in
/// the model, not here.
ImageU8 render_bev_observation(const WorldMap& world, const NoiseSpec& noise,
                               const geom::BEVGridSpec& grid, RngStream& rng);

/// Renders the uncorrupted 3-channel class raster (R=ped, G=div, B=bou).
ImageU8 render_gt_raster(const WorldMap& world, const geom::BEVGridSpec& grid);

/// World + priors + GT + observation for one frame.
PriorBundle synth_frame(std::uint64_t dataset_seed, std::int64_t frame_id,
                        const WorldSpec& wspec, const NoiseSpec& noise,
                        const geom::BEVGridSpec& grid);

/// Writes `frames` bundle directories under out_dir (frame_000000 ...).
void synth_dataset(const std::string& out_dir, std::uint64_t dataset_seed,
                   int frames, const WorldSpec& wspec, const NoiseSpec& noise,
                   const geom::BEVGridSpec& grid);

}  // namespace umpe::synth
