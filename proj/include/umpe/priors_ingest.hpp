// SPDX-License-Identifier: Apache-2.0
//
// Real-data preparation path: ego-frame projection and window cropping,
// slippy-tile index math, SD rasterization, tile clients (fixture playback
// and optional live HTTP), and the on-disk bundle format.
//
// Bundle directory layout (one directory per frame):
//   meta.json      frame id, presence flags, mpp, drift (when synthetic)
//   hd.jsonl       one record per polyline: id, category, P x 2 points
//   sd.jsonl       same for the SD source
//   sat.png        satellite prior, lossless RGB
//   sd_raster.png  rasterized SD prior
//   obs.png, gt.png, gt.jsonl   synthetic-benchmark extras when present

#pragma once

#include <memory>
#include <optional>

#include "umpe/priors.hpp"

namespace umpe::ingest {

struct EgoPose {
  double lon = 0.0;  // degrees
  double lat = 0.0;  // degrees
  double yaw = 0.0;  // radians, 0 = +x of the local frame
  double x = 0.0;    // meters, local Cartesian frame
  double y = 0.0;
};

struct TileRef {
  int z = 0;
  std::int64_t x = 0;
  std::int64_t y = 0;
  bool operator==(const TileRef&) const = default;
};

inline constexpr double kMercatorMaxLat = 85.0511;

/// Standard slippy-map tile containing (lon, lat) at zoom z.
TileRef lonlat_to_tile(double lon, double lat, int z);
/// Center of a tile, the inverse used by the round-trip invariant.
void tile_center(const TileRef& t, double* lon, double* lat);
/// Ground meters per tile pixel at a latitude.
double ground_resolution(double lat, int z, int tile_px);
/// Smallest zoom whose ground resolution is <= target_mpp.
int zoom_for_resolution(double lat, double target_mpp, int tile_px,
                        int max_zoom = 22);

/// Equirectangular local projection about a reference origin (small areas).
geom::Vec2 lonlat_to_local(double lon, double lat, double ref_lon,
                           double ref_lat);

/// Inverse-ego transform, window clip (segments split at the boundary via
/// Liang-Barsky), and resampling to P points. Locally-empty output keeps
/// the source present; callers own the presence bit.
PolylineSet crop_ego_window(const std::vector<Polyline>& polylines_local,
                            const EgoPose& ego, SourceId source);

/// Deterministic palette stroking onto a background canvas; classes drawn
/// in ascending category order so later classes overdraw earlier ones.
RasterPrior rasterize_sd(const PolylineSet& sd, const geom::BEVGridSpec& grid,
                         int stroke_px);

class TileClient {
public:
  virtual ~TileClient() = default;
  virtual std::optional<ImageU8> get(int z, std::int64_t x, std::int64_t y) = 0;
  virtual int tile_px() const = 0;
};

/// Plays back tiles from a directory keyed `z/x/y.png`.
class FixtureTileClient : public TileClient {
public:
  explicit FixtureTileClient(std::string root, int tile_px = 64);
  std::optional<ImageU8> get(int z, std::int64_t x, std::int64_t y) override;
  int tile_px() const override { return tile_px_; }

private:
  std::string root_;
  int tile_px_;
};

/// Live HTTP client (never exercised by CI). Requires the UMPE_TILE_TOKEN
/// environment variable and a URL template such as
/// "http://host/tiles/{z}/{x}/{y}.png?token={token}".
class LiveTileClient : public TileClient {
public:
  LiveTileClient(std::string url_template, int tile_px, int max_retries = 3);
  std::optional<ImageU8> get(int z, std::int64_t x, std::int64_t y) override;
  int tile_px() const override { return tile_px_; }

private:
  std::string url_template_;
  std::string token_;
  int tile_px_;
  int max_retries_;
};

struct FetchResult {
  ImageU8 image;
  bool missing_tiles = false;
  int zoom = 0;
};

/// Stitches all tiles covering the window, rotates by ego yaw about the
/// stitch center, center-crops to the window extent and resizes to the
/// canvas. Bit-identical under fixture playback.
FetchResult fetch_tiles(const EgoPose& ego, int z, TileClient& client,
                        const geom::BEVGridSpec& grid);

// --- bundle serialization ---

void write_bundle(const std::string& dir, const PriorBundle& bundle);
PriorBundle read_bundle(const std::string& dir);

}  // namespace umpe::ingest
