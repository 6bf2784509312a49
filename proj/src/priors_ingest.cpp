// SPDX-License-Identifier: Apache-2.0

#include "umpe/priors_ingest.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

namespace umpe::ingest {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kEarthRadius = 6378137.0;  // Web-Mercator sphere
constexpr double kDeg2Rad = kPi / 180.0;

}  // namespace

TileRef lonlat_to_tile(double lon, double lat, int z) {
  validate(z >= 0 && z <= 30, "zoom out of range");
  validate(lat >= -kMercatorMaxLat && lat <= kMercatorMaxLat,
           "latitude outside Web-Mercator range");
  validate(lon >= -180.0 && lon <= 180.0, "longitude out of range");
  const double n = std::pow(2.0, z);
  const double phi = lat * kDeg2Rad;
  double xt = (lon + 180.0) / 360.0 * n;
  double yt = (1.0 - std::log(std::tan(phi) + 1.0 / std::cos(phi)) / kPi) / 2.0 * n;
  auto clamp_idx = [&](double v) {
    auto i = static_cast<std::int64_t>(std::floor(v));
    return std::min<std::int64_t>(std::max<std::int64_t>(i, 0),
                                  static_cast<std::int64_t>(n) - 1);
  };
  return {z, clamp_idx(xt), clamp_idx(yt)};
}

void tile_center(const TileRef& t, double* lon, double* lat) {
  const double n = std::pow(2.0, t.z);
  *lon = (static_cast<double>(t.x) + 0.5) / n * 360.0 - 180.0;
  const double m = kPi * (1.0 - 2.0 * (static_cast<double>(t.y) + 0.5) / n);
  *lat = std::atan(std::sinh(m)) / kDeg2Rad;
}

double ground_resolution(double lat, int z, int tile_px) {
  return std::cos(lat * kDeg2Rad) * 2.0 * kPi * kEarthRadius /
         (std::pow(2.0, z) * tile_px);
}

int zoom_for_resolution(double lat, double target_mpp, int tile_px,
                        int max_zoom) {
  for (int z = 0; z <= max_zoom; ++z)
    if (ground_resolution(lat, z, tile_px) <= target_mpp) return z;
  return max_zoom;
}

geom::Vec2 lonlat_to_local(double lon, double lat, double ref_lon,
                           double ref_lat) {
  const double x =
      (lon - ref_lon) * kDeg2Rad * kEarthRadius * std::cos(ref_lat * kDeg2Rad);
  const double y = (lat - ref_lat) * kDeg2Rad * kEarthRadius;
  return {x, y};
}

PolylineSet crop_ego_window(const std::vector<Polyline>& polylines_local,
                            const EgoPose& ego, SourceId source) {
  PolylineSet out;
  out.source = source;
  const geom::Pose2 inv_ego =
      geom::se2_invert({ego.x, ego.y, geom::wrap_angle(ego.yaw)});
  for (const Polyline& pl : polylines_local) {
    geom::PointArray pts = geom::se2_apply(inv_ego, pl.points);
    for (auto& piece :
         geom::clip_polyline_window(pts, -kXHalfExtent, kXHalfExtent,
                                    -kYHalfExtent, kYHalfExtent)) {
      Polyline res;
      res.category = pl.category;
      res.points =
          geom::resample_polyline(piece, kPolylinePoints, &res.degenerate);
      out.polylines.push_back(std::move(res));
    }
  }
  return out;
}

RasterPrior rasterize_sd(const PolylineSet& sd, const geom::BEVGridSpec& grid,
                         int stroke_px) {
  validate(stroke_px >= 1, "stroke width must be >= 1");
  RasterPrior out;
  out.source = SourceId::RSD;
  out.mpp_x = grid.mpp_x;
  out.mpp_y = grid.mpp_y;
  out.image = ImageU8(static_cast<int>(grid.h), static_cast<int>(grid.w),
                      palette_background());
  for (int cat = 0; cat < kNumCategories; ++cat)
    for (const Polyline& pl : sd.polylines)
      if (pl.category == cat)
        draw_polyline(out.image, grid, pl.points, palette_color(cat), stroke_px);
  return out;
}

FixtureTileClient::FixtureTileClient(std::string root, int tile_px)
    : root_(std::move(root)), tile_px_(tile_px) {}

std::optional<ImageU8> FixtureTileClient::get(int z, std::int64_t x,
                                              std::int64_t y) {
  const fs::path p = fs::path(root_) / std::to_string(z) / std::to_string(x) /
                     (std::to_string(y) + ".png");
  if (!fs::exists(p)) return std::nullopt;
  ImageU8 img = read_png(p.string());
  validate(img.h == tile_px_ && img.w == tile_px_,
           "fixture tile has wrong size: " + p.string());
  return img;
}

FetchResult fetch_tiles(const EgoPose& ego, int z, TileClient& client,
                        const geom::BEVGridSpec& grid) {
  validate(ego.lat >= -kMercatorMaxLat && ego.lat <= kMercatorMaxLat,
           "latitude outside Web-Mercator range");
  const int tp = client.tile_px();
  const double res = ground_resolution(ego.lat, z, tp);
  const double n_tiles = std::pow(2.0, z);
  const double world_px = n_tiles * tp;
  // Continuous global pixel coordinates of the ego.
  const double phi = ego.lat * kDeg2Rad;
  const double gx = (ego.lon + 180.0) / 360.0 * world_px;
  const double gy =
      (1.0 - std::log(std::tan(phi) + 1.0 / std::cos(phi)) / kPi) / 2.0 * world_px;

  const double half_x_m = 0.5 * grid.w * grid.mpp_x;
  const double half_y_m = 0.5 * grid.h * grid.mpp_y;
  const std::int64_t radius =
      static_cast<std::int64_t>(std::ceil(std::hypot(half_x_m, half_y_m) / res)) + 2;
  const std::int64_t s = 2 * radius;
  const std::int64_t ax = std::llround(gx) - radius;
  const std::int64_t ay = std::llround(gy) - radius;

  FetchResult result;
  result.zoom = z;
  const Rgb bg = palette_background();
  ImageU8 stitched(static_cast<int>(s), static_cast<int>(s), bg);
  const std::int64_t ty0 = static_cast<std::int64_t>(std::floor(static_cast<double>(ay) / tp));
  const std::int64_t ty1 = static_cast<std::int64_t>(std::floor(static_cast<double>(ay + s - 1) / tp));
  const std::int64_t tx0 = static_cast<std::int64_t>(std::floor(static_cast<double>(ax) / tp));
  const std::int64_t tx1 = static_cast<std::int64_t>(std::floor(static_cast<double>(ax + s - 1) / tp));
  for (std::int64_t ty = ty0; ty <= ty1; ++ty) {
    for (std::int64_t tx = tx0; tx <= tx1; ++tx) {
      std::optional<ImageU8> tile;
      if (ty >= 0 && ty < static_cast<std::int64_t>(n_tiles)) {
        // Longitude wraps around the antimeridian.
        std::int64_t wx = tx % static_cast<std::int64_t>(n_tiles);
        if (wx < 0) wx += static_cast<std::int64_t>(n_tiles);
        tile = client.get(z, wx, ty);
      }
      if (!tile) {
        result.missing_tiles = true;
        continue;
      }
      for (int r = 0; r < tp; ++r) {
        const std::int64_t grow = ty * tp + r - ay;
        if (grow < 0 || grow >= s) continue;
        for (int c = 0; c < tp; ++c) {
          const std::int64_t gcol = tx * tp + c - ax;
          if (gcol < 0 || gcol >= s) continue;
          stitched.set(static_cast<int>(grow), static_cast<int>(gcol),
                       tile->get(r, c));
        }
      }
    }
  }

  // One inverse-map resample implements rotate-about-ego + center-crop +
  // resize in a single bilinear pass. Ego frame: +x forward, +y left; the
  // local frame is east-north with yaw measured CCW from east.
  const double ca = std::cos(ego.yaw), sa = std::sin(ego.yaw);
  ImageU8 canvas(static_cast<int>(grid.h), static_cast<int>(grid.w), bg);
  for (std::int64_t r = 0; r < grid.h; ++r) {
    const double yl = grid.y_of_row(static_cast<double>(r));
    for (std::int64_t c = 0; c < grid.w; ++c) {
      const double xf = grid.x_of_col(static_cast<double>(c));
      const double east = xf * ca - yl * sa;
      const double north = xf * sa + yl * ca;
      const double src_c = (gx + east / res) - ax - 0.5;
      const double src_r = (gy - north / res) - ay - 0.5;
      canvas.set(static_cast<int>(r), static_cast<int>(c),
                 sample_bilinear_px(stitched, src_r, src_c, bg));
    }
  }
  result.image = std::move(canvas);
  return result;
}

// --- live client (optional; plain HTTP, bounded retries) ---

LiveTileClient::LiveTileClient(std::string url_template, int tile_px,
                               int max_retries)
    : url_template_(std::move(url_template)), tile_px_(tile_px),
      max_retries_(max_retries) {
  const char* tok = std::getenv("UMPE_TILE_TOKEN");
  validate(tok != nullptr && *tok != '\0',
           "live tile mode requires UMPE_TILE_TOKEN to be set");
  token_ = tok;
}

}  // namespace umpe::ingest

// httplib pulled in only for the live client.
#include <httplib.h>

namespace umpe::ingest {

std::optional<ImageU8> LiveTileClient::get(int z, std::int64_t x,
                                           std::int64_t y) {
  std::string url = url_template_;
  auto sub = [&url](const std::string& key, const std::string& value) {
    for (std::size_t pos; (pos = url.find(key)) != std::string::npos;)
      url.replace(pos, key.size(), value);
  };
  sub("{z}", std::to_string(z));
  sub("{x}", std::to_string(x));
  sub("{y}", std::to_string(y));
  sub("{token}", token_);
  validate(url.rfind("http://", 0) == 0,
           "live tile URL must be http:// (plain-HTTP client)");
  const std::size_t host_start = 7;
  const std::size_t path_start = url.find('/', host_start);
  validate(path_start != std::string::npos, "malformed tile URL");
  const std::string host = url.substr(0, path_start);
  const std::string path = url.substr(path_start);
  for (int attempt = 0; attempt < max_retries_; ++attempt) {
    httplib::Client cli(host);
    cli.set_connection_timeout(5, 0);
    auto resp = cli.Get(path);
    if (resp && resp->status == 404) return std::nullopt;
    if (resp && resp->status == 200) {
      const fs::path tmp =
          fs::temp_directory_path() /
          ("umpe_tile_" + std::to_string(z) + "_" + std::to_string(x) + "_" +
           std::to_string(y) + ".png");
      std::ofstream os(tmp, std::ios::binary);
      os.write(resp->body.data(), static_cast<std::streamsize>(resp->body.size()));
      os.close();
      ImageU8 img = read_png(tmp.string());
      fs::remove(tmp);
      return img;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(200 * (attempt + 1)));
  }
  throw std::runtime_error("tile fetch failed after retries: " + url);
}

// --- bundle serialization ---

namespace {

json polyline_to_json(const Polyline& pl, int id) {
  json rec;
  rec["id"] = id;
  rec["category"] = pl.category;
  rec["degenerate"] = pl.degenerate;
  json pts = json::array();
  for (const auto& p : pl.points) pts.push_back({p.x, p.y});
  rec["points"] = std::move(pts);
  return rec;
}

Polyline polyline_from_json(const json& rec) {
  Polyline pl;
  pl.category = rec.at("category").get<int>();
  pl.degenerate = rec.value("degenerate", false);
  for (const auto& p : rec.at("points"))
    pl.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  return pl;
}

void write_jsonl(const fs::path& path, const std::vector<json>& records) {
  std::ofstream os(path);
  validate(static_cast<bool>(os), "cannot write " + path.string());
  for (const auto& rec : records) os << rec.dump() << '\n';
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::vector<json> out;
  std::ifstream is(path);
  validate(static_cast<bool>(is), "cannot read " + path.string());
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(json::parse(line));
  }
  return out;
}

}  // namespace

void write_bundle(const std::string& dir, const PriorBundle& bundle) {
  fs::create_directories(dir);
  const fs::path root(dir);

  json meta;
  meta["frame_id"] = bundle.frame_id;
  for (int s = 0; s < kNumSources; ++s)
    meta["presence"][source_name(static_cast<SourceId>(s))] =
        bundle.presence.pi[static_cast<std::size_t>(s)];
  meta["mpp"] = {{"sat", {bundle.sat.mpp_x, bundle.sat.mpp_y}},
                 {"rsd", {bundle.rsd.mpp_x, bundle.rsd.mpp_y}}};
  for (int s = 0; s < kNumSources; ++s)
    if (bundle.drift_known[static_cast<std::size_t>(s)]) {
      const auto& d = bundle.drift[static_cast<std::size_t>(s)];
      meta["drift"][source_name(static_cast<SourceId>(s))] = {d.dx, d.dy,
                                                              d.dtheta};
    }
  if (!bundle.flags.empty()) meta["flags"] = bundle.flags;
  meta["has_gt"] = !bundle.gt_raster.empty();
  meta["has_obs"] = !bundle.obs.empty();
  {
    std::ofstream os(root / "meta.json");
    validate(static_cast<bool>(os), "cannot write meta.json in " + dir);
    os << meta.dump(2) << '\n';
  }

  for (const auto* set : {&bundle.hd, &bundle.sd}) {
    std::vector<json> recs;
    int id = 0;
    for (const auto& pl : set->polylines) recs.push_back(polyline_to_json(pl, id++));
    write_jsonl(root / (std::string(source_name(set->source)) + ".jsonl"), recs);
  }
  if (!bundle.sat.image.empty())
    write_png((root / "sat.png").string(), bundle.sat.image);
  if (!bundle.rsd.image.empty())
    write_png((root / "sd_raster.png").string(), bundle.rsd.image);
  if (!bundle.gt_raster.empty())
    write_png((root / "gt.png").string(), bundle.gt_raster);
  if (!bundle.obs.empty()) write_png((root / "obs.png").string(), bundle.obs);
  if (!bundle.gt_instances.empty()) {
    std::vector<json> recs;
    for (const auto& gi : bundle.gt_instances) {
      json rec;
      rec["cls"] = gi.cls;
      json pts = json::array();
      for (const auto& p : gi.points) pts.push_back({p.x, p.y});
      rec["points"] = std::move(pts);
      recs.push_back(std::move(rec));
    }
    write_jsonl(root / "gt.jsonl", recs);
  }
}

PriorBundle read_bundle(const std::string& dir) {
  const fs::path root(dir);
  validate(fs::exists(root / "meta.json"), "not a bundle directory: " + dir);
  json meta;
  {
    std::ifstream is(root / "meta.json");
    is >> meta;
  }
  PriorBundle b;
  b.frame_id = meta.at("frame_id").get<std::int64_t>();
  for (int s = 0; s < kNumSources; ++s)
    b.presence.pi[static_cast<std::size_t>(s)] =
        meta.at("presence").at(source_name(static_cast<SourceId>(s))).get<int>();
  if (meta.contains("drift"))
    for (int s = 0; s < kNumSources; ++s) {
      const char* name = source_name(static_cast<SourceId>(s));
      if (meta["drift"].contains(name)) {
        const auto& d = meta["drift"][name];
        b.drift[static_cast<std::size_t>(s)] = {d.at(0).get<double>(),
                                                d.at(1).get<double>(),
                                                d.at(2).get<double>()};
        b.drift_known[static_cast<std::size_t>(s)] = true;
      }
    }
  if (meta.contains("flags"))
    b.flags = meta["flags"].get<std::vector<std::string>>();

  for (auto* set : {&b.hd, &b.sd}) {
    const fs::path p = root / (std::string(source_name(set->source)) + ".jsonl");
    if (fs::exists(p))
      for (const auto& rec : read_jsonl(p))
        set->polylines.push_back(polyline_from_json(rec));
  }
  auto load_raster = [&](RasterPrior& rp, const char* file, const char* key) {
    const fs::path p = root / file;
    if (!fs::exists(p)) return;
    rp.image = read_png(p.string());
    const auto& mpp = meta.at("mpp").at(key);
    rp.mpp_x = mpp.at(0).get<double>();
    rp.mpp_y = mpp.at(1).get<double>();
  };
  load_raster(b.sat, "sat.png", "sat");
  load_raster(b.rsd, "sd_raster.png", "rsd");
  if (fs::exists(root / "gt.png")) b.gt_raster = read_png((root / "gt.png").string());
  if (fs::exists(root / "obs.png")) b.obs = read_png((root / "obs.png").string());
  if (fs::exists(root / "gt.jsonl"))
    for (const auto& rec : read_jsonl(root / "gt.jsonl")) {
      GtInstance gi;
      gi.cls = rec.at("cls").get<int>();
      for (const auto& p : rec.at("points"))
        gi.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      b.gt_instances.push_back(std::move(gi));
    }
  return b;
}

}  // namespace umpe::ingest
