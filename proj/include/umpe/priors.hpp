// SPDX-License-Identifier: Apache-2.0
//
// Shared carrier types for the four map priors and the per-frame bundle.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "umpe/geometry.hpp"
#include "umpe/image.hpp"

namespace umpe {

enum class SourceId : int { HD = 0, SD = 1, Sat = 2, RSD = 3 };
inline constexpr int kNumSources = 4;
const char* source_name(SourceId s);
SourceId source_from_name(const std::string& name);

/// The two gating families: {HD, SD} and {Sat, RSD}.
inline constexpr std::array<SourceId, 2> kVectorFamily{SourceId::HD, SourceId::SD};
inline constexpr std::array<SourceId, 2> kRasterFamily{SourceId::Sat, SourceId::RSD};

/// Unified 8-class category vocabulary (SD road classes; synthetic HD
/// boundaries inherit the class of the road they bound).
inline constexpr int kNumCategories = 8;
const char* category_name(int idx);

/// Fixed rasterization palette, one distinct color per SD class, plus the
/// canvas background. Later classes overdraw earlier ones.
Rgb palette_color(int category);
Rgb palette_background();

/// Mapping task classes (decoder output channels and AP classes).
enum class MapClass : int { PedCrossing = 0, Divider = 1, Boundary = 2 };
inline constexpr int kNumMapClasses = 3;
const char* map_class_name(int idx);

struct Polyline {
  geom::PointArray points;  // exactly kPolylinePoints after preparation
  int category = 0;
  bool degenerate = false;
};

struct PolylineSet {
  SourceId source = SourceId::HD;
  std::vector<Polyline> polylines;

  int count() const { return static_cast<int>(polylines.size()); }
  bool empty() const { return polylines.empty(); }
};

struct RasterPrior {
  SourceId source = SourceId::Sat;
  ImageU8 image;  // dims equal the BEV canvas
  double mpp_x = 0.0;
  double mpp_y = 0.0;
};

struct PresenceMask {
  std::array<int, kNumSources> pi{0, 0, 0, 0};

  bool present(SourceId s) const { return pi[static_cast<int>(s)] != 0; }
  void set(SourceId s, bool on) { pi[static_cast<int>(s)] = on ? 1 : 0; }
  bool any_of(const std::array<SourceId, 2>& family) const {
    return present(family[0]) || present(family[1]);
  }
  static PresenceMask all_present() { return {{1, 1, 1, 1}}; }
};

/// Ground-truth map instance (synthetic benchmark supervision).
struct GtInstance {
  int cls = 0;  // MapClass
  geom::PointArray points;
};

/// One frame's full prior set. Absent sources carry empty payloads.
struct PriorBundle {
  std::int64_t frame_id = 0;
  PolylineSet hd{SourceId::HD, {}};
  PolylineSet sd{SourceId::SD, {}};
  RasterPrior sat{SourceId::Sat, {}, 0, 0};
  RasterPrior rsd{SourceId::RSD, {}, 0, 0};
  PresenceMask presence;
  std::array<geom::Pose2, kNumSources> drift{};  // injected GT misalignment
  std::array<bool, kNumSources> drift_known{};   // synthetic frames only

  // Synthetic supervision (absent on pure ingest bundles).
  ImageU8 gt_raster;                  // 3 class masks packed into RGB
  ImageU8 obs;                        // corrupted BEV observation
  std::vector<GtInstance> gt_instances;
  std::vector<std::string> flags;     // e.g. "missing_tiles"

  const PolylineSet& vector_source(SourceId s) const {
    return s == SourceId::HD ? hd : sd;
  }
  const RasterPrior& raster_source(SourceId s) const {
    return s == SourceId::Sat ? sat : rsd;
  }
};

}  // namespace umpe
