// SPDX-License-Identifier: Apache-2.0

#include "umpe/priors.hpp"

namespace umpe {

namespace {

constexpr const char* kSourceNames[kNumSources] = {"hd", "sd", "sat", "rsd"};

constexpr const char* kCategoryNames[kNumCategories] = {
    "motorway", "trunk", "primary", "secondary",
    "tertiary", "residential", "service", "pedestrian"};

// Pairwise-distinct class colors, loosely following the usual road-map look.
constexpr Rgb kPalette[kNumCategories] = {
    {230, 145, 161},  // motorway
    {249, 178, 156},  // trunk
    {252, 214, 164},  // primary
    {247, 250, 191},  // secondary
    {255, 255, 255},  // tertiary
    {200, 200, 200},  // residential
    {160, 160, 160},  // service
    {120, 190, 120},  // pedestrian
};

constexpr Rgb kBackground = {42, 42, 48};

constexpr const char* kMapClassNames[kNumMapClasses] = {"ped_crossing",
                                                        "divider", "boundary"};

}  // namespace

const char* source_name(SourceId s) { return kSourceNames[static_cast<int>(s)]; }

SourceId source_from_name(const std::string& name) {
  for (int i = 0; i < kNumSources; ++i)
    if (name == kSourceNames[i]) return static_cast<SourceId>(i);
  throw ValidationError("unknown source name: " + name);
}

const char* category_name(int idx) {
  validate(idx >= 0 && idx < kNumCategories, "category index out of range");
  return kCategoryNames[idx];
}

Rgb palette_color(int category) {
  validate(category >= 0 && category < kNumCategories,
           "palette index out of range");
  return kPalette[category];
}

Rgb palette_background() { return kBackground; }

const char* map_class_name(int idx) {
  validate(idx >= 0 && idx < kNumMapClasses, "map class index out of range");
  return kMapClassNames[idx];
}

}  // namespace umpe
