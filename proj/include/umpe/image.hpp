// SPDX-License-Identifier: Apache-2.0
//
// 8-bit RGB raster support: lossless PNG round-trips for bundle storage,
// plus the deterministic drawing primitives used by SD rasterization and
// the synthetic world renderer.

#pragma once

#include <array>
#include <string>
#include <vector>

#include "umpe/geometry.hpp"
#include "umpe/tensor.hpp"

namespace umpe {

using Rgb = std::array<unsigned char, 3>;

struct ImageU8 {
  int h = 0;
  int w = 0;
  std::vector<unsigned char> pix;  // row-major, 3 channels

  ImageU8() = default;
  ImageU8(int h_, int w_, Rgb fill = {0, 0, 0});

  bool empty() const { return h == 0 || w == 0; }
  unsigned char& at(int r, int c, int ch) {
    return pix[static_cast<std::size_t>((r * w + c) * 3 + ch)];
  }
  unsigned char at(int r, int c, int ch) const {
    return pix[static_cast<std::size_t>((r * w + c) * 3 + ch)];
  }
  void set(int r, int c, Rgb color) {
    for (int ch = 0; ch < 3; ++ch) at(r, c, ch) = color[ch];
  }
  Rgb get(int r, int c) const { return {at(r, c, 0), at(r, c, 1), at(r, c, 2)}; }
  bool operator==(const ImageU8& o) const {
    return h == o.h && w == o.w && pix == o.pix;
  }
};

void write_png(const std::string& path, const ImageU8& img);
ImageU8 read_png(const std::string& path);

/// [0,255] u8 -> [0,1] double tensor of shape [3,H,W] (channel-first).
nn::Tensor image_to_tensor(const ImageU8& img);
/// Inverse of image_to_tensor; values clamped to [0,1] then quantized.
ImageU8 tensor_to_image(const nn::Tensor& t);

/// Bresenham stroke between pixel coordinates, stamping a stroke_px-wide
/// square brush at every step.
void draw_line_px(ImageU8& img, int r0, int c0, int r1, int c1, Rgb color,
                  int stroke_px);

/// Strokes a metric-space polyline onto the canvas under `grid`.
void draw_polyline(ImageU8& img, const geom::BEVGridSpec& grid,
                   const geom::PointArray& pts, Rgb color, int stroke_px);

/// Even-odd scanline fill of a metric-space polygon.
void fill_polygon(ImageU8& img, const geom::BEVGridSpec& grid,
                  const geom::PointArray& ring, Rgb color);

/// In-place 3x3 box blur, `passes` times (integer arithmetic, deterministic).
void blur_box3(ImageU8& img, int passes);

/// Bilinear sample at fractional pixel coordinates (r, c are pixel-center
/// based); out-of-bounds contributions take `background`.
Rgb sample_bilinear_px(const ImageU8& img, double r, double c, Rgb background);

/// Bilinear rotation by `angle` (counter-clockwise in pixel space) about the
/// canvas center; out-of-bounds samples take `background`.
ImageU8 rotate_bilinear(const ImageU8& img, double angle, Rgb background);

ImageU8 resize_bilinear(const ImageU8& img, int oh, int ow);

}  // namespace umpe
