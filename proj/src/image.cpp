// SPDX-License-Identifier: Apache-2.0

#include "umpe/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace umpe {

ImageU8::ImageU8(int h_, int w_, Rgb fill) : h(h_), w(w_) {
  pix.resize(static_cast<std::size_t>(h) * w * 3);
  for (int i = 0; i < h * w; ++i)
    for (int ch = 0; ch < 3; ++ch)
      pix[static_cast<std::size_t>(i * 3 + ch)] = fill[ch];
}

void write_png(const std::string& path, const ImageU8& img) {
  validate(!img.empty(), "write_png: empty image");
  png_image pi;
  std::memset(&pi, 0, sizeof pi);
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.w);
  pi.height = static_cast<png_uint_32>(img.h);
  pi.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&pi, path.c_str(), 0, img.pix.data(),
                               static_cast<png_int_32>(img.w * 3), nullptr))
    throw std::runtime_error("png write failed: " + path + ": " + pi.message);
}

ImageU8 read_png(const std::string& path) {
  png_image pi;
  std::memset(&pi, 0, sizeof pi);
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.c_str()))
    throw ValidationError("png read failed: " + path + ": " + pi.message);
  pi.format = PNG_FORMAT_RGB;
  ImageU8 img(static_cast<int>(pi.height), static_cast<int>(pi.width));
  if (!png_image_finish_read(&pi, nullptr, img.pix.data(),
                             static_cast<png_int_32>(img.w * 3), nullptr))
    throw ValidationError("png decode failed: " + path + ": " + pi.message);
  return img;
}

nn::Tensor image_to_tensor(const ImageU8& img) {
  nn::Tensor t({3, img.h, img.w});
  for (int r = 0; r < img.h; ++r)
    for (int c = 0; c < img.w; ++c)
      for (int ch = 0; ch < 3; ++ch)
        t[(static_cast<std::int64_t>(ch) * img.h + r) * img.w + c] =
            img.at(r, c, ch) / 255.0;
  return t;
}

ImageU8 tensor_to_image(const nn::Tensor& t) {
  validate(t.ndim() == 3 && t.dim(0) == 3, "tensor_to_image expects [3,H,W]");
  const int h = static_cast<int>(t.dim(1));
  const int w = static_cast<int>(t.dim(2));
  ImageU8 img(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        double v = t[(static_cast<std::int64_t>(ch) * h + r) * w + c];
        v = std::min(1.0, std::max(0.0, v));
        img.at(r, c, ch) = static_cast<unsigned char>(std::lround(v * 255.0));
      }
  return img;
}

namespace {

void stamp(ImageU8& img, int r, int c, Rgb color, int stroke_px) {
  const int lo = -(stroke_px - 1) / 2;
  const int hi = stroke_px / 2;
  for (int dr = lo; dr <= hi; ++dr)
    for (int dc = lo; dc <= hi; ++dc) {
      const int rr = r + dr, cc = c + dc;
      if (rr >= 0 && rr < img.h && cc >= 0 && cc < img.w)
        img.set(rr, cc, color);
    }
}

}  // namespace

void draw_line_px(ImageU8& img, int r0, int c0, int r1, int c1, Rgb color,
                  int stroke_px) {
  int dr = std::abs(r1 - r0), dc = std::abs(c1 - c0);
  int sr = r0 < r1 ? 1 : -1, sc = c0 < c1 ? 1 : -1;
  int err = (dc > dr ? dc : -dr) / 2;
  for (;;) {
    stamp(img, r0, c0, color, stroke_px);
    if (r0 == r1 && c0 == c1) break;
    int e2 = err;
    if (e2 > -dc) {
      err -= dr;
      c0 += sc;
    }
    if (e2 < dr) {
      err += dc;
      r0 += sr;
    }
  }
}

void draw_polyline(ImageU8& img, const geom::BEVGridSpec& grid,
                   const geom::PointArray& pts, Rgb color, int stroke_px) {
  if (pts.empty()) return;
  auto to_px = [&](const geom::Vec2& p, int& r, int& c) {
    r = static_cast<int>(std::lround(grid.row_of_y(p.y)));
    c = static_cast<int>(std::lround(grid.col_of_x(p.x)));
  };
  int pr, pc;
  to_px(pts[0], pr, pc);
  if (pts.size() == 1) {
    stamp(img, pr, pc, color, stroke_px);
    return;
  }
  for (std::size_t i = 1; i < pts.size(); ++i) {
    int r, c;
    to_px(pts[i], r, c);
    draw_line_px(img, pr, pc, r, c, color, stroke_px);
    pr = r;
    pc = c;
  }
}

void fill_polygon(ImageU8& img, const geom::BEVGridSpec& grid,
                  const geom::PointArray& ring, Rgb color) {
  if (ring.size() < 3) return;
  // Vertices in pixel space (float), even-odd rule against pixel centers.
  std::vector<double> rs(ring.size()), cs(ring.size());
  for (std::size_t i = 0; i < ring.size(); ++i) {
    rs[i] = grid.row_of_y(ring[i].y);
    cs[i] = grid.col_of_x(ring[i].x);
  }
  for (int r = 0; r < img.h; ++r) {
    const double ry = static_cast<double>(r);
    std::vector<double> xs;
    for (std::size_t i = 0; i < ring.size(); ++i) {
      const std::size_t j = (i + 1) % ring.size();
      const double y0 = rs[i], y1 = rs[j];
      if ((y0 <= ry && y1 > ry) || (y1 <= ry && y0 > ry)) {
        const double t = (ry - y0) / (y1 - y0);
        xs.push_back(cs[i] + t * (cs[j] - cs[i]));
      }
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      int c0 = static_cast<int>(std::ceil(xs[k]));
      int c1 = static_cast<int>(std::floor(xs[k + 1]));
      c0 = std::max(c0, 0);
      c1 = std::min(c1, img.w - 1);
      for (int c = c0; c <= c1; ++c) img.set(r, c, color);
    }
  }
}

void blur_box3(ImageU8& img, int passes) {
  for (int p = 0; p < passes; ++p) {
    ImageU8 src = img;
    for (int r = 0; r < img.h; ++r)
      for (int c = 0; c < img.w; ++c)
        for (int ch = 0; ch < 3; ++ch) {
          int acc = 0, n = 0;
          for (int dr = -1; dr <= 1; ++dr)
            for (int dc = -1; dc <= 1; ++dc) {
              const int rr = r + dr, cc = c + dc;
              if (rr >= 0 && rr < img.h && cc >= 0 && cc < img.w) {
                acc += src.at(rr, cc, ch);
                ++n;
              }
            }
          img.at(r, c, ch) = static_cast<unsigned char>((acc + n / 2) / n);
        }
  }
}

namespace {

Rgb sample_bilinear(const ImageU8& img, double r, double c, Rgb background) {
  const int r0 = static_cast<int>(std::floor(r));
  const int c0 = static_cast<int>(std::floor(c));
  const double fr = r - r0, fc = c - c0;
  Rgb out;
  for (int ch = 0; ch < 3; ++ch) {
    double acc = 0.0;
    for (int dr = 0; dr < 2; ++dr)
      for (int dc = 0; dc < 2; ++dc) {
        const int rr = r0 + dr, cc = c0 + dc;
        const double wgt = (dr ? fr : 1 - fr) * (dc ? fc : 1 - fc);
        const double v = (rr >= 0 && rr < img.h && cc >= 0 && cc < img.w)
                             ? img.at(rr, cc, ch)
                             : background[ch];
        acc += wgt * v;
      }
    out[ch] = static_cast<unsigned char>(std::lround(std::clamp(acc, 0.0, 255.0)));
  }
  return out;
}

}  // namespace

Rgb sample_bilinear_px(const ImageU8& img, double r, double c, Rgb background) {
  return sample_bilinear(img, r, c, background);
}

ImageU8 rotate_bilinear(const ImageU8& img, double angle, Rgb background) {
  ImageU8 out(img.h, img.w, background);
  // Pixel-grid center; half-integer for even dims so axis-aligned rotations
  // map pixel centers onto pixel centers exactly.
  const double cr = (img.h - 1) / 2.0;
  const double cc = (img.w - 1) / 2.0;
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (int r = 0; r < out.h; ++r)
    for (int c = 0; c < out.w; ++c) {
      const double dr = r - cr, dc = c - cc;
      // Inverse rotation of the output pixel into source coordinates.
      const double sr2 = ca * dr - sa * dc + cr;
      const double sc2 = sa * dr + ca * dc + cc;
      out.set(r, c, sample_bilinear(img, sr2, sc2, background));
    }
  return out;
}

ImageU8 resize_bilinear(const ImageU8& img, int oh, int ow) {
  validate(oh > 0 && ow > 0, "resize target must be positive");
  ImageU8 out(oh, ow);
  const double sr = oh > 1 ? static_cast<double>(img.h - 1) / (oh - 1) : 0.0;
  const double sc = ow > 1 ? static_cast<double>(img.w - 1) / (ow - 1) : 0.0;
  for (int r = 0; r < oh; ++r)
    for (int c = 0; c < ow; ++c)
      out.set(r, c, sample_bilinear(img, r * sr, c * sc, {0, 0, 0}));
  return out;
}

}  // namespace umpe
