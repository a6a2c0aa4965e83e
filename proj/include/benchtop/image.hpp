#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "benchtop/common.hpp"

namespace benchtop {

using Color = std::array<std::uint8_t, 3>;

/// Row-major 8-bit RGB image.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;  // height*width*3

  Image() = default;
  Image(int h, int w, Color fill = {0, 0, 0}) : height(h), width(w), data(size_t(h) * w * 3) {
    for (int i = 0; i < h * w; ++i) {
      data[i * 3 + 0] = fill[0];
      data[i * 3 + 1] = fill[1];
      data[i * 3 + 2] = fill[2];
    }
  }

  std::uint8_t* px(int r, int c) { return data.data() + (size_t(r) * width + c) * 3; }
  const std::uint8_t* px(int r, int c) const { return data.data() + (size_t(r) * width + c) * 3; }

  void set(int r, int c, Color col) {
    if (r < 0 || r >= height || c < 0 || c >= width) return;
    auto* p = px(r, c);
    p[0] = col[0];
    p[1] = col[1];
    p[2] = col[2];
  }

  bool operator==(const Image& o) const {
    return height == o.height && width == o.width && data == o.data;
  }
};

/// Maps a world-space rectangle onto pixel coordinates (y up in world,
/// row 0 at the top of the image).
struct Viewport {
  double x0, y0, x1, y1;
  int res;

  double px_per_m() const { return res / (x1 - x0); }

  // World point -> (row, col), not clamped.
  void to_pixel(double x, double y, int* row, int* col) const {
    *col = int((x - x0) / (x1 - x0) * res);
    *row = int((y1 - y) / (y1 - y0) * res);
  }
};

inline void draw_disk(Image& im, const Viewport& vp, double x, double y, double radius,
                      Color col) {
  int r0, c0;
  vp.to_pixel(x, y, &r0, &c0);
  int pr = std::max(1, int(radius * vp.px_per_m()));
  for (int dr = -pr; dr <= pr; ++dr)
    for (int dc = -pr; dc <= pr; ++dc)
      if (dr * dr + dc * dc <= pr * pr) im.set(r0 + dr, c0 + dc, col);
}

inline void draw_rect(Image& im, const Viewport& vp, double cx, double cy, double hx, double hy,
                      Color col) {
  int r0, c0, r1, c1;
  vp.to_pixel(cx - hx, cy + hy, &r0, &c0);
  vp.to_pixel(cx + hx, cy - hy, &r1, &c1);
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) im.set(r, c, col);
}

inline void draw_segment(Image& im, const Viewport& vp, double x0, double y0, double x1,
                         double y1, double thickness, Color col) {
  double len = std::hypot(x1 - x0, y1 - y0);
  int steps = std::max(2, int(len * vp.px_per_m() * 2));
  int pt = std::max(1, int(thickness * vp.px_per_m() * 0.5));
  for (int i = 0; i <= steps; ++i) {
    double a = double(i) / steps;
    int r, c;
    vp.to_pixel(x0 + a * (x1 - x0), y0 + a * (y1 - y0), &r, &c);
    for (int dr = -pt; dr <= pt; ++dr)
      for (int dc = -pt; dc <= pt; ++dc) im.set(r + dr, c + dc, col);
  }
}

}  // namespace benchtop
