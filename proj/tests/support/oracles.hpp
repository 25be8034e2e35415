#pragma once

// Brute-force reference implementations written straight from the formulas,
// sharing no code with the library.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <set>
#include <utility>
#include <vector>

namespace crownpipe::oracle {

// Slope in degrees from the (1,2,1) weighted 3x3 differences, with
// out-of-range neighbours clamped to the nearest edge cell.
inline double horn_slope(const std::vector<double>& z, int w, int h, double cell, int x, int y) {
  auto at = [&](int dx, int dy) {
    const int cx = std::clamp(x + dx, 0, w - 1);
    const int cy = std::clamp(y + dy, 0, h - 1);
    return z[static_cast<std::size_t>(cy) * w + cx];
  };
  const double a = at(-1, -1), b = at(0, -1), c = at(1, -1);
  const double d = at(-1, 0), f = at(1, 0);
  const double g = at(-1, 1), hh = at(0, 1), i = at(1, 1);
  const double dzdx = ((c + 2 * f + i) - (a + 2 * d + g)) / (8 * cell);
  const double dzdy = ((g + 2 * hh + i) - (a + 2 * b + c)) / (8 * cell);
  return std::atan(std::sqrt(dzdx * dzdx + dzdy * dzdy)) * 180.0 / std::numbers::pi;
}

using Pixel = std::pair<int, int>;  // (x, y)

struct Region {
  std::vector<Pixel> pixels;
  // values[k][i]: layer k at pixels[i]
  std::array<std::vector<double>, 5> values;
};

inline double region_n(const Region& r) { return static_cast<double>(r.pixels.size()); }

inline double region_sigma(const Region& r, int k) {
  const auto& v = r.values[static_cast<std::size_t>(k)];
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0;
  for (double x : v) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(v.size()));
}

// Pixel edges not shared with another member pixel.
inline double region_perimeter(const Region& r) {
  const std::set<Pixel> s(r.pixels.begin(), r.pixels.end());
  int l = 0;
  for (auto [x, y] : r.pixels)
    for (auto [dx, dy] : {Pixel{1, 0}, Pixel{-1, 0}, Pixel{0, 1}, Pixel{0, -1}})
      if (!s.count({x + dx, y + dy})) ++l;
  return l;
}

inline double region_bbox_perimeter(const Region& r) {
  int x0 = r.pixels[0].first, x1 = x0, y0 = r.pixels[0].second, y1 = y0;
  for (auto [x, y] : r.pixels) {
    x0 = std::min(x0, x);
    x1 = std::max(x1, x);
    y0 = std::min(y0, y);
    y1 = std::max(y1, y);
  }
  return 2.0 * ((x1 - x0 + 1) + (y1 - y0 + 1));
}

inline Region region_union(const Region& a, const Region& b) {
  Region m = a;
  m.pixels.insert(m.pixels.end(), b.pixels.begin(), b.pixels.end());
  for (std::size_t k = 0; k < 5; ++k)
    m.values[k].insert(m.values[k].end(), b.values[k].begin(), b.values[k].end());
  return m;
}

// f = (1 - w_shape) * dh_color + w_shape * (w_c * dh_cmpct + (1 - w_c) * dh_smooth)
inline double fusion_cost(const Region& a, const Region& b, double shape_weight,
                          double compactness_weight, const std::array<double, 5>& weights) {
  const Region m = region_union(a, b);
  double color = 0;
  for (int k = 0; k < 5; ++k)
    color += weights[static_cast<std::size_t>(k)] *
             (region_n(m) * region_sigma(m, k) -
              (region_n(a) * region_sigma(a, k) + region_n(b) * region_sigma(b, k)));
  auto cmpct = [](const Region& r) { return region_perimeter(r) / std::sqrt(region_n(r)); };
  auto smooth = [](const Region& r) { return region_perimeter(r) / region_bbox_perimeter(r); };
  const double d_cmpct =
      region_n(m) * cmpct(m) - (region_n(a) * cmpct(a) + region_n(b) * cmpct(b));
  const double d_smooth =
      region_n(m) * smooth(m) - (region_n(a) * smooth(a) + region_n(b) * smooth(b));
  const double shape = compactness_weight * d_cmpct + (1 - compactness_weight) * d_smooth;
  return (1 - shape_weight) * color + shape_weight * shape;
}

}  // namespace crownpipe::oracle
