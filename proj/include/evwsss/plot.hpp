#pragma once

// Minimal raster charts for harness summaries: line series and bar charts on
// a white canvas with a light grid. No text; the CSV export carries numbers.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <limits>
#include <utility>
#include <vector>

#include "evwsss/image.hpp"

namespace evwsss::plot {

using Color = std::array<std::uint8_t, 3>;

inline Color series_color(std::size_t i) {
  static constexpr Color kColors[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40},
                                      {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127}};
  return kColors[i % std::size(kColors)];
}

struct Series {
  std::vector<std::pair<double, double>> points;
  Color color{0, 0, 0};
};

namespace detail {

struct Frame {
  int width, height, margin;
  double x0, x1, y0, y1;

  int px(double x) const { return margin + static_cast<int>(std::lround((x - x0) / (x1 - x0) * (width - 2 * margin))); }
  int py(double y) const {
    return height - margin - static_cast<int>(std::lround((y - y0) / (y1 - y0) * (height - 2 * margin)));
  }
};

inline void put(RgbImage& img, int x, int y, Color c) {
  if (x >= 0 && y >= 0 && x < img.width && y < img.height) img.set(x, y, c[0], c[1], c[2]);
}

inline void line(RgbImage& img, int xa, int ya, int xb, int yb, Color c) {
  const int n = std::max({std::abs(xb - xa), std::abs(yb - ya), 1});
  for (int i = 0; i <= n; ++i)
    put(img, xa + (xb - xa) * i / n, ya + (yb - ya) * i / n, c);
}

inline RgbImage canvas(const Frame& f) {
  RgbImage img(f.width, f.height, 255, 255, 255);
  const Color grid{225, 225, 225}, axis{0, 0, 0};
  for (int k = 0; k <= 4; ++k) {
    const int y = f.margin + (f.height - 2 * f.margin) * k / 4;
    line(img, f.margin, y, f.width - f.margin, y, grid);
  }
  line(img, f.margin, f.height - f.margin, f.width - f.margin, f.height - f.margin, axis);
  line(img, f.margin, f.margin, f.margin, f.height - f.margin, axis);
  return img;
}

inline std::pair<double, double> padded(double lo, double hi) {
  if (!(hi > lo)) return {lo - 1.0, hi + 1.0};
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

}  // namespace detail

inline void write_line_chart(const std::filesystem::path& path, const std::vector<Series>& series, int width = 640,
                             int height = 400) {
  double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo, ylo = xlo, yhi = -xlo;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      xlo = std::min(xlo, x), xhi = std::max(xhi, x), ylo = std::min(ylo, y), yhi = std::max(yhi, y);
    }
  if (!std::isfinite(xlo)) xlo = 0, xhi = 1, ylo = 0, yhi = 1;
  const auto [x0, x1] = detail::padded(xlo, xhi);
  const auto [y0, y1] = detail::padded(ylo, yhi);
  const detail::Frame f{width, height, 30, x0, x1, y0, y1};
  RgbImage img = detail::canvas(f);
  for (const auto& s : series) {
    for (std::size_t i = 1; i < s.points.size(); ++i)
      detail::line(img, f.px(s.points[i - 1].first), f.py(s.points[i - 1].second), f.px(s.points[i].first),
                   f.py(s.points[i].second), s.color);
    for (const auto& [x, y] : s.points)
      for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx) detail::put(img, f.px(x) + dx, f.py(y) + dy, s.color);
  }
  write_png(path, img);
}

inline void write_bar_chart(const std::filesystem::path& path, const std::vector<double>& values, int width = 640,
                            int height = 400) {
  double hi = 0.0;
  for (double v : values)
    if (std::isfinite(v)) hi = std::max(hi, v);
  const detail::Frame f{width, height, 30, 0.0, static_cast<double>(std::max<std::size_t>(values.size(), 1)), 0.0,
                        hi > 0 ? hi * 1.05 : 1.0};
  RgbImage img = detail::canvas(f);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) continue;
    const int xa = f.px(static_cast<double>(i) + 0.15), xb = f.px(static_cast<double>(i) + 0.85);
    const int ya = f.py(values[i]), yb = f.py(0.0);
    for (int x = xa; x <= xb; ++x) detail::line(img, x, ya, x, yb, series_color(i));
  }
  write_png(path, img);
}

}  // namespace evwsss::plot
