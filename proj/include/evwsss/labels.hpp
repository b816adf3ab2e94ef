#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "evwsss/errors.hpp"

namespace evwsss {

// Class id 255 marks ignored pixels in label maps and pseudo-labels.
inline constexpr int kIgnoreLabel = 255;

enum class LabelMode { OneClickPerClass, TenClicksPerClass };

inline int max_points_per_class(LabelMode m) { return m == LabelMode::OneClickPerClass ? 1 : 10; }

inline std::string to_string(LabelMode m) { return m == LabelMode::OneClickPerClass ? "1C1C" : "1C10C"; }

inline std::optional<LabelMode> parse_label_mode(const std::string& s) {
  if (s == "1C1C") return LabelMode::OneClickPerClass;
  if (s == "1C10C") return LabelMode::TenClicksPerClass;
  return std::nullopt;
}

struct LabelPoint {
  int x = 0;
  int y = 0;
  int class_id = 0;  // 0-based; 0 is background in synthetic data
  friend bool operator==(const LabelPoint&, const LabelPoint&) = default;
};

// Sparse click annotations t = {(x, y, c)} for one frame.
struct PointLabelSet {
  std::vector<LabelPoint> points;
  LabelMode mode = LabelMode::OneClickPerClass;

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }
  friend bool operator==(const PointLabelSet&, const PointLabelSet&) = default;
};

// Every constraint violation, phrased for display. Empty means valid.
inline std::vector<std::string> label_violations(const PointLabelSet& labels, int width, int height,
                                                 int num_classes) {
  std::vector<std::string> out;
  std::map<int, int> per_class;
  std::set<std::pair<int, int>> seen;
  for (const auto& p : labels.points) {
    const std::string where = "(" + std::to_string(p.x) + "," + std::to_string(p.y) + ")";
    if (p.x < 0 || p.y < 0 || p.x >= width || p.y >= height) out.push_back("point " + where + " out of bounds");
    if (p.class_id < 0 || p.class_id >= num_classes)
      out.push_back("point " + where + " has unknown class " + std::to_string(p.class_id));
    if (!seen.insert({p.x, p.y}).second) out.push_back("duplicate pixel " + where);
    ++per_class[p.class_id];
  }
  const int limit = max_points_per_class(labels.mode);
  for (const auto& [c, n] : per_class)
    if (n > limit)
      out.push_back("class " + std::to_string(c) + " has " + std::to_string(n) + " points, " + to_string(labels.mode) +
                    " allows " + std::to_string(limit));
  return out;
}

// H x W class-id map: dense ground truth or thresholded pseudo-labels.
struct LabelMap {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> values;  // row-major

  LabelMap() = default;
  LabelMap(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const noexcept { return values.size(); }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

inline void validate_labels(const PointLabelSet& labels, int width, int height, int num_classes) {
  auto v = label_violations(labels, width, height, num_classes);
  if (!v.empty()) throw ValidationError(std::move(v));
}

}  // namespace evwsss
