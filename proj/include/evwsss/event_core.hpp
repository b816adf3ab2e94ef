#pragma once

// Event-stream data model: windowing, backward selection, time reversal,
// voxel-grid stacking and frame rendering.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "evwsss/errors.hpp"
#include "evwsss/image.hpp"
#include "evwsss/tensor.hpp"

namespace evwsss::events {

using Timestamp = std::int64_t;  // microseconds

inline constexpr Timestamp kForever = std::numeric_limits<Timestamp>::max();

struct Event {
  int x = 0;
  int y = 0;
  Timestamp t = 0;
  int p = 1;  // +1 or -1

  friend bool operator==(const Event&, const Event&) = default;
};

struct SensorSize {
  int width = 0;
  int height = 0;
  friend bool operator==(const SensorSize&, const SensorSize&) = default;
};

// Time-ordered events on a fixed sensor. Construction checks every invariant.
class EventStream {
 public:
  EventStream() = default;
  EventStream(SensorSize sensor, std::vector<Event> events)
      : sensor_(sensor), events_(std::move(events)) {
    validate();
  }

  SensorSize sensor() const noexcept { return sensor_; }
  int width() const noexcept { return sensor_.width; }
  int height() const noexcept { return sensor_.height; }
  std::span<const Event> events() const noexcept { return events_; }
  std::size_t size() const noexcept { return events_.size(); }
  bool empty() const noexcept { return events_.empty(); }
  const Event& operator[](std::size_t i) const { return events_[i]; }
  auto begin() const noexcept { return events_.begin(); }
  auto end() const noexcept { return events_.end(); }

  Timestamp t_min() const { return events_.empty() ? 0 : events_.front().t; }
  Timestamp t_max() const { return events_.empty() ? 0 : events_.back().t; }

  friend bool operator==(const EventStream&, const EventStream&) = default;

 private:
  void validate() const {
    if (sensor_.width <= 0 || sensor_.height <= 0) throw ArgumentError("sensor size must be positive");
    for (std::size_t i = 0; i < events_.size(); ++i) {
      const Event& e = events_[i];
      if (e.p != 1 && e.p != -1)
        throw ArgumentError("event " + std::to_string(i) + ": polarity must be +1 or -1");
      if (e.x < 0 || e.y < 0 || e.x >= sensor_.width || e.y >= sensor_.height)
        throw ArgumentError("event " + std::to_string(i) + ": coordinates out of sensor bounds");
      if (e.t < 0) throw ArgumentError("event " + std::to_string(i) + ": negative timestamp");
      if (i > 0 && e.t < events_[i - 1].t)
        throw ArgumentError("event " + std::to_string(i) + ": timestamps not sorted");
    }
  }

  SensorSize sensor_{1, 1};
  std::vector<Event> events_;
};

// Events with t0 <= t < t1, order preserved.
inline EventStream slice_window(const EventStream& stream, Timestamp t0, Timestamp t1) {
  if (t0 >= t1) throw ArgumentError("slice_window: need t0 < t1");
  const auto ev = stream.events();
  auto lo = std::lower_bound(ev.begin(), ev.end(), t0, [](const Event& e, Timestamp t) { return e.t < t; });
  auto hi = std::lower_bound(lo, ev.end(), t1, [](const Event& e, Timestamp t) { return e.t < t; });
  return EventStream(stream.sensor(), std::vector<Event>(lo, hi));
}

// The first ratio * n_forward events at or after T.
inline EventStream select_backward(const EventStream& stream, Timestamp T, std::size_t n_forward,
                                   std::size_t ratio) {
  if (ratio < 1) throw ArgumentError("select_backward: ratio must be >= 1");
  const auto ev = stream.events();
  auto lo = std::lower_bound(ev.begin(), ev.end(), T, [](const Event& e, Timestamp t) { return e.t < t; });
  const std::size_t avail = static_cast<std::size_t>(ev.end() - lo);
  const std::size_t take = std::min(avail, n_forward * ratio);
  return EventStream(stream.sensor(), std::vector<Event>(lo, lo + static_cast<std::ptrdiff_t>(take)));
}

// Time reversal within the stream's own [t_min, t_max]: t -> t_min + t_max - t,
// p -> -p. Reversing the sequence keeps it sorted, and applying this twice
// restores the original order of equal-timestamp events.
inline EventStream reverse(const EventStream& stream) {
  if (stream.empty()) return stream;
  const Timestamp span = stream.t_min() + stream.t_max();
  std::vector<Event> out;
  out.reserve(stream.size());
  for (auto it = stream.events().rbegin(); it != stream.events().rend(); ++it)
    out.push_back({it->x, it->y, span - it->t, -it->p});
  return EventStream(stream.sensor(), std::move(out));
}

struct VoxelizationConfig {
  int num_bins = 5;
  SensorSize sensor;
  Timestamp t_start = 0;
  Timestamp t_end = 1;

  void validate() const {
    if (num_bins < 1) throw ArgumentError("voxelize: num_bins must be >= 1");
    if (t_end <= t_start) throw ArgumentError("voxelize: need t_end > t_start");
    if (sensor.width <= 0 || sensor.height <= 0) throw ArgumentError("voxelize: bad sensor size");
  }
};

struct VoxelGrid {
  Tensor<double> data;  // num_bins x H x W
  Timestamp t_start = 0;
  Timestamp t_end = 1;

  int num_bins() const { return static_cast<int>(data.dim(0)); }
};

// Bilinear temporal stacking. Each event at normalized time
// t* = (B-1)(t - t_start)/(t_end - t_start) adds p * max(0, 1 - |b - t*|) to
// bin b of its pixel. Events must lie in [t_start, t_end]; an event at t_end
// lands entirely in the last bin.
inline VoxelGrid voxelize(const EventStream& stream, const VoxelizationConfig& cfg) {
  cfg.validate();
  if (stream.sensor() != cfg.sensor) throw ArgumentError("voxelize: sensor size mismatch");
  const auto B = static_cast<std::size_t>(cfg.num_bins);
  const auto H = static_cast<std::size_t>(cfg.sensor.height);
  const auto W = static_cast<std::size_t>(cfg.sensor.width);
  VoxelGrid grid{Tensor<double>({B, H, W}), cfg.t_start, cfg.t_end};
  const double scale = static_cast<double>(cfg.num_bins - 1) / static_cast<double>(cfg.t_end - cfg.t_start);
  for (const Event& e : stream) {
    if (e.t < cfg.t_start || e.t > cfg.t_end)
      throw ArgumentError("voxelize: event at t=" + std::to_string(e.t) + " outside window");
    const double ts = scale * static_cast<double>(e.t - cfg.t_start);
    const auto b0 = std::min(static_cast<std::size_t>(ts), B - 1);
    const double frac = ts - static_cast<double>(b0);
    const auto y = static_cast<std::size_t>(e.y);
    const auto x = static_cast<std::size_t>(e.x);
    grid.data(b0, y, x) += e.p * (1.0 - frac);
    if (b0 + 1 < B && frac > 0.0) grid.data(b0 + 1, y, x) += e.p * frac;
  }
  return grid;
}

// Frame colors for annotation display.
inline constexpr std::uint8_t kBackground[3] = {255, 255, 255};
inline constexpr std::uint8_t kPositive[3] = {30, 80, 220};
inline constexpr std::uint8_t kNegative[3] = {220, 40, 40};

// Per-pixel net polarity: positive mass one hue, negative another, untouched
// or cancelled pixels background.
inline RgbImage render_frame(const EventStream& stream) {
  const int W = stream.width(), H = stream.height();
  std::vector<long> net(static_cast<std::size_t>(W) * H, 0);
  for (const Event& e : stream) net[static_cast<std::size_t>(e.y) * W + e.x] += e.p;
  RgbImage img(W, H, kBackground[0], kBackground[1], kBackground[2]);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const long m = net[static_cast<std::size_t>(y) * W + x];
      if (m > 0) img.set(x, y, kPositive[0], kPositive[1], kPositive[2]);
      if (m < 0) img.set(x, y, kNegative[0], kNegative[1], kNegative[2]);
    }
  return img;
}

// Text format: "# width=<W> height=<H>" then one "t x y p" line per event.
inline void write_events(std::ostream& os, const EventStream& stream) {
  os << "# width=" << stream.width() << " height=" << stream.height() << "\n";
  for (const Event& e : stream) os << e.t << ' ' << e.x << ' ' << e.y << ' ' << e.p << '\n';
}

inline EventStream read_events(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("event file: missing header");
  SensorSize sensor{};
  if (std::sscanf(line.c_str(), "# width=%d height=%d", &sensor.width, &sensor.height) != 2)
    throw FormatError("event file: bad header '" + line + "'");
  std::vector<Event> events;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    Event e;
    if (!(ls >> e.t >> e.x >> e.y >> e.p))
      throw FormatError("event file: malformed line " + std::to_string(lineno));
    events.push_back(e);
  }
  try {
    return EventStream(sensor, std::move(events));
  } catch (const ArgumentError& err) {
    throw FormatError(std::string("event file: ") + err.what());
  }
}

inline void save_events(const std::filesystem::path& path, const EventStream& stream) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_events(os, stream);
}

inline EventStream load_events(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw NotFoundError("cannot open " + path.string());
  return read_events(is);
}

}  // namespace evwsss::events
