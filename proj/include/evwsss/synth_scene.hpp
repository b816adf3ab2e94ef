#pragma once

// Threshold-crossing event simulator over rasterized moving shapes, dense
// ground truth, click sampling and label corruption.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "evwsss/errors.hpp"
#include "evwsss/event_core.hpp"
#include "evwsss/labels.hpp"
#include "evwsss/rng.hpp"

namespace evwsss::synth {

using events::Event;
using events::EventStream;
using events::SensorSize;
using events::Timestamp;

enum class Shape { Disk, Rectangle, Bar };

inline std::string to_string(Shape s) {
  switch (s) {
    case Shape::Disk: return "disk";
    case Shape::Rectangle: return "rectangle";
    case Shape::Bar: return "bar";
  }
  return "?";
}

inline Shape parse_shape(const std::string& s) {
  if (s == "disk") return Shape::Disk;
  if (s == "rectangle") return Shape::Rectangle;
  if (s == "bar") return Shape::Bar;
  throw ArgumentError("unknown shape '" + s + "'");
}

// A textured shape translating at constant velocity. Disks use half_extent_x
// as the radius; rectangles and bars are boxes rotated by `angle`.
struct SceneObject {
  int class_id = 1;
  Shape shape = Shape::Disk;
  double half_extent_x = 4.0;
  double half_extent_y = 4.0;
  double angle = 0.0;            // radians
  double intensity = 2.0;        // > 0
  double texture = 0.0;          // relative modulation amplitude, in [0, 1)
  double texture_period = 6.0;   // pixels
  double x0 = 0.0, y0 = 0.0;     // center at t = 0
  double vx = 0.0, vy = 0.0;     // pixels per second

  double cx(Timestamp t) const { return x0 + vx * static_cast<double>(t) * 1e-6; }
  double cy(Timestamp t) const { return y0 + vy * static_cast<double>(t) * 1e-6; }

  // Local object-frame coordinates of pixel (x, y) at time t.
  std::pair<double, double> local(double x, double y, Timestamp t) const {
    const double dx = x - cx(t), dy = y - cy(t);
    const double c = std::cos(angle), s = std::sin(angle);
    return {c * dx + s * dy, -s * dx + c * dy};
  }

  bool covers(double x, double y, Timestamp t) const {
    const auto [u, v] = local(x, y, t);
    if (shape == Shape::Disk) return u * u + v * v <= half_extent_x * half_extent_x;
    return std::abs(u) <= half_extent_x && std::abs(v) <= half_extent_y;
  }

  double intensity_at(double x, double y, Timestamp t) const {
    if (texture == 0.0) return intensity;
    const auto [u, v] = local(x, y, t);
    const double w = 2.0 * std::numbers::pi / texture_period;
    return intensity * (1.0 + texture * std::sin(w * u) * std::sin(w * v));
  }
};

struct SceneSpec {
  int width = 64;
  int height = 64;
  double background = 1.0;
  std::vector<SceneObject> objects;
  Timestamp duration = 200'000;
  int num_classes = 6;

  SensorSize sensor() const { return {width, height}; }

  void validate() const {
    if (width <= 0 || height <= 0) throw ArgumentError("scene: canvas must be positive");
    if (duration <= 0) throw ArgumentError("scene: duration must be positive");
    if (!(background > 0.0)) throw ArgumentError("scene: background intensity must be positive");
    for (std::size_t i = 0; i < objects.size(); ++i) {
      const auto& o = objects[i];
      const std::string tag = "scene object " + std::to_string(i);
      if (o.class_id < 1 || o.class_id >= num_classes) throw ArgumentError(tag + ": class id out of range");
      if (!(o.intensity > 0.0)) throw ArgumentError(tag + ": intensity must be positive");
      if (o.texture < 0.0 || o.texture >= 1.0) throw ArgumentError(tag + ": texture must be in [0, 1)");
      if (!(o.half_extent_x > 0.0) || !(o.half_extent_y > 0.0)) throw ArgumentError(tag + ": bad size");
    }
  }
};

struct SimConfig {
  double contrast_threshold = 0.2;  // log-intensity units
  double frame_rate = 500.0;        // internal frames per second
  std::uint64_t seed = 0;

  int num_frames(Timestamp duration) const {
    return static_cast<int>(std::lround(frame_rate * static_cast<double>(duration) * 1e-6));
  }
  void validate(Timestamp duration) const {
    if (!(contrast_threshold > 0.0)) throw ArgumentError("sim: contrast threshold must be positive");
    if (num_frames(duration) < 2) throw ArgumentError("sim: need at least 2 frames over the duration");
  }
};

// Intensity image at time t: background overpainted by objects in list order.
inline std::vector<double> render_intensity(const SceneSpec& scene, Timestamp t) {
  std::vector<double> img(static_cast<std::size_t>(scene.width) * scene.height, scene.background);
  for (const auto& o : scene.objects)
    for (int y = 0; y < scene.height; ++y)
      for (int x = 0; x < scene.width; ++x)
        if (o.covers(x, y, t)) img[static_cast<std::size_t>(y) * scene.width + x] = o.intensity_at(x, y, t);
  return img;
}

// Per-pixel threshold-crossing automaton over a sequence of log-intensity
// frames. Each pixel keeps a reference level; whenever the frame differs from
// it by at least `threshold`, floor(|delta| / threshold) events fire with
// timestamps interpolated linearly inside the frame interval, and the
// reference moves by the emitted multiple of the threshold.
inline EventStream events_from_log_frames(SensorSize sensor, const std::vector<std::vector<double>>& log_frames,
                                          const std::vector<Timestamp>& times, double threshold) {
  if (log_frames.size() != times.size() || log_frames.empty())
    throw ArgumentError("events_from_log_frames: frame/time count mismatch");
  const std::size_t npix = static_cast<std::size_t>(sensor.width) * sensor.height;
  std::vector<double> ref = log_frames.front();
  std::vector<Event> out;
  for (std::size_t k = 1; k < log_frames.size(); ++k) {
    const auto& prev = log_frames[k - 1];
    const auto& cur = log_frames[k];
    const Timestamp t0 = times[k - 1];
    const double dt = static_cast<double>(times[k] - t0);
    for (std::size_t i = 0; i < npix; ++i) {
      const double delta = cur[i] - ref[i];
      const auto n = static_cast<int>(std::floor(std::abs(delta) / threshold + 1e-9));
      if (n == 0) continue;
      const int sign = delta > 0 ? 1 : -1;
      const double slope = cur[i] - prev[i];
      for (int j = 1; j <= n; ++j) {
        const double level = ref[i] + sign * j * threshold;
        double f = slope != 0.0 ? (level - prev[i]) / slope : 1.0;
        f = std::clamp(f, 0.0, 1.0);
        out.push_back({static_cast<int>(i % sensor.width), static_cast<int>(i / sensor.width),
                       t0 + static_cast<Timestamp>(std::floor(f * dt)), sign});
      }
      ref[i] += sign * n * threshold;
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
  return EventStream(sensor, std::move(out));
}

inline std::vector<Timestamp> frame_times(const SceneSpec& scene, const SimConfig& config) {
  const int n = config.num_frames(scene.duration);
  std::vector<Timestamp> times(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) times[static_cast<std::size_t>(k)] = scene.duration * k / (n - 1);
  return times;
}

inline EventStream simulate_events(const SceneSpec& scene, const SimConfig& config) {
  scene.validate();
  config.validate(scene.duration);
  const auto times = frame_times(scene, config);
  std::vector<std::vector<double>> frames;
  frames.reserve(times.size());
  for (Timestamp t : times) {
    auto img = render_intensity(scene, t);
    for (double& v : img) {
      if (!(v > 0.0)) throw ArgumentError("simulate_events: non-positive intensity");
      v = std::log(v);
    }
    frames.push_back(std::move(img));
  }
  return events_from_log_frames(scene.sensor(), frames, times, config.contrast_threshold);
}

// Rasterized classes at time T; later objects occlude earlier ones, uncovered
// pixels are class 0.
inline LabelMap dense_gt(const SceneSpec& scene, Timestamp T) {
  if (T < 0 || T > scene.duration) throw ArgumentError("dense_gt: T outside scene duration");
  LabelMap gt(scene.width, scene.height, 0);
  for (const auto& o : scene.objects)
    for (int y = 0; y < scene.height; ++y)
      for (int x = 0; x < scene.width; ++x)
        if (o.covers(x, y, T)) gt.at(x, y) = static_cast<std::uint8_t>(o.class_id);
  return gt;
}

// Up to k distinct clicks per class present in gt (255 excluded), uniform over
// that class's pixels. Classes are visited in ascending id order.
inline PointLabelSet sample_point_labels(const LabelMap& gt, int k, Rng& rng) {
  if (k < 1 || k > 10) throw ArgumentError("sample_point_labels: k must be in [1, 10]");
  std::map<int, std::vector<int>> pixels;
  for (int i = 0; i < static_cast<int>(gt.size()); ++i)
    if (gt.values[static_cast<std::size_t>(i)] != kIgnoreLabel)
      pixels[gt.values[static_cast<std::size_t>(i)]].push_back(i);
  PointLabelSet out;
  out.mode = k == 1 ? LabelMode::OneClickPerClass : LabelMode::TenClicksPerClass;
  for (auto& [c, idx] : pixels) {
    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), idx.size());
    for (std::size_t j = 0; j < take; ++j) {
      const std::size_t pick = j + rng.below(idx.size() - j);
      std::swap(idx[j], idx[pick]);
      out.points.push_back({idx[j] % gt.width, idx[j] / gt.width, c});
    }
  }
  return out;
}

// Each click of a confusing class is removed independently with probability `rate`.
inline PointLabelSet corrupt_drop(const PointLabelSet& labels, const std::set<int>& confusing, double rate,
                                  Rng& rng) {
  if (rate < 0.0 || rate > 1.0) throw ArgumentError("corrupt_drop: rate must be in [0, 1]");
  PointLabelSet out;
  out.mode = labels.mode;
  for (const auto& p : labels.points) {
    if (confusing.contains(p.class_id) && rng.bernoulli(rate)) continue;
    out.points.push_back(p);
  }
  return out;
}

// With probability p, two distinct clicks exchange their classes.
inline PointLabelSet corrupt_swap(const PointLabelSet& labels, double p, Rng& rng) {
  if (p < 0.0 || p > 1.0) throw ArgumentError("corrupt_swap: probability must be in [0, 1]");
  if (labels.size() < 2) return labels;
  PointLabelSet out = labels;
  if (!rng.bernoulli(p)) return out;
  const std::size_t n = out.size();
  const std::size_t i = rng.below(n);
  std::size_t j = rng.below(n - 1);
  if (j >= i) ++j;
  std::swap(out.points[i].class_id, out.points[j].class_id);
  return out;
}

// The `count` object classes with the smallest mean area over the maps in
// which they appear. Background (0) is never confusing.
inline std::set<int> smallest_area_classes(const std::vector<LabelMap>& maps, int num_classes, int count) {
  std::vector<double> area(static_cast<std::size_t>(num_classes), 0.0);
  std::vector<int> seen(static_cast<std::size_t>(num_classes), 0);
  for (const auto& m : maps) {
    std::vector<long> n(static_cast<std::size_t>(num_classes), 0);
    for (auto v : m.values)
      if (v < num_classes) ++n[v];
    for (int c = 1; c < num_classes; ++c)
      if (n[static_cast<std::size_t>(c)] > 0) {
        area[static_cast<std::size_t>(c)] += static_cast<double>(n[static_cast<std::size_t>(c)]);
        ++seen[static_cast<std::size_t>(c)];
      }
  }
  std::vector<std::pair<double, int>> ranked;
  for (int c = 1; c < num_classes; ++c)
    if (seen[static_cast<std::size_t>(c)] > 0)
      ranked.push_back({area[static_cast<std::size_t>(c)] / seen[static_cast<std::size_t>(c)], c});
  std::sort(ranked.begin(), ranked.end());
  std::set<int> out;
  for (int i = 0; i < count && i < static_cast<int>(ranked.size()); ++i) out.insert(ranked[static_cast<std::size_t>(i)].second);
  return out;
}

struct SyntheticSample {
  std::string id;
  SceneSpec scene;
  std::uint64_t seed = 0;
  EventStream events;
  Timestamp target_time = 0;
  LabelMap gt;
  PointLabelSet labels;
};

// Desk-scale scene family: 64x64 canvas, background class 0 plus five object
// classes that differ in shape, size or orientation.
struct ToySceneConfig {
  int width = 64;
  int height = 64;
  int num_classes = 6;
  Timestamp duration = 200'000;
  Timestamp target_time = 100'000;
  int min_objects = 2;
  int max_objects = 4;
  double min_speed = 80.0;   // px/s
  double max_speed = 240.0;
  double texture = 0.45;
  int clicks_per_class = 1;
};

inline SceneObject random_object(int class_id, const ToySceneConfig& cfg, Rng& rng) {
  SceneObject o;
  o.class_id = class_id;
  switch (class_id) {
    case 1:
      o.shape = Shape::Disk;
      o.half_extent_x = o.half_extent_y = rng.uniform(3.5, 5.0);
      break;
    case 2:
      o.shape = Shape::Disk;
      o.half_extent_x = o.half_extent_y = rng.uniform(8.0, 11.0);
      break;
    case 3:
      o.shape = Shape::Rectangle;
      o.half_extent_x = rng.uniform(5.0, 8.0);
      o.half_extent_y = rng.uniform(5.0, 8.0);
      break;
    case 4:
      o.shape = Shape::Bar;
      o.half_extent_x = rng.uniform(10.0, 14.0);
      o.half_extent_y = rng.uniform(1.5, 2.5);
      break;
    default:
      o.shape = Shape::Bar;
      o.half_extent_x = rng.uniform(10.0, 14.0);
      o.half_extent_y = rng.uniform(1.5, 2.5);
      o.angle = std::numbers::pi / 2;
      break;
  }
  o.intensity = rng.bernoulli(0.5) ? rng.uniform(1.8, 3.0) : rng.uniform(0.3, 0.55);
  o.texture = cfg.texture;
  o.texture_period = rng.uniform(5.0, 9.0);
  const double speed = rng.uniform(cfg.min_speed, cfg.max_speed);
  const double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
  o.vx = speed * std::cos(heading);
  o.vy = speed * std::sin(heading);
  const double margin = 8.0;
  const double cx = rng.uniform(margin, cfg.width - margin);
  const double cy = rng.uniform(margin, cfg.height - margin);
  const double tT = static_cast<double>(cfg.target_time) * 1e-6;
  o.x0 = cx - o.vx * tT;
  o.y0 = cy - o.vy * tT;
  return o;
}

inline SceneSpec random_scene(const ToySceneConfig& cfg, Rng& rng) {
  SceneSpec s;
  s.width = cfg.width;
  s.height = cfg.height;
  s.duration = cfg.duration;
  s.num_classes = cfg.num_classes;
  const int n = rng.uniform_int(cfg.min_objects, cfg.max_objects);
  for (int i = 0; i < n; ++i) s.objects.push_back(random_object(rng.uniform_int(1, cfg.num_classes - 1), cfg, rng));
  return s;
}

// One complete sample: events over the whole duration, GT and clicks at the
// target time. Fully determined by (cfg, sim, seed).
inline SyntheticSample make_sample(const ToySceneConfig& cfg, SimConfig sim, std::uint64_t seed) {
  Rng rng(seed);
  SyntheticSample s;
  s.seed = seed;
  s.id = "scene_" + std::to_string(seed);
  s.scene = random_scene(cfg, rng);
  sim.seed = seed;
  s.events = simulate_events(s.scene, sim);
  s.target_time = cfg.target_time;
  s.gt = dense_gt(s.scene, cfg.target_time);
  s.labels = sample_point_labels(s.gt, cfg.clicks_per_class, rng);
  return s;
}

// n samples named frame_00000, frame_00001, ...; sample i uses seed
// mix(seed) + i.
inline std::vector<SyntheticSample> make_samples(const ToySceneConfig& cfg, const SimConfig& sim, int n,
                                                 std::uint64_t seed) {
  if (n < 0) throw ArgumentError("make_samples: n must be >= 0");
  std::vector<SyntheticSample> out;
  const std::uint64_t base = Rng::mix(seed);
  for (int i = 0; i < n; ++i) {
    out.push_back(make_sample(cfg, sim, base + static_cast<std::uint64_t>(i)));
    char id[32];
    std::snprintf(id, sizeof id, "frame_%05d", i);
    out.back().id = id;
  }
  return out;
}

}  // namespace evwsss::synth
