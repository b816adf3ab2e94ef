#pragma once

// On-disk datasets. A dataset is a directory of sample directories, each
// holding
//   events.txt   event file (see event_core.hpp)
//   gt.png       8-bit class-id map at the target time, 255 = ignore
//   labels.json  {"frames": [{"frame_id", "mode", "points": [{"x", "y", "class_id"}]}]}
//   meta.json    target time, seed, class count and the scene description
// plus an optional classes.json palette at the dataset root. Pixel
// coordinates are 0-indexed integers; x is the column, y the row.

#include <algorithm>
#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "evwsss/config_io.hpp"
#include "evwsss/errors.hpp"
#include "evwsss/event_core.hpp"
#include "evwsss/image.hpp"
#include "evwsss/labels.hpp"
#include "evwsss/synth_scene.hpp"

namespace evwsss::dataset {

namespace fs = std::filesystem;
using json = nlohmann::json;

// One frame's annotation as stored and served.
struct LabelRecord {
  std::string frame_id;
  PointLabelSet labels;
  std::string note;
  std::string timestamp;  // ISO 8601 UTC, empty if never saved
  long version = 0;

  friend bool operator==(const LabelRecord&, const LabelRecord&) = default;
};

inline json to_json(const LabelRecord& r) {
  json pts = json::array();
  for (const auto& p : r.labels.points) pts.push_back({{"x", p.x}, {"y", p.y}, {"class_id", p.class_id}});
  json j = {{"frame_id", r.frame_id}, {"mode", to_string(r.labels.mode)}, {"points", std::move(pts)}};
  if (!r.note.empty()) j["note"] = r.note;
  if (!r.timestamp.empty()) j["timestamp"] = r.timestamp;
  if (r.version > 0) j["version"] = r.version;
  return j;
}

inline LabelRecord record_from_json(const json& j, const std::string& path) {
  config::FieldReader r(j, path);
  LabelRecord rec;
  r.require("frame_id", rec.frame_id);
  std::string mode;
  r.require("mode", mode);
  auto m = parse_label_mode(mode);
  if (!m) throw SchemaError(r.field("mode"), "expected \"1C1C\" or \"1C10C\"");
  rec.labels.mode = *m;
  r.get("note", rec.note);
  r.get("timestamp", rec.timestamp);
  r.get("version", rec.version);
  if (!r.has("points")) throw SchemaError(r.field("points"), "missing required field");
  const json& pts = r.array("points");
  for (std::size_t i = 0; i < pts.size(); ++i) {
    config::FieldReader pr(pts[i], r.field("points") + "[" + std::to_string(i) + "]");
    LabelPoint p;
    pr.require("x", p.x);
    pr.require("y", p.y);
    pr.require("class_id", p.class_id);
    pr.finish();
    rec.labels.points.push_back(p);
  }
  r.finish();
  return rec;
}

inline json bundle_to_json(const std::vector<LabelRecord>& records) {
  json frames = json::array();
  for (const auto& r : records) frames.push_back(to_json(r));
  return {{"frames", std::move(frames)}};
}

inline std::vector<LabelRecord> bundle_from_json(const json& j) {
  config::FieldReader r(j, "");
  if (!r.has("frames")) throw SchemaError("frames", "missing required field");
  const json& frames = r.array("frames");
  r.finish();
  std::vector<LabelRecord> out;
  for (std::size_t i = 0; i < frames.size(); ++i)
    out.push_back(record_from_json(frames[i], "frames[" + std::to_string(i) + "]"));
  return out;
}

struct PaletteEntry {
  int id = 0;
  std::string name;
  std::array<std::uint8_t, 3> color{};
  friend bool operator==(const PaletteEntry&, const PaletteEntry&) = default;
};

using Palette = std::vector<PaletteEntry>;

// The 11-class driving palette.
inline Palette default_palette() {
  return {{0, "Sky", {70, 130, 180}},        {1, "Building", {70, 70, 70}},   {2, "Fence", {190, 153, 153}},
          {3, "Person", {220, 20, 60}},      {4, "Pole", {153, 153, 153}},    {5, "Road", {128, 64, 128}},
          {6, "Sidewalk", {244, 35, 232}},   {7, "Vegetation", {107, 142, 35}}, {8, "Car", {0, 0, 142}},
          {9, "Wall", {102, 102, 156}},      {10, "Traffic-sign", {220, 220, 0}}};
}

// Background plus the five synthetic object classes.
inline Palette synthetic_palette() {
  return {{0, "Background", {200, 200, 200}}, {1, "Small disk", {230, 25, 75}},    {2, "Large disk", {60, 180, 75}},
          {3, "Rectangle", {0, 130, 200}},    {4, "Horizontal bar", {245, 130, 48}}, {5, "Vertical bar", {145, 30, 180}}};
}

inline json to_json(const Palette& p) {
  json classes = json::array();
  for (const auto& e : p) classes.push_back({{"id", e.id}, {"name", e.name}, {"color", e.color}});
  return {{"schema_version", config::kSchemaVersion}, {"classes", std::move(classes)}};
}

inline Palette palette_from_json(const json& j) {
  config::FieldReader r(j, "");
  config::check_schema_version(r);
  if (!r.has("classes")) throw SchemaError("classes", "missing required field");
  const json& cl = r.array("classes");
  r.finish();
  Palette out;
  for (std::size_t i = 0; i < cl.size(); ++i) {
    const std::string path = "classes[" + std::to_string(i) + "]";
    config::FieldReader er(cl[i], path);
    PaletteEntry e;
    er.require("id", e.id);
    er.require("name", e.name);
    er.skip("color");
    if (!cl[i].contains("color") || !cl[i].at("color").is_array() || cl[i].at("color").size() != 3)
      throw SchemaError(path + ".color", "expected [r, g, b]");
    for (int c = 0; c < 3; ++c) {
      const json& v = cl[i].at("color")[c];
      if (!v.is_number_integer() || v.get<int>() < 0 || v.get<int>() > 255)
        throw SchemaError(path + ".color", "components must be integers in [0, 255]");
      e.color[static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(v.get<int>());
    }
    er.finish();
    if (e.id != static_cast<int>(i)) throw SchemaError(path + ".id", "ids must be 0, 1, 2, ... in order");
    out.push_back(std::move(e));
  }
  return out;
}

inline Palette load_palette(const fs::path& dataset_root) {
  const fs::path p = dataset_root / "classes.json";
  if (!fs::exists(p)) return default_palette();
  return palette_from_json(config::read_json_file(p));
}

inline void save_palette(const fs::path& dataset_root, const Palette& p) {
  config::write_text_atomic(dataset_root / "classes.json", to_json(p).dump(2) + "\n");
}

inline json to_json(const synth::SceneObject& o) {
  return {{"class_id", o.class_id},
          {"shape", synth::to_string(o.shape)},
          {"half_extent_x", o.half_extent_x},
          {"half_extent_y", o.half_extent_y},
          {"angle", o.angle},
          {"intensity", o.intensity},
          {"texture", o.texture},
          {"texture_period", o.texture_period},
          {"x0", o.x0},
          {"y0", o.y0},
          {"vx", o.vx},
          {"vy", o.vy}};
}

inline json to_json(const synth::SceneSpec& s) {
  json objs = json::array();
  for (const auto& o : s.objects) objs.push_back(to_json(o));
  return {{"width", s.width},
          {"height", s.height},
          {"background", s.background},
          {"duration_us", s.duration},
          {"num_classes", s.num_classes},
          {"objects", std::move(objs)}};
}

// A sample as read back from disk.
struct Sample {
  std::string id;
  events::EventStream events;
  events::Timestamp target_time = 0;
  LabelMap gt;
  LabelRecord labels;
  std::uint64_t seed = 0;
  int num_classes = 0;
};

inline Sample to_sample(const synth::SyntheticSample& s) {
  return {s.id, s.events, s.target_time, s.gt, LabelRecord{s.id, s.labels, "", "", 0}, s.seed, s.scene.num_classes};
}

inline fs::path labels_path(const fs::path& sample_dir) { return sample_dir / "labels.json"; }

inline void save_labels(const fs::path& sample_dir, const LabelRecord& rec,
                        const std::function<void()>& before_rename = {}) {
  config::write_text_atomic(labels_path(sample_dir), bundle_to_json({rec}).dump(2) + "\n", before_rename);
}

// Reads and re-validates a sample's label record against its size and classes.
inline LabelRecord load_labels(const fs::path& sample_dir, int width, int height, int num_classes) {
  const auto recs = bundle_from_json(config::read_json_file(labels_path(sample_dir)));
  if (recs.size() != 1) throw FormatError(labels_path(sample_dir).string() + ": expected exactly one frame");
  validate_labels(recs.front().labels, width, height, num_classes);
  return recs.front();
}

inline void save_sample(const fs::path& dir, const synth::SyntheticSample& s) {
  fs::create_directories(dir);
  events::save_events(dir / "events.txt", s.events);
  GrayImage gt(s.gt.width, s.gt.height);
  gt.pixels = s.gt.values;
  write_png(dir / "gt.png", gt);
  save_labels(dir, LabelRecord{s.id, s.labels, "", "", 0});
  const json meta = {{"schema_version", config::kSchemaVersion},
                     {"frame_id", s.id},
                     {"target_time_us", s.target_time},
                     {"seed", s.seed},
                     {"num_classes", s.scene.num_classes},
                     {"scene", to_json(s.scene)}};
  config::write_text_atomic(dir / "meta.json", meta.dump(2) + "\n");
}

struct SampleMeta {
  std::string frame_id;
  events::Timestamp target_time = 0;
  std::uint64_t seed = 0;
  int num_classes = 0;
};

inline SampleMeta load_meta(const fs::path& dir) {
  const json j = config::read_json_file(dir / "meta.json");
  config::FieldReader r(j, "");
  config::check_schema_version(r);
  SampleMeta m;
  r.require("frame_id", m.frame_id);
  r.require("target_time_us", m.target_time);
  r.get("seed", m.seed);
  r.require("num_classes", m.num_classes);
  r.skip("scene");
  r.finish();
  return m;
}

inline Sample load_sample(const fs::path& dir) {
  Sample s;
  const SampleMeta meta = load_meta(dir);
  s.id = meta.frame_id;
  s.target_time = meta.target_time;
  s.seed = meta.seed;
  s.num_classes = meta.num_classes;
  s.events = events::load_events(dir / "events.txt");
  if (fs::exists(dir / "gt.png")) {
    const GrayImage gt = read_gray_png(dir / "gt.png");
    s.gt = LabelMap(gt.width, gt.height);
    s.gt.values = gt.pixels;
  }
  s.labels = load_labels(dir, s.events.width(), s.events.height(), s.num_classes);
  return s;
}

// Sample directories (those containing meta.json), sorted by name.
inline std::vector<fs::path> sample_dirs(const fs::path& root) {
  if (!fs::is_directory(root)) throw NotFoundError("dataset directory " + root.string() + " does not exist");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "meta.json")) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<Sample> load_dataset(const fs::path& root) {
  std::vector<Sample> out;
  for (const auto& d : sample_dirs(root)) out.push_back(load_sample(d));
  return out;
}

// Replaces per-sample labels with the records of an exported bundle, matched
// by frame id. Frames missing from the bundle keep their own labels.
inline void apply_bundle(std::vector<Sample>& samples, const std::vector<LabelRecord>& bundle) {
  for (const auto& rec : bundle) {
    auto it = std::find_if(samples.begin(), samples.end(), [&](const Sample& s) { return s.id == rec.frame_id; });
    if (it == samples.end()) throw NotFoundError("labels bundle: unknown frame '" + rec.frame_id + "'");
    validate_labels(rec.labels, it->events.width(), it->events.height(), it->num_classes);
    it->labels = rec;
  }
}

}  // namespace evwsss::dataset
