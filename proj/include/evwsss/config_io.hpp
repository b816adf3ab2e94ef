#pragma once

// JSON config documents. Every document carries "schema_version"; unknown
// or mistyped fields raise SchemaError naming the field by its dotted path.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"

#include "evwsss/errors.hpp"
#include "evwsss/network.hpp"
#include "evwsss/synth_scene.hpp"
#include "evwsss/trainer.hpp"

namespace evwsss::config {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

// Reads fields of one JSON object, remembering which keys were consumed.
class FieldReader {
 public:
  FieldReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw SchemaError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(const std::string& name) const { return path_.empty() ? name : path_ + "." + name; }

  bool has(const std::string& name) const { return j_.contains(name); }

  template <class V>
  void get(const std::string& name, V& out) {
    if (!j_.contains(name)) return;
    seen_.insert(name);
    const json& v = j_.at(name);
    if constexpr (std::is_same_v<V, bool>) {
      if (!v.is_boolean()) throw SchemaError(field(name), "expected a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<V>) {
      if (!v.is_number_integer()) throw SchemaError(field(name), "expected an integer");
      if constexpr (std::is_unsigned_v<V>) {
        if (v.is_number_unsigned() || v.get<std::int64_t>() >= 0)
          out = v.get<V>();
        else
          throw SchemaError(field(name), "expected a non-negative integer");
      } else {
        out = v.get<V>();
      }
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!v.is_number()) throw SchemaError(field(name), "expected a number");
      out = v.get<V>();
    } else if constexpr (std::is_same_v<V, std::string>) {
      if (!v.is_string()) throw SchemaError(field(name), "expected a string");
      out = v.get<std::string>();
    } else {
      static_assert(sizeof(V) == 0, "unsupported field type");
    }
  }

  template <class V>
  void require(const std::string& name, V& out) {
    if (!j_.contains(name)) throw SchemaError(field(name), "missing required field");
    get(name, out);
  }

  const json& object(const std::string& name) {
    seen_.insert(name);
    const json& v = j_.at(name);
    if (!v.is_object()) throw SchemaError(field(name), "expected an object");
    return v;
  }

  const json& array(const std::string& name) {
    seen_.insert(name);
    const json& v = j_.at(name);
    if (!v.is_array()) throw SchemaError(field(name), "expected an array");
    return v;
  }

  void skip(const std::string& name) { seen_.insert(name); }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.contains(k)) throw SchemaError(field(k), "unknown field");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void check_schema_version(FieldReader& r) {
  int v = 0;
  r.require("schema_version", v);
  if (v != kSchemaVersion)
    throw SchemaError(r.field("schema_version"), "unsupported version " + std::to_string(v) + ", expected " +
                                                     std::to_string(kSchemaVersion));
}

// Re-raises a precondition failure as a schema error on `field`.
template <class F>
void validated(const std::string& field, F&& f) {
  try {
    f();
  } catch (const ArgumentError& e) {
    throw SchemaError(field, e.what());
  }
}

inline json to_json(const nn::NetworkConfig& c) {
  return {{"num_classes", c.num_classes},     {"feature_dim", c.feature_dim}, {"stride", c.stride},
          {"recurrent_steps", c.recurrent_steps}, {"hidden_width", c.hidden_width}, {"num_bins", c.num_bins},
          {"height", c.height},               {"width", c.width}};
}

inline nn::NetworkConfig network_from_json(const json& j, const std::string& path, nn::NetworkConfig base = {}) {
  nn::NetworkConfig c = base;
  FieldReader r(j, path);
  r.get("num_classes", c.num_classes);
  r.get("feature_dim", c.feature_dim);
  r.get("stride", c.stride);
  r.get("recurrent_steps", c.recurrent_steps);
  r.get("hidden_width", c.hidden_width);
  r.get("num_bins", c.num_bins);
  r.get("height", c.height);
  r.get("width", c.width);
  r.finish();
  validated(path, [&] { c.validate(); });
  return c;
}

inline json to_json(const train::TrainConfig& c) {
  return {{"mode", train::to_string(c.mode)},
          {"lambda_weak", c.lambda_weak},
          {"lambda_dual", c.lambda_dual},
          {"lambda_proto", c.lambda_proto},
          {"lambda_distill", c.lambda_distill},
          {"threshold", c.threshold},
          {"temperature", c.temperature},
          {"backward_ratio", c.backward_ratio},
          {"warmup_steps", c.warmup_steps},
          {"learning_rate", c.learning_rate},
          {"steps", c.steps},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"ema_momentum", c.ema_momentum},
          {"forward_window_us", c.forward_window},
          {"queue_capacity", c.queue_capacity},
          {"projection_noise", c.projection_noise},
          {"grad_clip", c.grad_clip},
          {"network", to_json(c.network)}};
}

// Fields absent from j keep the values of `base`.
inline train::TrainConfig train_config_from_json(const json& j, const std::string& path,
                                                 train::TrainConfig base = {}) {
  train::TrainConfig c = std::move(base);
  FieldReader r(j, path);
  if (r.has("mode")) {
    std::string m;
    r.get("mode", m);
    auto mode = train::parse_mode(m);
    if (!mode) throw SchemaError(r.field("mode"), "unknown mode '" + m + "'");
    c.mode = *mode;
  }
  r.get("lambda_weak", c.lambda_weak);
  r.get("lambda_dual", c.lambda_dual);
  r.get("lambda_proto", c.lambda_proto);
  r.get("lambda_distill", c.lambda_distill);
  r.get("threshold", c.threshold);
  r.get("temperature", c.temperature);
  r.get("backward_ratio", c.backward_ratio);
  r.get("warmup_steps", c.warmup_steps);
  r.get("learning_rate", c.learning_rate);
  r.get("steps", c.steps);
  r.get("batch_size", c.batch_size);
  r.get("seed", c.seed);
  r.get("ema_momentum", c.ema_momentum);
  r.get("forward_window_us", c.forward_window);
  r.get("queue_capacity", c.queue_capacity);
  r.get("projection_noise", c.projection_noise);
  r.get("grad_clip", c.grad_clip);
  if (r.has("network")) c.network = network_from_json(r.object("network"), r.field("network"), c.network);
  r.finish();
  validated(path.empty() ? "<root>" : path, [&] { c.validate(); });
  return c;
}

// `train --config` document.
struct TrainDocument {
  train::TrainConfig train;
  std::filesystem::path data_dir;
  std::filesystem::path labels_bundle;  // exported labels.json overriding per-sample labels
  int checkpoint_every = 0;
};

inline TrainDocument train_document_from_json(const json& j) {
  FieldReader r(j, "");
  check_schema_version(r);
  TrainDocument d;
  std::string data;
  r.require("data", data);
  d.data_dir = data;
  std::string bundle;
  r.get("labels", bundle);
  d.labels_bundle = bundle;
  r.get("checkpoint_every", d.checkpoint_every);
  if (d.checkpoint_every < 0) throw SchemaError("checkpoint_every", "must be >= 0");
  if (r.has("train")) d.train = train_config_from_json(r.object("train"), "train");
  r.finish();
  return d;
}

inline json to_json(const TrainDocument& d) {
  return {{"schema_version", kSchemaVersion},
          {"data", d.data_dir.string()},
          {"labels", d.labels_bundle.string()},
          {"checkpoint_every", d.checkpoint_every},
          {"train", to_json(d.train)}};
}

inline json to_json(const synth::ToySceneConfig& c) {
  return {{"width", c.width},
          {"height", c.height},
          {"num_classes", c.num_classes},
          {"duration_us", c.duration},
          {"target_time_us", c.target_time},
          {"min_objects", c.min_objects},
          {"max_objects", c.max_objects},
          {"min_speed", c.min_speed},
          {"max_speed", c.max_speed},
          {"texture", c.texture},
          {"clicks_per_class", c.clicks_per_class}};
}

inline synth::ToySceneConfig toy_config_from_json(const json& j, const std::string& path) {
  synth::ToySceneConfig c;
  FieldReader r(j, path);
  r.get("width", c.width);
  r.get("height", c.height);
  r.get("num_classes", c.num_classes);
  r.get("duration_us", c.duration);
  r.get("target_time_us", c.target_time);
  r.get("min_objects", c.min_objects);
  r.get("max_objects", c.max_objects);
  r.get("min_speed", c.min_speed);
  r.get("max_speed", c.max_speed);
  r.get("texture", c.texture);
  r.get("clicks_per_class", c.clicks_per_class);
  r.finish();
  if (c.clicks_per_class < 1 || c.clicks_per_class > 10)
    throw SchemaError(r.field("clicks_per_class"), "must be in [1, 10]");
  if (c.min_objects < 0 || c.max_objects < c.min_objects)
    throw SchemaError(r.field("max_objects"), "need 0 <= min_objects <= max_objects");
  if (c.target_time <= 0 || c.target_time >= c.duration)
    throw SchemaError(r.field("target_time_us"), "must lie strictly inside the duration");
  return c;
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw NotFoundError("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// Writes to a temporary sibling, then renames over `path`. before_rename runs
// between the two and may throw to simulate a crash.
inline void write_text_atomic(const std::filesystem::path& path, const std::string& text,
                              const std::function<void()>& before_rename = {}) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    os << text;
    os.flush();
    if (!os) throw std::runtime_error("write failed: " + tmp.string());
  }
  if (before_rename) before_rename();
  std::filesystem::rename(tmp, path);
}

}  // namespace evwsss::config
