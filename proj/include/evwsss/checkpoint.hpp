#pragma once

// Trainer checkpoints as a single JSON document:
//
//   {
//     "format_version": 1,
//     "config":      train config echo (see config_io.hpp),
//     "step":        completed optimizer updates,
//     "parameters":  {"forward.<name>" | "backward.<name>" | "proj.<...>": tensor},
//     "optimizer":   {"step": n, "names": [...], "m": [tensor...], "v": [tensor...]},
//     "banks":       {"forward" | "backward": {"<class>": [[D floats]...]}},  oldest first
//     "ema_teacher": {"<name>": tensor} or null
//   }
//
// A tensor is {"shape": [...], "data": [...]}. Float values are written as
// decimal doubles, which round-trip exactly. Files are written to a
// temporary sibling and renamed into place.

#include <deque>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "evwsss/config_io.hpp"
#include "evwsss/errors.hpp"
#include "evwsss/trainer.hpp"

namespace evwsss::checkpoint {

using json = nlohmann::json;
using train::Scalar;

inline constexpr int kFormatVersion = 1;

inline json tensor_json(const Tensor<Scalar>& t) {
  json data = json::array();
  for (Scalar v : t.values()) data.push_back(static_cast<double>(v));
  return {{"shape", t.shape()}, {"data", std::move(data)}};
}

inline Tensor<Scalar> tensor_from_json(const json& j, const std::string& what) {
  if (!j.is_object() || !j.contains("shape") || !j.contains("data"))
    throw FormatError("checkpoint: malformed tensor '" + what + "'");
  Tensor<Scalar> t(j.at("shape").get<std::vector<std::size_t>>());
  const json& d = j.at("data");
  if (!d.is_array() || d.size() != t.size()) throw FormatError("checkpoint: size mismatch in '" + what + "'");
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(d[i].get<double>());
  return t;
}

inline void load_into(Tensor<Scalar>& dst, const json& j, const std::string& what) {
  Tensor<Scalar> t = tensor_from_json(j, what);
  if (!t.same_shape(dst))
    throw FormatError("checkpoint: '" + what + "' has shape " + shape_string(t.shape()) + ", model expects " +
                      shape_string(dst.shape()));
  dst = std::move(t);
}

inline json params_json(const train::Model<Scalar>& m) {
  json p = json::object();
  m.forward.visit([&](std::string_view n, const Tensor<Scalar>& t) { p["forward." + std::string(n)] = tensor_json(t); });
  m.backward.visit(
      [&](std::string_view n, const Tensor<Scalar>& t) { p["backward." + std::string(n)] = tensor_json(t); });
  m.projection.visit([&](std::string_view n, const Tensor<Scalar>& t) { p[std::string(n)] = tensor_json(t); });
  return p;
}

inline void load_params(train::Model<Scalar>& m, const json& p) {
  auto get = [&](const std::string& key) -> const json& {
    if (!p.contains(key)) throw FormatError("checkpoint: missing parameter '" + key + "'");
    return p.at(key);
  };
  m.forward.visit([&](std::string_view n, Tensor<Scalar>& t) {
    const std::string key = "forward." + std::string(n);
    load_into(t, get(key), key);
  });
  m.backward.visit([&](std::string_view n, Tensor<Scalar>& t) {
    const std::string key = "backward." + std::string(n);
    load_into(t, get(key), key);
  });
  m.projection.visit([&](std::string_view n, Tensor<Scalar>& t) { load_into(t, get(std::string(n)), std::string(n)); });
}

inline json bank_json(const proto::PrototypeBank<Scalar>& bank) {
  json out = json::object();
  for (const auto& [k, q] : bank.queues()) {
    json list = json::array();
    for (const auto& p : q) {
      json v = json::array();
      for (Scalar x : p.vector.values()) v.push_back(static_cast<double>(x));
      list.push_back(std::move(v));
    }
    out[std::to_string(k)] = std::move(list);
  }
  return out;
}

inline void load_bank(proto::PrototypeBank<Scalar>& bank, const json& j, proto::BranchId source) {
  for (const auto& [key, list] : j.items()) {
    const int k = std::stoi(key);
    std::deque<proto::ClassPrototype<Scalar>> q;
    for (const auto& v : list) {
      if (v.size() != bank.dim()) throw FormatError("checkpoint: prototype dimension mismatch for class " + key);
      Tensor<Scalar> t({bank.dim()});
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(v[i].get<double>());
      q.push_back({std::move(t), k, source});
    }
    if (q.size() > bank.capacity()) throw FormatError("checkpoint: queue for class " + key + " exceeds capacity");
    bank.restore_queue(k, std::move(q));
  }
}

inline json to_json(const train::Trainer& tr) {
  json j;
  j["format_version"] = kFormatVersion;
  j["config"] = config::to_json(tr.config());
  j["step"] = tr.step_count();
  j["parameters"] = params_json(tr.model());
  json opt;
  opt["step"] = tr.optimizer().step_count();
  opt["names"] = tr.trainable_names();
  json m = json::array(), v = json::array();
  for (const auto& t : tr.optimizer().first_moments()) m.push_back(tensor_json(t));
  for (const auto& t : tr.optimizer().second_moments()) v.push_back(tensor_json(t));
  opt["m"] = std::move(m);
  opt["v"] = std::move(v);
  j["optimizer"] = std::move(opt);
  j["banks"] = {{"forward", bank_json(tr.bank_forward())}, {"backward", bank_json(tr.bank_backward())}};
  if (tr.teacher()) {
    json t = json::object();
    tr.teacher()->visit([&](std::string_view n, const Tensor<Scalar>& x) { t[std::string(n)] = tensor_json(x); });
    j["ema_teacher"] = std::move(t);
  } else {
    j["ema_teacher"] = nullptr;
  }
  return j;
}

inline train::Trainer from_json(const json& j) {
  try {
    if (!j.is_object() || !j.contains("format_version")) throw FormatError("checkpoint: missing format_version");
    const int version = j.at("format_version").get<int>();
    if (version != kFormatVersion)
      throw FormatError("checkpoint: unsupported format_version " + std::to_string(version));
    train::Trainer tr(config::train_config_from_json(j.at("config"), "config"));
    load_params(tr.model(), j.at("parameters"));
    tr.set_step_count(j.at("step").get<long>());
    const json& opt = j.at("optimizer");
    const auto names = opt.at("names").get<std::vector<std::string>>();
    if (names != tr.trainable_names()) throw FormatError("checkpoint: optimizer parameter list does not match mode");
    auto& o = tr.optimizer();
    o.set_step_count(opt.at("step").get<long>());
    o.first_moments().clear();
    o.second_moments().clear();
    const auto params = tr.trainable();
    if (!opt.at("m").empty()) {
      if (opt.at("m").size() != params.size() || opt.at("v").size() != params.size())
        throw FormatError("checkpoint: optimizer state size mismatch");
      for (std::size_t i = 0; i < params.size(); ++i) {
        o.first_moments().push_back(Tensor<Scalar>(params[i]->shape()));
        o.second_moments().push_back(Tensor<Scalar>(params[i]->shape()));
        load_into(o.first_moments().back(), opt.at("m")[i], "optimizer.m." + names[i]);
        load_into(o.second_moments().back(), opt.at("v")[i], "optimizer.v." + names[i]);
      }
    }
    load_bank(tr.bank_forward(), j.at("banks").at("forward"), proto::BranchId::Forward);
    load_bank(tr.bank_backward(), j.at("banks").at("backward"), proto::BranchId::Backward);
    if (!j.at("ema_teacher").is_null()) {
      if (!tr.teacher()) throw FormatError("checkpoint: ema teacher present for a non-ema mode");
      const json& t = j.at("ema_teacher");
      tr.teacher()->visit([&](std::string_view n, Tensor<Scalar>& x) {
        const std::string key(n);
        if (!t.contains(key)) throw FormatError("checkpoint: ema teacher misses '" + key + "'");
        load_into(x, t.at(key), "ema_teacher." + key);
      });
    }
    return tr;
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  } catch (const SchemaError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

inline void save(const train::Trainer& tr, const std::filesystem::path& path) {
  config::write_text_atomic(path, to_json(tr).dump());
}

inline train::Trainer load(const std::filesystem::path& path) { return from_json(config::read_json_file(path)); }

}  // namespace evwsss::checkpoint
