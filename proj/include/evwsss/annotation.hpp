#pragma once

// Point-annotation backend: a label store over a dataset directory and the
// HTTP+JSON routes that serve frames and persist click labels.
//
//   GET  /frames               {"frames": [{"frame_id", "status", "version"}]}
//   GET  /frames/{id}/image    PNG of the events just before the target time
//   GET  /frames/{id}/labels   stored record, or an empty one (version 0)
//   PUT  /frames/{id}/labels   validate, persist, return the record with its new version
//   GET  /classes              palette {"classes": [{"id", "name", "color"}]}
//   GET  /export               labels.json bundle of every frame with points
//
// Errors are JSON objects {"error": kind, "message": ..., "violations": [...]}
// with status 400 (malformed body), 404 (unknown frame) or 422 (constraint
// violation).

#include <chrono>
#include <ctime>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "evwsss/config_io.hpp"
#include "evwsss/dataset_io.hpp"
#include "evwsss/errors.hpp"
#include "evwsss/event_core.hpp"
#include "evwsss/image.hpp"
#include "evwsss/labels.hpp"

namespace evwsss::annotate {

namespace fs = std::filesystem;
using json = nlohmann::json;
using dataset::LabelRecord;

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct FrameInfo {
  std::string id;
  fs::path dir;
  int width = 0;
  int height = 0;
  events::Timestamp target_time = 0;
  std::optional<LabelRecord> record;
};

inline std::string status_of(const FrameInfo& f) {
  if (!f.record) return "unlabeled";
  if (f.record->labels.empty()) return f.record->note == "skipped" ? "skipped" : "unlabeled";
  return "labeled";
}

// Label records of every frame in a dataset. Loading re-validates every stored
// record and fails with the offending file on the first bad one.
class LabelStore {
 public:
  explicit LabelStore(fs::path root, events::Timestamp render_window = 10'000)
      : root_(std::move(root)), render_window_(render_window) {
    palette_ = dataset::load_palette(root_);
    for (const auto& dir : dataset::sample_dirs(root_)) {
      FrameInfo f;
      f.dir = dir;
      fs::path current = dir;
      try {
        const auto meta = dataset::load_meta(dir);
        f.id = meta.frame_id;
        f.target_time = meta.target_time;
        std::ifstream is(dir / "events.txt");
        if (!is) throw NotFoundError("missing events.txt");
        std::string header;
        std::getline(is, header);
        if (std::sscanf(header.c_str(), "# width=%d height=%d", &f.width, &f.height) != 2)
          throw FormatError("bad event file header");
        current = dataset::labels_path(dir);
        if (fs::exists(current))
          f.record = dataset::load_labels(dir, f.width, f.height, static_cast<int>(palette_.size()));
      } catch (const std::exception& e) {
        throw FormatError("corrupt label store at " + current.string() + ": " + e.what());
      }
      if (f.record && f.record->frame_id != f.id)
        throw FormatError("corrupt label store at " + dataset::labels_path(dir).string() + ": frame id mismatch");
      if (frames_.contains(f.id)) throw FormatError("duplicate frame id '" + f.id + "' in " + root_.string());
      order_.push_back(f.id);
      frames_.emplace(f.id, std::move(f));
    }
  }

  const dataset::Palette& palette() const noexcept { return palette_; }
  const fs::path& root() const noexcept { return root_; }

  std::vector<FrameInfo> frames() const {
    std::lock_guard lock(mu_);
    std::vector<FrameInfo> out;
    for (const auto& id : order_) out.push_back(frames_.at(id));
    return out;
  }

  LabelRecord get(const std::string& id) const {
    std::lock_guard lock(mu_);
    const FrameInfo& f = find(id);
    return f.record ? *f.record : LabelRecord{id, {}, "", "", 0};
  }

  // Validates and stores a record; the version is one past the stored one.
  LabelRecord put(const std::string& id, LabelRecord rec) {
    std::lock_guard lock(mu_);
    FrameInfo& f = find(id);
    if (!rec.frame_id.empty() && rec.frame_id != id)
      throw ValidationError({"frame_id '" + rec.frame_id + "' does not match the URL frame '" + id + "'"});
    rec.frame_id = id;
    validate_labels(rec.labels, f.width, f.height, static_cast<int>(palette_.size()));
    rec.version = (f.record ? f.record->version : 0) + 1;
    rec.timestamp = utc_now();
    dataset::save_labels(f.dir, rec, fault_);
    f.record = rec;
    return rec;
  }

  RgbImage image(const std::string& id) const {
    fs::path dir;
    events::Timestamp T = 0;
    {
      std::lock_guard lock(mu_);
      const FrameInfo& f = find(id);
      dir = f.dir;
      T = f.target_time;
    }
    const auto stream = events::load_events(dir / "events.txt");
    const events::Timestamp t0 = std::max<events::Timestamp>(0, T - render_window_);
    return events::render_frame(T > t0 ? events::slice_window(stream, t0, T) : events::EventStream(stream.sensor(), {}));
  }

  std::vector<LabelRecord> export_records() const {
    std::lock_guard lock(mu_);
    std::vector<LabelRecord> out;
    for (const auto& id : order_) {
      const auto& f = frames_.at(id);
      if (f.record && !f.record->labels.empty()) out.push_back(*f.record);
    }
    return out;
  }

  // Runs between the temporary write and the rename of every PUT.
  void set_fault_injector(std::function<void()> f) { fault_ = std::move(f); }

 private:
  FrameInfo& find(const std::string& id) {
    auto it = frames_.find(id);
    if (it == frames_.end()) throw NotFoundError("unknown frame '" + id + "'");
    return it->second;
  }
  const FrameInfo& find(const std::string& id) const {
    auto it = frames_.find(id);
    if (it == frames_.end()) throw NotFoundError("unknown frame '" + id + "'");
    return it->second;
  }

  fs::path root_;
  events::Timestamp render_window_;
  dataset::Palette palette_;
  std::vector<std::string> order_;
  std::map<std::string, FrameInfo> frames_;
  std::function<void()> fault_;
  mutable std::mutex mu_;
};

inline std::string hex_color(const std::array<std::uint8_t, 3>& c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c[0], c[1], c[2]);
  return buf;
}

inline void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& kind, const std::string& message,
                       const std::vector<std::string>& violations = {}) {
  json body = {{"error", kind}, {"message", message}};
  if (!violations.empty()) body["violations"] = violations;
  send_json(res, body, status);
}

// Wraps a handler so library exceptions map to JSON error responses.
template <class F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const NotFoundError& e) {
      send_error(res, 404, "not_found", e.what());
    } catch (const ValidationError& e) {
      send_error(res, 422, "validation", e.what(), e.violations());
    } catch (const SchemaError& e) {
      send_error(res, 400, "schema", e.what(), {e.field()});
    } catch (const json::exception& e) {
      send_error(res, 400, "malformed", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  };
}

inline void register_routes(httplib::Server& svr, LabelStore& store) {
  svr.Get("/frames", guarded([&store](const httplib::Request&, httplib::Response& res) {
            json list = json::array();
            for (const auto& f : store.frames())
              list.push_back({{"frame_id", f.id}, {"status", status_of(f)}, {"version", f.record ? f.record->version : 0}});
            send_json(res, {{"frames", std::move(list)}});
          }));
  svr.Get(R"(/frames/([^/]+)/image)", guarded([&store](const httplib::Request& req, httplib::Response& res) {
            res.set_content(encode_png(store.image(req.matches[1])), "image/png");
          }));
  svr.Get(R"(/frames/([^/]+)/labels)", guarded([&store](const httplib::Request& req, httplib::Response& res) {
            const LabelRecord rec = store.get(req.matches[1]);
            json j = dataset::to_json(rec);
            j["version"] = rec.version;
            send_json(res, j);
          }));
  svr.Put(R"(/frames/([^/]+)/labels)", guarded([&store](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.matches[1];
            store.get(id);
            json body = json::parse(req.body);
            if (body.is_object() && !body.contains("frame_id")) body["frame_id"] = id;
            const LabelRecord stored = store.put(id, dataset::record_from_json(body, ""));
            json j = dataset::to_json(stored);
            j["version"] = stored.version;
            send_json(res, j);
          }));
  svr.Get("/classes", guarded([&store](const httplib::Request&, httplib::Response& res) {
            json classes = json::array();
            for (const auto& e : store.palette())
              classes.push_back({{"id", e.id}, {"name", e.name}, {"color", hex_color(e.color)}});
            send_json(res, {{"classes", std::move(classes)}});
          }));
  svr.Get("/export", guarded([&store](const httplib::Request&, httplib::Response& res) {
            send_json(res, dataset::bundle_to_json(store.export_records()));
          }));
}

// HTTP server bound to loopback unless a host is given.
class Server {
 public:
  explicit Server(LabelStore& store) : store_(store) { register_routes(svr_, store_); }

  // Binds; port 0 picks a free port. Returns the bound port.
  int bind(int port, const std::string& host = "127.0.0.1") {
    const int bound = port == 0 ? svr_.bind_to_any_port(host) : (svr_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    return bound;
  }

  // Blocks until stop().
  void run() { svr_.listen_after_bind(); }
  void stop() { svr_.stop(); }
  void wait_until_ready() { svr_.wait_until_ready(); }

 private:
  LabelStore& store_;
  httplib::Server svr_;
};

}  // namespace evwsss::annotate
