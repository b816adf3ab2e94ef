#pragma once

// Segmentation metrics and the ablation harness: confusion matrices, per-class
// IoU / mIoU reports, and grid runs over modes, thresholds and label
// corruption with per-seed medians, CSV export and summary plots.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "evwsss/dataset_io.hpp"
#include "evwsss/errors.hpp"
#include "evwsss/labels.hpp"
#include "evwsss/plot.hpp"
#include "evwsss/rng.hpp"
#include "evwsss/synth_scene.hpp"
#include "evwsss/trainer.hpp"

namespace evwsss::eval {

// mIoU requested for a matrix in which no class has support.
class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Rows are ground truth, columns prediction.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::uint64_t> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int c) : num_classes(c), counts(static_cast<std::size_t>(c) * c, 0) {
    if (c < 1) throw ArgumentError("confusion: need at least one class");
  }

  std::uint64_t& at(int gt, int pred) { return counts[static_cast<std::size_t>(gt) * num_classes + pred]; }
  std::uint64_t at(int gt, int pred) const { return counts[static_cast<std::size_t>(gt) * num_classes + pred]; }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto v : counts) t += v;
    return t;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    if (o.num_classes != num_classes) throw ArgumentError("confusion: class count mismatch");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
    return *this;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

// Tallies (gt, pred) over pixels where neither map holds 255.
inline ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& gt, int num_classes) {
  if (pred.width != gt.width || pred.height != gt.height) throw ArgumentError("confusion: map sizes differ");
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int g = gt.values[i], p = pred.values[i];
    if (g == kIgnoreLabel || p == kIgnoreLabel) continue;
    if (g >= num_classes || p >= num_classes) throw ArgumentError("confusion: class id out of range");
    ++cm.at(g, p);
  }
  return cm;
}

struct MetricsReport {
  std::vector<std::optional<double>> iou;  // empty optional: no support in GT or prediction
  double miou = 0.0;
  std::vector<std::uint64_t> gt_pixels, pred_pixels;
  std::string mode;
  std::uint64_t seed = 0;
  std::string config_hash;
};

inline MetricsReport miou(const ConfusionMatrix& cm) {
  const int C = cm.num_classes;
  MetricsReport r;
  r.iou.resize(static_cast<std::size_t>(C));
  r.gt_pixels.assign(static_cast<std::size_t>(C), 0);
  r.pred_pixels.assign(static_cast<std::size_t>(C), 0);
  for (int g = 0; g < C; ++g)
    for (int p = 0; p < C; ++p) {
      r.gt_pixels[static_cast<std::size_t>(g)] += cm.at(g, p);
      r.pred_pixels[static_cast<std::size_t>(p)] += cm.at(g, p);
    }
  double sum = 0.0;
  int n = 0;
  for (int c = 0; c < C; ++c) {
    const auto k = static_cast<std::size_t>(c);
    const std::uint64_t denom = r.gt_pixels[k] + r.pred_pixels[k] - cm.at(c, c);
    if (denom == 0) continue;
    r.iou[k] = static_cast<double>(cm.at(c, c)) / static_cast<double>(denom);
    sum += *r.iou[k];
    ++n;
  }
  if (n == 0) throw UndefinedMetricError("miou: no class has ground-truth or predicted pixels");
  r.miou = sum / n;
  return r;
}

inline config::json to_json(const MetricsReport& r) {
  config::json iou = config::json::array();
  for (const auto& v : r.iou) iou.push_back(v ? config::json(*v) : config::json(nullptr));
  return {{"miou", r.miou},          {"iou", std::move(iou)}, {"gt_pixels", r.gt_pixels},
          {"pred_pixels", r.pred_pixels}, {"mode", r.mode},  {"seed", r.seed},
          {"config_hash", r.config_hash}};
}

// Plain-text table: one row per class, then the mean.
inline std::string format_report(const MetricsReport& r) {
  std::ostringstream os;
  char buf[128];
  os << "class        iou   gt_px  pred_px\n";
  for (std::size_t c = 0; c < r.iou.size(); ++c) {
    if (r.iou[c])
      std::snprintf(buf, sizeof buf, "%5zu  %9.4f %7llu %8llu\n", c, *r.iou[c],
                    static_cast<unsigned long long>(r.gt_pixels[c]), static_cast<unsigned long long>(r.pred_pixels[c]));
    else
      std::snprintf(buf, sizeof buf, "%5zu  %9s %7llu %8llu\n", c, "-", static_cast<unsigned long long>(r.gt_pixels[c]),
                    static_cast<unsigned long long>(r.pred_pixels[c]));
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "mIoU   %9.4f\n", r.miou);
  os << buf;
  return os.str();
}

// FNV-1a over the bytes of every parameter, in canonical order.
inline std::uint64_t parameter_hash(const train::Model<train::Scalar>& m) {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&](std::string_view, const Tensor<train::Scalar>& t) {
    const auto* b = reinterpret_cast<const unsigned char*>(t.data());
    for (std::size_t i = 0; i < t.size() * sizeof(train::Scalar); ++i) h = (h ^ b[i]) * 1099511628211ULL;
  };
  m.forward.visit(feed);
  m.backward.visit(feed);
  m.projection.visit(feed);
  return h;
}

inline std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string config_hash(const train::TrainConfig& cfg) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : config::to_json(cfg).dump()) h = (h ^ c) * 1099511628211ULL;
  return hex(h);
}

// Forward-branch predictions against dense GT, pooled over all samples.
inline ConfusionMatrix evaluate_confusion(const train::Model<train::Scalar>& model,
                                          const std::vector<train::PreparedSample>& samples) {
  ConfusionMatrix cm(model.network.num_classes);
  for (const auto& s : samples) {
    if (s.gt.values.empty()) throw ArgumentError("evaluate: sample '" + s.id + "' has no ground truth");
    cm += confusion(train::predict(model, s.forward_voxels), s.gt, model.network.num_classes);
  }
  return cm;
}

inline MetricsReport evaluate(const train::Model<train::Scalar>& model,
                              const std::vector<train::PreparedSample>& samples) {
  return miou(evaluate_confusion(model, samples));
}

inline std::vector<train::PreparedSample> prepare_all(const std::vector<dataset::Sample>& samples,
                                                      const train::TrainConfig& cfg) {
  std::vector<train::PreparedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples)
    out.push_back(train::prepare_sample(s.events, s.target_time, s.labels.labels, cfg, s.id, s.gt));
  return out;
}

// 80/20 split by scene seed: samples are ranked by a hash of their seed and
// the first fifth (rounded) is held out.
struct Split {
  std::vector<std::size_t> train, eval;
  std::string hash;
};

inline Split split_by_seed(const std::vector<dataset::Sample>& samples, double eval_fraction = 0.2) {
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto key = [&](std::size_t i) { return Rng::mix(samples[i].seed ^ 0x5eed5111ULL); };
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return key(a) != key(b) ? key(a) < key(b) : samples[a].id < samples[b].id;
  });
  const auto n_eval = static_cast<std::size_t>(std::lround(eval_fraction * static_cast<double>(samples.size())));
  Split s;
  s.eval.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_eval));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_eval), idx.end());
  std::sort(s.eval.begin(), s.eval.end());
  std::sort(s.train.begin(), s.train.end());
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i : s.eval)
    for (unsigned char c : samples[i].id) h = (h ^ c) * 1099511628211ULL;
  s.hash = hex(h);
  return s;
}

struct Corruption {
  double swap_p = 0.0;
  double drop_rate = 0.0;
  int confusing_count = 2;  // smallest-area classes over the training split

  bool any() const { return swap_p > 0.0 || drop_rate > 0.0; }
};

struct AblationCell {
  std::string name;
  train::TrainConfig config;
  Corruption corruption;
};

struct AblationGrid {
  std::vector<AblationCell> cells;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string data_dir;  // dataset directory named by the grid document, if any
};


// Ablation grid document:
//   {"schema_version": 1, "data": dir, "base": {train config}, "seeds": [0, 1, 2],
//    "cells": [{"name": str, "train": {overrides}, "swap_p": p, "drop_rate": r,
//               "confusing_count": n}]}
inline AblationGrid grid_from_json(const config::json& j, train::TrainConfig base = {}) {
  config::FieldReader r(j, "");
  config::check_schema_version(r);
  if (r.has("base")) base = config::train_config_from_json(r.object("base"), "base", base);
  AblationGrid g;
  r.get("data", g.data_dir);
  if (r.has("seeds")) {
    g.seeds.clear();
    const auto& seeds = r.array("seeds");
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      if (!seeds[i].is_number_unsigned()) throw SchemaError("seeds[" + std::to_string(i) + "]", "expected a seed");
      g.seeds.push_back(seeds[i].get<std::uint64_t>());
    }
    if (g.seeds.empty()) throw SchemaError("seeds", "need at least one seed");
  }
  if (!r.has("cells")) throw SchemaError("cells", "missing required field");
  const auto& cells = r.array("cells");
  r.finish();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const std::string path = "cells[" + std::to_string(i) + "]";
    config::FieldReader cr(cells[i], path);
    AblationCell c;
    c.config = base;
    cr.get("name", c.name);
    if (cr.has("train")) c.config = config::train_config_from_json(cr.object("train"), path + ".train", base);
    cr.get("swap_p", c.corruption.swap_p);
    cr.get("drop_rate", c.corruption.drop_rate);
    cr.get("confusing_count", c.corruption.confusing_count);
    cr.finish();
    if (c.corruption.swap_p < 0 || c.corruption.swap_p > 1) throw SchemaError(path + ".swap_p", "must be in [0, 1]");
    if (c.corruption.drop_rate < 0 || c.corruption.drop_rate > 1)
      throw SchemaError(path + ".drop_rate", "must be in [0, 1]");
    if (c.name.empty()) c.name = train::to_string(c.config.mode);
    g.cells.push_back(std::move(c));
  }
  return g;
}

struct SeedResult {
  std::uint64_t seed = 0;
  std::optional<MetricsReport> report;
  std::string error;
  std::vector<train::LogRecord> log;
  double seconds = 0.0;
};

struct CellResult {
  AblationCell cell;
  std::vector<SeedResult> seeds;
  std::optional<double> median_miou;
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw ArgumentError("median: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Applies drop and swap corruption to training labels. The rng stream of a
// sample depends only on (seed, sample seed).
inline std::vector<train::PreparedSample> corrupt(const std::vector<train::PreparedSample>& train_set,
                                                  const std::vector<std::uint64_t>& sample_seeds,
                                                  const Corruption& c, const std::set<int>& confusing,
                                                  std::uint64_t seed) {
  std::vector<train::PreparedSample> out = train_set;
  if (!c.any()) return out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    Rng rng(Rng::mix(seed ^ Rng::mix(sample_seeds[i] + 0xc0ffee)));
    auto labels = synth::corrupt_drop(out[i].labels, confusing, c.drop_rate, rng);
    labels = synth::corrupt_swap(labels, c.swap_p, rng);
    // A frame whose every click was dropped keeps one click so the weak loss
    // stays defined.
    if (labels.empty()) labels.points.push_back(out[i].labels.points.front());
    out[i].labels = std::move(labels);
  }
  return out;
}

struct AblationOptions {
  std::filesystem::path out_dir;  // CSV and plots; empty disables
  std::function<void(const CellResult&, const SeedResult&)> on_result;
};

inline std::string csv_header(int num_classes) {
  std::string h = "cell,mode,threshold,swap_p,drop_rate,seed,miou,status";
  for (int c = 0; c < num_classes; ++c) h += ",iou_" + std::to_string(c);
  return h;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

inline void write_csv(const std::filesystem::path& path, const std::vector<CellResult>& results, int num_classes,
                      const std::string& split_hash) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "# split_hash=" << split_hash << "\n" << csv_header(num_classes) << "\n";
  for (const auto& r : results) {
    const auto& c = r.cell;
    const std::string prefix = c.name + "," + train::to_string(c.config.mode) + "," +
                               format_double(c.config.threshold) + "," + format_double(c.corruption.swap_p) + "," +
                               format_double(c.corruption.drop_rate) + ",";
    for (const auto& s : r.seeds) {
      os << prefix << s.seed << ",";
      if (s.report) {
        os << format_double(s.report->miou) << ",ok";
        for (const auto& iou : s.report->iou) os << "," << (iou ? format_double(*iou) : "");
      } else {
        os << ",error";
        for (int k = 0; k < num_classes; ++k) os << ",";
      }
      os << "\n";
    }
    os << prefix << "median," << (r.median_miou ? format_double(*r.median_miou) : "") << ","
       << (r.median_miou ? "ok" : "error");
    for (int k = 0; k < num_classes; ++k) os << ",";
    os << "\n";
  }
}

inline void write_plots(const std::filesystem::path& dir, const std::vector<CellResult>& results) {
  std::vector<plot::Series> losses;
  std::vector<double> bars;
  std::map<std::string, plot::Series> by_threshold, by_swap;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    bars.push_back(r.median_miou ? *r.median_miou : std::numeric_limits<double>::quiet_NaN());
    if (!r.seeds.empty() && !r.seeds.front().log.empty()) {
      plot::Series s{{}, plot::series_color(i)};
      const auto& log = r.seeds.front().log;
      const std::size_t stride = std::max<std::size_t>(1, log.size() / 200);
      for (std::size_t k = 0; k < log.size(); k += stride) {
        double acc = 0;
        std::size_t n = 0;
        for (std::size_t j = k; j < std::min(log.size(), k + stride); ++j, ++n) acc += log[j].losses.total;
        s.points.emplace_back(static_cast<double>(log[k].step), acc / static_cast<double>(n));
      }
      losses.push_back(std::move(s));
    }
    if (!r.median_miou) continue;
    const std::string mode = train::to_string(r.cell.config.mode);
    if (r.cell.corruption.drop_rate == 0.0 && r.cell.corruption.swap_p == 0.0)
      by_threshold[mode].points.emplace_back(r.cell.config.threshold, *r.median_miou);
    if (r.cell.corruption.drop_rate == 0.0 && r.cell.config.threshold == 0.5)
      by_swap[mode].points.emplace_back(r.cell.corruption.swap_p, *r.median_miou);
  }
  auto finish = [](std::map<std::string, plot::Series>& m) {
    std::vector<plot::Series> out;
    std::size_t i = 0;
    for (auto& [k, s] : m) {
      std::sort(s.points.begin(), s.points.end());
      s.color = plot::series_color(i++);
      out.push_back(std::move(s));
    }
    return out;
  };
  plot::write_line_chart(dir / "loss_curves.png", losses);
  plot::write_bar_chart(dir / "miou_by_cell.png", bars);
  plot::write_line_chart(dir / "miou_vs_threshold.png", finish(by_threshold));
  plot::write_line_chart(dir / "miou_vs_corruption.png", finish(by_swap));
}

// One row per cell in grid order: median mIoU and the per-seed values.
inline std::string format_table(const std::vector<CellResult>& results) {
  std::ostringstream os;
  os << "cell                     mode                 th    swap  drop  median   seeds\n";
  char buf[256];
  for (const auto& r : results) {
    const auto& c = r.cell;
    std::snprintf(buf, sizeof buf, "%-24s %-20s %4.2f  %4.2f  %4.2f  ", c.name.c_str(),
                  train::to_string(c.config.mode).c_str(), c.config.threshold, c.corruption.swap_p,
                  c.corruption.drop_rate);
    os << buf;
    if (r.median_miou) {
      std::snprintf(buf, sizeof buf, "%6.4f ", *r.median_miou);
      os << buf;
    } else {
      os << " error ";
    }
    for (const auto& s : r.seeds) {
      if (s.report) {
        std::snprintf(buf, sizeof buf, "  %6.4f", s.report->miou);
        os << buf;
      } else {
        os << "  error";
      }
    }
    os << "\n";
  }
  return os.str();
}

// Trains every (cell, seed) with the given steps, evaluates the forward
// branch on the held-out split and aggregates medians over seeds. A failing
// run is recorded and the harness moves on.
inline std::vector<CellResult> run_ablation(const std::vector<dataset::Sample>& samples, const AblationGrid& grid,
                                            const AblationOptions& opts = {}) {
  if (samples.empty()) throw ArgumentError("run_ablation: empty dataset");
  if (grid.seeds.empty()) throw ArgumentError("run_ablation: no seeds");
  const Split split = split_by_seed(samples);
  std::vector<dataset::Sample> train_raw, eval_raw;
  for (std::size_t i : split.train) train_raw.push_back(samples[i]);
  for (std::size_t i : split.eval) eval_raw.push_back(samples[i]);
  std::vector<std::uint64_t> train_seeds;
  std::vector<LabelMap> train_gt;
  for (const auto& s : train_raw) {
    train_seeds.push_back(s.seed);
    train_gt.push_back(s.gt);
  }

  // Voxel preparation depends only on these settings; cache per key.
  using PrepKey = std::tuple<events::Timestamp, int, std::string>;
  std::map<PrepKey, std::pair<std::vector<train::PreparedSample>, std::vector<train::PreparedSample>>> cache;
  auto prepared = [&](const train::TrainConfig& cfg) -> auto& {
    PrepKey key{cfg.forward_window, cfg.backward_ratio, config::to_json(cfg.network).dump()};
    auto it = cache.find(key);
    if (it == cache.end())
      it = cache.emplace(key, std::make_pair(prepare_all(train_raw, cfg), prepare_all(eval_raw, cfg))).first;
    return it->second;
  };

  std::vector<CellResult> results;
  int num_classes = 0;
  for (const auto& cell : grid.cells) {
    CellResult cr{cell, {}, std::nullopt};
    num_classes = std::max(num_classes, cell.config.network.num_classes);
    std::vector<double> values;
    for (std::uint64_t seed : grid.seeds) {
      SeedResult sr;
      sr.seed = seed;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        train::TrainConfig cfg = cell.config;
        cfg.seed = seed;
        auto& [train_set, eval_set] = prepared(cfg);
        const auto confusing = synth::smallest_area_classes(train_gt, cfg.network.num_classes,
                                                            cell.corruption.confusing_count);
        const auto data = corrupt(train_set, train_seeds, cell.corruption, confusing, seed);
        train::Trainer trainer(cfg);
        sr.log = train::fit(trainer, data);
        MetricsReport rep = evaluate(trainer.model(), eval_set);
        rep.mode = train::to_string(cfg.mode);
        rep.seed = seed;
        rep.config_hash = config_hash(cfg);
        values.push_back(rep.miou);
        sr.report = std::move(rep);
      } catch (const std::exception& e) {
        sr.error = e.what();
      }
      sr.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      cr.seeds.push_back(std::move(sr));
      if (opts.on_result) opts.on_result(cr, cr.seeds.back());
    }
    if (!values.empty()) cr.median_miou = median(values);
    results.push_back(std::move(cr));
  }
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    write_csv(opts.out_dir / "ablation.csv", results, num_classes, split.hash);
    write_plots(opts.out_dir, results);
  }
  return results;
}

}  // namespace evwsss::eval
