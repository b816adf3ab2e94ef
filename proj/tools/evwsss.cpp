// evwsss command-line front end: synthetic data, training, evaluation,
// ablation grids, frame rendering and the annotation backend.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "evwsss/evwsss.hpp"

namespace fs = std::filesystem;
using namespace evwsss;

namespace {

dataset::Palette palette_for(int num_classes) {
  dataset::Palette p = dataset::synthetic_palette();
  p.resize(std::min<std::size_t>(p.size(), static_cast<std::size_t>(num_classes)));
  for (int k = static_cast<int>(p.size()); k < num_classes; ++k)
    p.push_back({k, "Class " + std::to_string(k), plot::series_color(static_cast<std::size_t>(k))});
  return p;
}

int cmd_synth(int scenes, std::uint64_t seed, const fs::path& out, const std::string& toy_path) {
  synth::ToySceneConfig toy;
  if (!toy_path.empty()) toy = config::toy_config_from_json(config::read_json_file(toy_path), "");
  fs::create_directories(out);
  for (const auto& s : synth::make_samples(toy, synth::SimConfig{}, scenes, seed)) dataset::save_sample(out / s.id, s);
  dataset::save_palette(out, palette_for(toy.num_classes));
  std::printf("wrote %d samples to %s\n", scenes, out.string().c_str());
  return 0;
}

// Relative paths inside a document resolve against the document's directory.
fs::path beside(const fs::path& doc, const fs::path& p) { return p.is_relative() ? doc.parent_path() / p : p; }

int cmd_train(const fs::path& config_path, const fs::path& out) {
  auto doc = config::train_document_from_json(config::read_json_file(config_path));
  doc.data_dir = beside(config_path, doc.data_dir);
  if (!doc.labels_bundle.empty()) doc.labels_bundle = beside(config_path, doc.labels_bundle);
  auto samples = dataset::load_dataset(doc.data_dir);
  if (samples.empty()) throw ArgumentError("train: dataset " + doc.data_dir.string() + " is empty");
  if (!doc.labels_bundle.empty())
    dataset::apply_bundle(samples, dataset::bundle_from_json(config::read_json_file(doc.labels_bundle)));
  for (const auto& s : samples)
    if (s.labels.labels.empty()) throw ValidationError({"frame '" + s.id + "' has no point labels"});

  fs::create_directories(out);
  const fs::path ckpt = out / "checkpoint.json";
  std::optional<train::Trainer> trainer;
  if (fs::exists(ckpt)) {
    trainer.emplace(checkpoint::load(ckpt));
    // Only the step budget may change between runs.
    train::TrainConfig stored = trainer->config();
    stored.steps = doc.train.steps;
    if (config::to_json(stored) != config::to_json(doc.train))
      throw ArgumentError("train: " + ckpt.string() + " was written with a different config");
    trainer->set_steps(doc.train.steps);
    std::printf("resuming from step %ld\n", trainer->step_count());
  } else {
    trainer.emplace(doc.train);
  }
  config::write_text_atomic(out / "config.json", config::to_json(doc).dump(2) + "\n");

  const auto data = eval::prepare_all(samples, doc.train);
  train::FitOptions opts;
  opts.log_path = out / "log.ndjson";
  opts.checkpoint_path = ckpt;
  opts.checkpoint_every = doc.checkpoint_every;
  opts.save_checkpoint = [](const train::Trainer& t, const fs::path& p) { checkpoint::save(t, p); };
  const long every = std::max(1, doc.train.steps / 20);
  opts.on_step = [every, total = doc.train.steps](const train::LogRecord& r) {
    if ((r.step + 1) % every == 0 || r.step + 1 == total)
      std::printf("step %ld/%d total %.4f weak %.4f\n", r.step + 1, total, r.losses.total, r.losses.l_weak);
  };
  train::fit(*trainer, data, opts);
  std::printf("checkpoint %s\n", ckpt.string().c_str());
  return 0;
}

int cmd_eval(const fs::path& ckpt, const fs::path& data_dir, const fs::path& json_out) {
  const train::Trainer trainer = checkpoint::load(ckpt);
  const auto samples = dataset::load_dataset(data_dir);
  if (samples.empty()) throw ArgumentError("eval: dataset " + data_dir.string() + " is empty");
  const auto data = eval::prepare_all(samples, trainer.config());
  auto rep = eval::evaluate(trainer.model(), data);
  rep.mode = train::to_string(trainer.config().mode);
  rep.seed = trainer.config().seed;
  rep.config_hash = eval::config_hash(trainer.config());
  std::cout << eval::format_report(rep);
  if (!json_out.empty()) config::write_text_atomic(json_out, eval::to_json(rep).dump(2) + "\n");
  return 0;
}

int cmd_ablate(const fs::path& grid_path, fs::path data_dir, fs::path out) {
  const auto grid = eval::grid_from_json(config::read_json_file(grid_path));
  if (data_dir.empty()) {
    if (grid.data_dir.empty()) throw SchemaError("data", "no dataset: pass --data or set it in the grid");
    data_dir = beside(grid_path, grid.data_dir);
  }
  if (out.empty()) out = grid_path.parent_path() / "ablation";
  const auto samples = dataset::load_dataset(data_dir);
  eval::AblationOptions opts;
  opts.out_dir = out;
  opts.on_result = [](const eval::CellResult& c, const eval::SeedResult& s) {
    if (s.report)
      std::fprintf(stderr, "%s seed %llu: mIoU %.4f (%.0f s)\n", c.cell.name.c_str(),
                   static_cast<unsigned long long>(s.seed), s.report->miou, s.seconds);
    else
      std::fprintf(stderr, "%s seed %llu: failed: %s\n", c.cell.name.c_str(),
                   static_cast<unsigned long long>(s.seed), s.error.c_str());
  };
  const auto results = eval::run_ablation(samples, grid, opts);
  std::cout << eval::format_table(results);
  std::printf("wrote %s\n", (out / "ablation.csv").string().c_str());
  for (const auto& r : results)
    if (!r.median_miou) return 3;
  return 0;
}

int cmd_render(const fs::path& events_path, const fs::path& out, long long t0, long long t1) {
  auto stream = events::load_events(events_path);
  if (t0 >= 0 || t1 >= 0)
    stream = events::slice_window(stream, t0 >= 0 ? t0 : 0, t1 >= 0 ? t1 : events::kForever);
  write_png(out, events::render_frame(stream));
  std::printf("rendered %zu events to %s\n", stream.size(), out.string().c_str());
  return 0;
}

annotate::Server* g_server = nullptr;

int cmd_serve(const fs::path& data_dir, int port, const std::string& host) {
  annotate::LabelStore store(data_dir);
  annotate::Server server(store);
  const int bound = server.bind(port, host);
  g_server = &server;
  std::signal(SIGINT, [](int) { g_server->stop(); });
  std::signal(SIGTERM, [](int) { g_server->stop(); });
  std::printf("serving %zu frames from %s on http://%s:%d\n", store.frames().size(), data_dir.string().c_str(),
              host.c_str(), bound);
  std::fflush(stdout);
  server.run();
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly supervised event-based segmentation toolkit"};
  app.require_subcommand(1);

  int scenes = 10;
  std::uint64_t seed = 0;
  fs::path out, config_path, ckpt, data_dir, grid_path, events_path, json_out;
  std::string toy_path, host = "127.0.0.1";
  int port = 8080;
  long long t0 = -1, t1 = -1;

  auto* synth = app.add_subcommand("synth", "Generate synthetic samples");
  synth->add_option("--scenes", scenes, "Number of samples")->check(CLI::NonNegativeNumber);
  synth->add_option("--seed", seed, "Dataset seed");
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--toy-config", toy_path, "Scene generator config (JSON)")->check(CLI::ExistingFile);

  auto* trn = app.add_subcommand("train", "Train from a config document");
  trn->add_option("--config", config_path, "Training document (JSON)")->required()->check(CLI::ExistingFile);
  trn->add_option("--out", out, "Run directory (log, checkpoint)")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint against dense ground truth");
  ev->add_option("--ckpt", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--json", json_out, "Also write the report as JSON");

  auto* abl = app.add_subcommand("ablate", "Run an ablation grid");
  abl->add_option("--grid", grid_path, "Grid document (JSON)")->required()->check(CLI::ExistingFile);
  abl->add_option("--data", data_dir, "Dataset directory (overrides the grid's)");
  abl->add_option("--out", out, "Report directory");

  auto* ren = app.add_subcommand("render", "Render an event file to PNG");
  ren->add_option("--events", events_path, "Event file")->required()->check(CLI::ExistingFile);
  ren->add_option("--out", out, "Output PNG")->required();
  ren->add_option("--t0", t0, "Window start (us)");
  ren->add_option("--t1", t1, "Window end (us, exclusive)");

  auto* srv = app.add_subcommand("serve-annotate", "Serve the point-annotation API over a dataset");
  srv->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  srv->add_option("--port", port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));
  srv->add_option("--host", host, "Bind address");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return cmd_synth(scenes, seed, out, toy_path);
    if (*trn) return cmd_train(config_path, out);
    if (*ev) return cmd_eval(ckpt, data_dir, json_out);
    if (*abl) return cmd_ablate(grid_path, data_dir, out);
    if (*ren) return cmd_render(events_path, out, t0, t1);
    if (*srv) return cmd_serve(data_dir, port, host);
  } catch (const SchemaError& e) {
    std::fprintf(stderr, "schema error: %s\n", e.what());
    return 2;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    for (const auto& v : e.violations()) std::fprintf(stderr, "  - %s\n", v.c_str());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
