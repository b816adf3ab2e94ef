#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "evwsss/evwsss.hpp"
#include "oracles.hpp"

using namespace evwsss;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("evwsss_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct Run {
  int code = -1;
  std::string output;
};

Run run_cli(const std::string& args, bool with_stderr = true) {
  const std::string cmd = std::string(EVWSSS_CLI) + " " + args + (with_stderr ? " 2>&1" : " 2>/dev/null");
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) r.output += buf;
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

const char* kToy = R"({"width": 32, "height": 32, "min_speed": 200, "max_speed": 400})";

nn::NetworkConfig tiny_network() {
  nn::NetworkConfig n;
  n.height = n.width = 32;
  n.feature_dim = 8;
  n.hidden_width = 4;
  return n;
}

json tiny_train(const std::string& mode, int steps) {
  return {{"mode", mode},
          {"steps", steps},
          {"batch_size", 2},
          {"network", {{"height", 32}, {"width", 32}, {"feature_dim", 8}, {"hidden_width", 4}}}};
}

// Writes n synthetic 32x32 samples with the synthetic palette.
fs::path make_dataset(const std::string& name, int n, std::uint64_t seed) {
  const auto root = scratch(name);
  synth::ToySceneConfig toy;
  toy.width = toy.height = 32;
  toy.min_speed = 200;
  toy.max_speed = 400;
  for (const auto& s : synth::make_samples(toy, synth::SimConfig{}, n, seed)) dataset::save_sample(root / s.id, s);
  dataset::save_palette(root, dataset::synthetic_palette());
  return root;
}

std::size_t line_count(const fs::path& p) {
  std::ifstream is(p);
  std::size_t n = 0;
  for (std::string l; std::getline(is, l);) n += !l.empty();
  return n;
}

std::map<std::string, std::string> tree_contents(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file(e.path());
  return out;
}

dataset::LabelRecord record(const std::string& id, std::vector<LabelPoint> pts) {
  return {id, PointLabelSet{std::move(pts), LabelMode::OneClickPerClass}, "", "", 0};
}

// In-process annotation service on an ephemeral loopback port.
struct Service {
  annotate::LabelStore store;
  annotate::Server server;
  int port;
  std::thread thread;

  explicit Service(const fs::path& root) : store(root), server(store), port(server.bind(0)) {
    thread = std::thread([this] { server.run(); });
    server.wait_until_ready();
  }
  ~Service() {
    server.stop();
    thread.join();
  }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port); }
};

}  // namespace

TEST(DatasetIO, SampleRoundTrip) {
  const auto root = make_dataset("roundtrip", 2, 5);
  synth::ToySceneConfig toy;
  toy.width = toy.height = 32;
  toy.min_speed = 200;
  toy.max_speed = 400;
  const auto expected = synth::make_samples(toy, synth::SimConfig{}, 2, 5);
  const auto loaded = dataset::load_dataset(root);
  ASSERT_EQ(loaded.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(loaded[i].id, expected[i].id);
    EXPECT_EQ(loaded[i].seed, expected[i].seed);
    EXPECT_EQ(loaded[i].target_time, expected[i].target_time);
    EXPECT_EQ(loaded[i].gt, expected[i].gt);
    EXPECT_EQ(loaded[i].labels.labels, expected[i].labels);
    ASSERT_EQ(loaded[i].events.size(), expected[i].events.size());
    EXPECT_TRUE(std::equal(loaded[i].events.begin(), loaded[i].events.end(), expected[i].events.begin()));
  }
}

TEST(DatasetIO, PaletteDefaultsAndRoundTrip) {
  const auto p = dataset::default_palette();
  ASSERT_EQ(p.size(), 11u);
  EXPECT_EQ(p[0].name, "Sky");
  EXPECT_EQ(p[10].name, "Traffic-sign");
  EXPECT_EQ(dataset::palette_from_json(dataset::to_json(p)), p);
  const auto root = scratch("palette");
  EXPECT_EQ(dataset::load_palette(root), p);
  dataset::save_palette(root, dataset::synthetic_palette());
  EXPECT_EQ(dataset::load_palette(root), dataset::synthetic_palette());
  auto j = dataset::to_json(p);
  j["classes"][1]["id"] = 5;
  EXPECT_THROW(dataset::palette_from_json(j), SchemaError);
}

TEST(DatasetIO, BundleSchema) {
  const auto j = json::parse(R"({"frames": [{"frame_id": "a", "mode": "1C1C",
                                 "points": [{"x": 1, "y": 2, "class_id": 3}]}]})");
  const auto b = dataset::bundle_from_json(j);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(b[0].labels.points[0], (LabelPoint{1, 2, 3}));
  EXPECT_EQ(dataset::bundle_from_json(dataset::bundle_to_json(b)), b);
  auto bad = j;
  bad["frames"][0]["points"][0].erase("class_id");
  try {
    dataset::bundle_from_json(bad);
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.field(), "frames[0].points[0].class_id");
  }
  bad = j;
  bad["frames"][0]["mode"] = "2C2C";
  EXPECT_THROW(dataset::bundle_from_json(bad), SchemaError);
}

TEST(LabelStore, PutGetIncrementsVersion) {
  const auto root = make_dataset("store_put", 2, 1);
  annotate::LabelStore store(root);
  const auto id = store.frames()[0].id;
  const long v0 = store.get(id).version;
  const auto stored = store.put(id, record(id, {{3, 4, 1}, {10, 12, 0}}));
  EXPECT_EQ(stored.version, v0 + 1);
  EXPECT_FALSE(stored.timestamp.empty());
  EXPECT_EQ(store.get(id), stored);
  EXPECT_EQ(store.put(id, record(id, {{5, 5, 2}})).version, v0 + 2);
  // A fresh store re-reads what was persisted.
  annotate::LabelStore reopened(root);
  EXPECT_EQ(reopened.get(id).labels, (PointLabelSet{{{5, 5, 2}}, LabelMode::OneClickPerClass}));
  EXPECT_EQ(reopened.get(id).version, v0 + 2);
  EXPECT_THROW(store.get("nope"), NotFoundError);
  EXPECT_THROW(store.put(id, record("other", {})), ValidationError);
}

TEST(LabelStore, SkippedAndUnlabeledStatus) {
  const auto root = make_dataset("store_status", 2, 1);
  annotate::LabelStore store(root);
  const auto id = store.frames()[0].id;
  EXPECT_EQ(annotate::status_of(store.frames()[0]), "labeled");
  auto rec = record(id, {});
  rec.note = "skipped";
  store.put(id, rec);
  EXPECT_EQ(annotate::status_of(store.frames()[0]), "skipped");
  store.put(id, record(id, {}));
  EXPECT_EQ(annotate::status_of(store.frames()[0]), "unlabeled");
  // Empty records are not exported.
  EXPECT_EQ(store.export_records().size(), 1u);
}

TEST(LabelStore, RefusesCorruptStoreNamingTheFile) {
  const auto root = make_dataset("store_corrupt", 3, 2);
  const auto victim = dataset::sample_dirs(root)[1];
  const auto id = dataset::load_meta(victim).frame_id;
  write_file(dataset::labels_path(victim),
             dataset::bundle_to_json({record(id, {{1, 1, 3}, {2, 2, 3}})}).dump());
  try {
    annotate::LabelStore store(root);
    FAIL() << "store opened";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(dataset::labels_path(victim).string()), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("class 3"), std::string::npos) << e.what();
  }
  write_file(dataset::labels_path(victim), "{\"frames\": [");
  EXPECT_THROW(annotate::LabelStore{root}, FormatError);
}

TEST(LabelStore, CrashBeforeRenameLeavesRecordIntact) {
  const auto root = make_dataset("store_fault", 1, 3);
  annotate::LabelStore store(root);
  const auto id = store.frames()[0].id;
  const auto before = store.put(id, record(id, {{1, 2, 1}}));
  const auto file = dataset::labels_path(store.frames()[0].dir);
  const auto bytes = read_file(file);
  store.set_fault_injector([] { throw std::runtime_error("injected crash"); });
  EXPECT_THROW(store.put(id, record(id, {{7, 7, 2}, {8, 8, 3}})), std::runtime_error);
  EXPECT_EQ(read_file(file), bytes);
  EXPECT_EQ(store.get(id), before);
  store.set_fault_injector({});
  EXPECT_EQ(annotate::LabelStore(root).get(id), before);
}

TEST(AnnotationApi, FramesClassesAndImage) {
  const auto root = make_dataset("api_list", 3, 4);
  Service svc(root);
  auto cli = svc.client();
  auto res = cli.Get("/frames");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  const auto frames = json::parse(res->body).at("frames");
  ASSERT_EQ(frames.size(), 3u);
  EXPECT_EQ(frames[0].at("frame_id"), "frame_00000");
  EXPECT_EQ(frames[0].at("status"), "labeled");

  res = cli.Get("/classes");
  ASSERT_TRUE(res);
  const auto classes = json::parse(res->body).at("classes");
  ASSERT_EQ(classes.size(), 6u);
  EXPECT_EQ(classes[1].at("name"), "Small disk");
  EXPECT_EQ(classes[1].at("color"), "#e6194b");

  res = cli.Get("/frames/frame_00001/image");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(res->body.substr(1, 3), "PNG");

  res = cli.Get("/frames/missing/image");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 404);
  EXPECT_EQ(json::parse(res->body).at("error"), "not_found");
}

TEST(AnnotationApi, PutThenGetRoundTrip) {
  const auto root = make_dataset("api_put", 2, 4);
  Service svc(root);
  auto cli = svc.client();
  const std::string body = R"({"mode": "1C1C", "points": [{"x": 3, "y": 5, "class_id": 2}, {"x": 9, "y": 1, "class_id": 0}]})";
  auto res = cli.Get("/frames/frame_00001/labels");
  ASSERT_TRUE(res);
  const long v0 = json::parse(res->body).at("version");
  res = cli.Put("/frames/frame_00001/labels", body, "application/json");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200) << res->body;
  const auto put = json::parse(res->body);
  res = cli.Get("/frames/frame_00001/labels");
  ASSERT_TRUE(res);
  const auto got = json::parse(res->body);
  EXPECT_EQ(got, put);
  EXPECT_EQ(got.at("version"), v0 + 1);
  EXPECT_EQ(got.at("points").size(), 2u);

  res = cli.Put("/frames/frame_00001/labels", body, "application/json");
  EXPECT_EQ(json::parse(res->body).at("version"), v0 + 2);
}

TEST(AnnotationApi, ValidationErrorNamesClass) {
  const auto root = make_dataset("api_invalid", 1, 4);
  Service svc(root);
  auto cli = svc.client();
  const auto before = cli.Get("/frames/frame_00000/labels")->body;
  auto res = cli.Put("/frames/frame_00000/labels",
                     R"({"mode": "1C1C", "points": [{"x": 1, "y": 1, "class_id": 3}, {"x": 4, "y": 4, "class_id": 3}]})",
                     "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 422);
  const auto err = json::parse(res->body);
  EXPECT_EQ(err.at("error"), "validation");
  ASSERT_EQ(err.at("violations").size(), 1u);
  EXPECT_NE(err.at("violations")[0].get<std::string>().find("class 3"), std::string::npos);
  EXPECT_EQ(cli.Get("/frames/frame_00000/labels")->body, before);

  res = cli.Put("/frames/frame_00000/labels",
                R"({"mode": "1C1C", "points": [{"x": 40, "y": 1, "class_id": 1}, {"x": 40, "y": 1, "class_id": 2}]})",
                "application/json");
  EXPECT_EQ(res->status, 422);
  EXPECT_EQ(json::parse(res->body).at("violations").size(), 3u);  // two out of bounds, one duplicate

  res = cli.Put("/frames/frame_00000/labels", "{not json", "application/json");
  EXPECT_EQ(res->status, 400);
  res = cli.Put("/frames/frame_00000/labels", R"({"mode": "1C1C"})", "application/json");
  EXPECT_EQ(res->status, 400);
  EXPECT_EQ(json::parse(res->body).at("violations")[0], "points");
  res = cli.Put("/frames/nope/labels", R"({"mode": "1C1C", "points": []})", "application/json");
  EXPECT_EQ(res->status, 404);
}

TEST(AnnotationApi, ExportHasOneValidRecordPerLabeledFrame) {
  const auto root = make_dataset("api_export", 4, 6);
  Service svc(root);
  auto cli = svc.client();
  // Clear two frames, relabel one.
  for (const char* id : {"frame_00000", "frame_00002"})
    ASSERT_EQ(cli.Put(std::string("/frames/") + id + "/labels", R"({"mode": "1C1C", "points": []})",
                      "application/json")
                  ->status,
              200);
  ASSERT_EQ(cli.Put("/frames/frame_00003/labels", R"({"mode": "1C1C", "points": [{"x": 2, "y": 2, "class_id": 5}]})",
                    "application/json")
                ->status,
            200);
  auto res = cli.Get("/export");
  ASSERT_TRUE(res);
  const auto bundle = dataset::bundle_from_json(json::parse(res->body));
  ASSERT_EQ(bundle.size(), 2u);
  EXPECT_EQ(bundle[0].frame_id, "frame_00001");
  EXPECT_EQ(bundle[1].frame_id, "frame_00003");
  for (const auto& r : bundle) EXPECT_NO_THROW(validate_labels(r.labels, 32, 32, 6));
  auto samples = dataset::load_dataset(root);
  EXPECT_NO_THROW(dataset::apply_bundle(samples, bundle));
  EXPECT_EQ(samples[3].labels.labels.points.size(), 1u);
}

TEST(Cli, SynthIsDeterministic) {
  const auto dir = scratch("synth");
  write_file(dir / "toy.json", kToy);
  const auto a = run_cli("synth --scenes 2 --seed 7 --toy-config " + (dir / "toy.json").string() + " --out " +
                         (dir / "a").string());
  const auto b = run_cli("synth --scenes 2 --seed 7 --toy-config " + (dir / "toy.json").string() + " --out " +
                         (dir / "b").string());
  ASSERT_EQ(a.code, 0) << a.output;
  ASSERT_EQ(b.code, 0) << b.output;
  const auto ta = tree_contents(dir / "a");
  EXPECT_EQ(ta, tree_contents(dir / "b"));
  EXPECT_TRUE(ta.contains("frame_00000/events.txt"));
  EXPECT_TRUE(ta.contains("frame_00001/gt.png"));
  EXPECT_TRUE(ta.contains("classes.json"));
  const auto c = run_cli("synth --scenes 2 --seed 8 --toy-config " + (dir / "toy.json").string() + " --out " +
                         (dir / "c").string());
  EXPECT_NE(ta, tree_contents(dir / "c"));
}

TEST(Cli, UsageErrorsExitNonzero) {
  EXPECT_NE(run_cli("").code, 0);
  EXPECT_NE(run_cli("frobnicate").code, 0);
  EXPECT_NE(run_cli("synth --out /tmp/x --bogus 1").code, 0);
  EXPECT_NE(run_cli("eval --ckpt /nonexistent --data /tmp").code, 0);
}

TEST(Cli, SchemaErrorNamesField) {
  const auto dir = scratch("schema");
  write_file(dir / "train.json", R"({"schema_version": 1, "data": "ds", "train": {"lambda_dual": "high"}})");
  auto r = run_cli("train --config " + (dir / "train.json").string() + " --out " + (dir / "run").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("train.lambda_dual"), std::string::npos) << r.output;
  write_file(dir / "grid.json", R"({"schema_version": 1, "cells": [{"drop_rate": 2}]})");
  r = run_cli("ablate --grid " + (dir / "grid.json").string() + " --data " + dir.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("cells[0].drop_rate"), std::string::npos) << r.output;
}

TEST(Cli, EvalOfPerfectOracleIsOne) {
  const auto dir = scratch("oracle");
  // No objects: the ground truth is background everywhere.
  write_file(dir / "toy.json", R"({"width": 32, "height": 32, "min_objects": 0, "max_objects": 0})");
  ASSERT_EQ(run_cli("synth --scenes 3 --seed 1 --toy-config " + (dir / "toy.json").string() + " --out " +
                    (dir / "data").string())
                .code,
            0);
  train::TrainConfig cfg;
  cfg.network = tiny_network();
  train::Trainer trainer(cfg);
  auto& p = trainer.model().forward;
  p.visit([](std::string_view name, Tensor<train::Scalar>& t) {
    if (name == "dec.out.weight") t.fill(0.0f);
  });
  p.visit([](std::string_view name, Tensor<train::Scalar>& t) {
    if (name == "dec.out.bias") t[0] = 10.0f;
  });
  checkpoint::save(trainer, dir / "oracle.json");
  const auto r = run_cli("eval --ckpt " + (dir / "oracle.json").string() + " --data " + (dir / "data").string() +
                         " --json " + (dir / "report.json").string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("mIoU      1.0000"), std::string::npos) << r.output;
  const auto rep = json::parse(read_file(dir / "report.json"));
  EXPECT_DOUBLE_EQ(rep.at("miou").get<double>(), 1.0);
  EXPECT_EQ(rep.at("gt_pixels")[0], 3 * 32 * 32);
}

TEST(Cli, TrainResumeAndExportedLabels) {
  const auto root = make_dataset("train", 4, 9);
  std::vector<dataset::LabelRecord> bundle;
  for (const auto& s : dataset::load_dataset(root)) bundle.push_back(s.labels);
  bundle.resize(2);
  bundle[0].labels.points.resize(1);
  write_file(root / "labels.json", dataset::bundle_to_json(bundle).dump());
  json doc = {{"schema_version", 1}, {"data", "."}, {"labels", "labels.json"}, {"train", tiny_train("full", 2)}};
  write_file(root / "train.json", doc.dump());
  const auto run = root / "run";
  auto r = run_cli("train --config " + (root / "train.json").string() + " --out " + run.string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(run / "checkpoint.json"));
  EXPECT_EQ(line_count(run / "log.ndjson"), 2u);

  doc["train"]["steps"] = 4;
  write_file(root / "train.json", doc.dump());
  r = run_cli("train --config " + (root / "train.json").string() + " --out " + run.string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("resuming from step 2"), std::string::npos) << r.output;
  EXPECT_EQ(line_count(run / "log.ndjson"), 4u);

  doc["train"]["threshold"] = 0.3;
  write_file(root / "train.json", doc.dump());
  r = run_cli("train --config " + (root / "train.json").string() + " --out " + run.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("different config"), std::string::npos) << r.output;
}

TEST(Cli, RenderWritesPng) {
  const auto root = make_dataset("render", 1, 2);
  const auto r = run_cli("render --events " + (root / "frame_00000" / "events.txt").string() + " --t0 0 --t1 50000 --out " +
                         (root / "f.png").string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(read_gray_png(root / "f.png").width, 32);
}

TEST(Cli, AblateRowsFollowGridOrder) {
  const auto root = make_dataset("ablate", 6, 11);
  json cells = json::array();
  for (const char* m : {"baseline", "dual", "dual+proto", "dual+proto+distill", "full"})
    cells.push_back({{"name", std::string("row_") + m}, {"train", {{"mode", m}}}});
  const json grid = {{"schema_version", 1}, {"data", "."}, {"seeds", {0}}, {"base", tiny_train("baseline", 1)},
                     {"cells", cells}};
  write_file(root / "grid.json", grid.dump());
  const auto r = run_cli("ablate --grid " + (root / "grid.json").string(), false);
  ASSERT_EQ(r.code, 0) << r.output;
  std::vector<std::string> rows;
  std::istringstream table(r.output);
  for (std::string line; std::getline(table, line);)
    if (line.starts_with("row_")) rows.push_back(line.substr(0, line.find(' ')));
  EXPECT_EQ(rows, (std::vector<std::string>{"row_baseline", "row_dual", "row_dual+proto", "row_dual+proto+distill",
                                            "row_full"}));
  std::ifstream csv(root / "ablation" / "ablation.csv");
  std::vector<std::string> medians;
  for (std::string line; std::getline(csv, line);)
    if (line.find(",median,") != std::string::npos) medians.push_back(line.substr(0, line.find(',')));
  EXPECT_EQ(medians, rows);
}

TEST(Cli, ServeRefusesCorruptStore) {
  const auto root = make_dataset("serve_corrupt", 1, 2);
  write_file(dataset::labels_path(root / "frame_00000"),
             R"({"frames": [{"frame_id": "frame_00000", "mode": "1C1C", "points": [{"x": 99, "y": 0, "class_id": 1}]}]})");
  const auto r = run_cli("serve-annotate --data " + root.string() + " --port 0");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("labels.json"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("out of bounds"), std::string::npos) << r.output;
}
