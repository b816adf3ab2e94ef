// Acceptance run: exact property and oracle checks on random instances, then
// the trend criteria on the default synthetic benchmark. Prints one PASS/FAIL
// line per criterion and exits nonzero if any fails.
//
//   acceptance [--out DIR] [--skip-trends]

#include <Eigen/QR>

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>

#include "oracles.hpp"

using namespace evwsss;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Collects failed checks for one criterion.
struct Checks {
  int total = 0;
  std::vector<std::string> failures;

  void expect(bool ok, const std::string& what) {
    ++total;
    if (!ok && failures.size() < 20) failures.push_back(what);
    else if (!ok) failures.back() = "(and more)";
  }
  bool ok() const { return failures.empty(); }
};

int g_failed = 0;

void report(const char* name, bool pass, const std::string& detail) {
  std::printf("%s %s: %s\n", pass ? "PASS" : "FAIL", name, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failed;
}

std::string summary(const Checks& c, double secs) {
  std::string s = std::to_string(c.total) + " checks, " + std::to_string(c.failures.size()) + " failed, " +
                  std::to_string(static_cast<int>(secs)) + " s";
  for (const auto& f : c.failures) s += "\n    " + f;
  return s;
}

Tensor<double> random_unit(std::size_t D, Rng& rng) {
  auto t = oracle::random_tensor({D}, rng);
  proto::normalize_inplace(t);
  return t;
}

proto::PrototypeSet<double> random_anchors(std::size_t D, int K, Rng& rng) {
  proto::PrototypeSet<double> s;
  for (int k = 0; k < K; ++k) s.emplace(k, proto::ClassPrototype<double>{random_unit(D, rng), k, proto::BranchId::Forward});
  return s;
}

Eigen::MatrixXd random_rotation(std::size_t D, Rng& rng) {
  Eigen::MatrixXd m(D, D);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return Eigen::HouseholderQR<Eigen::MatrixXd>(m).householderQ();
}

// Rotates every D-vector of a (D, ...) tensor.
Tensor<double> rotate(const Eigen::MatrixXd& Q, const Tensor<double>& v) {
  const auto D = static_cast<std::size_t>(Q.rows());
  Tensor<double> out(v.shape());
  const std::size_t cols = v.size() / D;
  for (std::size_t c = 0; c < cols; ++c)
    for (std::size_t i = 0; i < D; ++i)
      for (std::size_t j = 0; j < D; ++j)
        out[i * cols + c] += Q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * v[j * cols + c];
  return out;
}

double unit_error(const Tensor<double>& v) { return std::abs(proto::norm(v) - 1.0); }

void property_suite() {
  const auto t0 = Clock::now();
  Checks c;
  Rng rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    const int W = rng.uniform_int(2, 24), H = rng.uniform_int(2, 24);
    const auto s = oracle::random_stream(W, H, rng.below(400), 1000, 9000, rng);
    c.expect(events::reverse(events::reverse(s)) == s, "reverse(reverse(s)) != s, trial " + std::to_string(trial));

    const int B = rng.uniform_int(1, 8);
    const auto g = events::voxelize(s, {B, {W, H}, 1000, 9000});
    double mass = 0;
    long polarity = 0;
    for (double v : g.data.values()) mass += v;
    for (const auto& e : s) polarity += e.p;
    c.expect(std::abs(mass - static_cast<double>(polarity)) <= 1e-5 * std::max(1.0, std::abs(double(polarity))),
             "voxel mass " + std::to_string(mass) + " vs polarity sum " + std::to_string(polarity));
  }

  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t D = 2 + rng.below(10);
    const auto z = oracle::random_tensor({D, 6, 7}, rng, rng.uniform(0.01, 100.0));
    Tensor<double> r({6, 7});
    for (auto& v : r.values()) v = rng.uniform(0.0, 1.0);
    const auto a = oracle::random_labels(7, 6, 5, rng, 0.3);
    const auto intra = proto::intra_aggregate(z, r, a, proto::BranchId::Forward);
    proto::PrototypeBank<double> bank(D, 1 + rng.below(6));
    for (int push = 0; push < 4; ++push) bank.push(proto::intra_aggregate(oracle::random_tensor({D, 6, 7}, rng), r,
                                                                          oracle::random_labels(7, 6, 5, rng, 0.3),
                                                                          proto::BranchId::Backward));
    const auto inter = proto::inter_aggregate_all(bank);
    const auto pair = nn::init_projection<double>(D, 0.5, trial);
    for (const auto& [k, p] : intra) c.expect(unit_error(p.vector) <= 1e-6, "intra prototype not unit");
    for (const auto& [k, p] : inter) {
      c.expect(unit_error(p.vector) <= 1e-6, "inter prototype not unit");
      if (intra.contains(k)) {
        const auto d = proto::dual_combine(intra.at(k), proto::deliver(pair, p, nn::Direction::BackwardToForward));
        c.expect(unit_error(d.vector) <= 1e-6, "dual prototype not unit");
      }
    }
  }

  for (int trial = 0; trial < 100; ++trial) {
    const auto p = oracle::random_probs(2 + rng.below(6), 5, 6, rng);
    double th[3] = {rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)};
    std::sort(th, th + 3);
    const auto lo = supervision::pseudo_gt(p, th[0]), mid = supervision::pseudo_gt(p, th[1]),
               hi = supervision::pseudo_gt(p, th[2]);
    bool nested = true;
    for (std::size_t i = 0; i < lo.size(); ++i) {
      if (hi.values[i] != kIgnoreLabel && mid.values[i] != hi.values[i]) nested = false;
      if (mid.values[i] != kIgnoreLabel && lo.values[i] != mid.values[i]) nested = false;
    }
    c.expect(nested, "pseudo-GT retained set not nested in threshold");
  }

  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t D = 2 + rng.below(8);
    const int K = 1 + static_cast<int>(rng.below(5));
    const auto anchors = random_anchors(D, K, rng);
    const auto z = oracle::random_tensor({D, 4, 5}, rng);
    const auto a = oracle::random_labels(5, 4, K + 1, rng, 0.2);
    const proto::ContrastConfig cfg{rng.uniform(0.05, 1.0), 32, 1};
    const double l = proto::proto_contrast_loss(z, anchors, a, cfg).value;
    c.expect(l >= 0.0, "InfoNCE negative: " + std::to_string(l));
    const auto Q = random_rotation(D, rng);
    proto::PrototypeSet<double> rotated;
    for (const auto& [k, p] : anchors) rotated.emplace(k, proto::ClassPrototype<double>{rotate(Q, p.vector), k, p.source});
    const double lr = proto::proto_contrast_loss(rotate(Q, z), rotated, a, cfg).value;
    c.expect(std::abs(l - lr) <= 1e-6, "InfoNCE not rotation invariant: " + std::to_string(l - lr));
  }

  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t C = 2 + rng.below(5);
    const auto pf = oracle::random_probs(C, 5, 4, rng), pb = oracle::random_probs(C, 5, 4, rng);
    const double th = rng.uniform(0.0, 0.9);
    const auto ab = supervision::pseudo_gt(pb, th), af = supervision::pseudo_gt(pf, th);
    c.expect(supervision::dual_loss(pf, ab, pb, af) == supervision::dual_loss(pb, af, pf, ab), "dual loss asymmetric");
  }

  // Gradient masking: pseudo-labels, prototype anchors and distillation
  // targets are constants of their losses.
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t C = 3;
    const auto lf = oracle::random_tensor({C, 5, 5}, rng, 2.0);
    const auto pf = supervision::softmax_probs(lf);
    const auto pb = oracle::random_probs(C, 5, 5, rng);
    const auto ab = supervision::pseudo_gt(pb, 0.5), af = supervision::pseudo_gt(pf, 0.5);
    Tensor<double> ignored(lf.shape());
    supervision::add_masked_ce_grad(pf, LabelMap(5, 5, kIgnoreLabel), 1.0, ignored);
    bool zero = true;
    for (double v : ignored.values()) zero = zero && v == 0.0;
    c.expect(zero, "gradient through ignored pseudo-GT pixels");
    // Moving the forward logits changes only the forward CE term: the
    // forward pseudo-labels feeding the backward term are held fixed.
    auto lf2 = lf;
    lf2[rng.below(lf.size())] += 1e-4;
    const double d_total = supervision::dual_loss(supervision::softmax_probs(lf2), ab, pb, af) -
                           supervision::dual_loss(pf, ab, pb, af);
    const double d_own = 0.5 * (supervision::masked_ce(supervision::softmax_probs(lf2), ab).value -
                                supervision::masked_ce(pf, ab).value);
    c.expect(std::abs(d_total - d_own) <= 1e-14, "dual loss depends on the detached pseudo-labels");

    auto z = oracle::random_tensor({4, 3, 3}, rng);
    Tensor<double> r({3, 3}, 1.0);
    const auto a = oracle::random_labels(3, 3, 3, rng, 0.0);
    const auto anchors = proto::intra_aggregate(z, r, a, proto::BranchId::Forward);
    const proto::ContrastConfig cfg{0.2, 32, 1};
    Tensor<double> g(z.shape());
    proto::proto_contrast_loss(z, anchors, a, cfg, &g);
    std::vector<double*> coords;
    std::vector<double> analytic;
    for (std::size_t i = 0; i < z.size(); ++i) coords.push_back(&z[i]), analytic.push_back(g[i]);
    const auto frozen =
        oracle::central_diff([&] { return proto::proto_contrast_loss(z, anchors, a, cfg).value; }, coords, 1e-6);
    c.expect(oracle::relative_error(analytic, frozen) < 1e-4, "prototype anchors receive gradient");

    const auto zf = oracle::random_tensor({3, 2, 2}, rng), zb = oracle::random_tensor({3, 2, 2}, rng);
    const auto zf0 = zf, zb0 = zb;
    const auto pair = nn::init_projection<double>(3, 0.3, trial);
    auto pg = pair.zeros_like();
    proto::distill_loss(zf, zb, pair, &pg);
    c.expect(zf == zf0 && zb == zb0, "distillation touched its feature targets");
  }
  report("property suite", c.ok() && seconds_since(t0) < 300, summary(c, seconds_since(t0)));
}

template <class Loss>
double fd_error(Loss&& loss, std::vector<double*> coords, const std::vector<double>& analytic, double h = 1e-6) {
  return oracle::relative_error(analytic, oracle::central_diff(loss, std::move(coords), h));
}

void gradient_oracle() {
  const auto t0 = Clock::now();
  Checks c;
  Rng rng(202);
  const int kConfigs = 25;
  double worst = 0;
  auto record = [&](double err, const std::string& what) {
    worst = std::max(worst, err);
    c.expect(err < 1e-4, what + " rel err " + std::to_string(err));
  };
  for (int trial = 0; trial < kConfigs; ++trial) {
    const int C = rng.uniform_int(2, 6), H = rng.uniform_int(2, 7), W = rng.uniform_int(2, 7);
    const auto sz = [](int v) { return static_cast<std::size_t>(v); };
    {
      auto lf = oracle::random_tensor({sz(C), sz(H), sz(W)}, rng, rng.uniform(0.5, 3.0));
      auto lb = oracle::random_tensor({sz(C), sz(H), sz(W)}, rng, rng.uniform(0.5, 3.0));
      const auto t = oracle::random_clicks(W, H, C, rng.uniform_int(1, std::min(C, W * H)), rng);
      Tensor<double> gf(lf.shape()), gb(lb.shape());
      supervision::add_point_ce_grad(supervision::softmax_probs(lf), t, 0.5, gf);
      supervision::add_point_ce_grad(supervision::softmax_probs(lb), t, 0.5, gb);
      std::vector<double*> coords;
      std::vector<double> analytic;
      for (std::size_t i = 0; i < lf.size(); ++i) {
        coords.push_back(&lf[i]), analytic.push_back(gf[i]);
        coords.push_back(&lb[i]), analytic.push_back(gb[i]);
      }
      record(fd_error([&] {
               return supervision::weak_loss(supervision::softmax_probs(lf), supervision::softmax_probs(lb), t).value;
             },
                      coords, analytic),
             "L_weak");
    }
    {
      auto lf = oracle::random_tensor({sz(C), sz(H), sz(W)}, rng, 2.0);
      auto lb = oracle::random_tensor({sz(C), sz(H), sz(W)}, rng, 2.0);
      const double th = rng.uniform(0.0, 0.6);
      const auto ab = supervision::pseudo_gt(supervision::softmax_probs(lb), th);
      const auto af = supervision::pseudo_gt(supervision::softmax_probs(lf), th);
      Tensor<double> gf(lf.shape()), gb(lb.shape());
      supervision::add_masked_ce_grad(supervision::softmax_probs(lf), ab, 0.5, gf);
      supervision::add_masked_ce_grad(supervision::softmax_probs(lb), af, 0.5, gb);
      std::vector<double*> coords;
      std::vector<double> analytic;
      for (std::size_t i = 0; i < lf.size(); ++i) {
        coords.push_back(&lf[i]), analytic.push_back(gf[i]);
        coords.push_back(&lb[i]), analytic.push_back(gb[i]);
      }
      record(fd_error([&] {
               return supervision::dual_loss(supervision::softmax_probs(lf), ab, supervision::softmax_probs(lb), af);
             },
                      coords, analytic),
             "L_dual");
    }
    {
      const std::size_t D = 2 + rng.below(7);
      const int K = rng.uniform_int(1, 5);
      const auto anchors = random_anchors(D, K, rng);
      auto z = oracle::random_tensor({D, sz(H), sz(W)}, rng);
      const auto a = oracle::random_labels(W, H, K + 1, rng, 0.2);
      const proto::ContrastConfig cfg{rng.uniform(0.1, 1.0), 32, 1};
      const double scale = rng.uniform(0.1, 2.0);
      Tensor<double> g(z.shape());
      proto::proto_contrast_loss(z, anchors, a, cfg, &g, scale);
      std::vector<double*> coords;
      std::vector<double> analytic;
      for (std::size_t i = 0; i < z.size(); ++i) coords.push_back(&z[i]), analytic.push_back(g[i]);
      record(fd_error([&] { return scale * proto::proto_contrast_loss(z, anchors, a, cfg).value; }, coords, analytic),
             "L_proto");
    }
    {
      const std::size_t D = 2 + rng.below(5);
      const auto zf = oracle::random_tensor({D, sz(H), sz(W)}, rng), zb = oracle::random_tensor({D, sz(H), sz(W)}, rng);
      auto pair = nn::init_projection<double>(D, rng.uniform(0.1, 1.0), static_cast<std::uint64_t>(trial));
      auto grads = pair.zeros_like();
      proto::distill_loss(zf, zb, pair, &grads);
      std::vector<Tensor<double>*> pt, gt;
      pair.visit([&](std::string_view, Tensor<double>& t) { pt.push_back(&t); });
      grads.visit([&](std::string_view, Tensor<double>& t) { gt.push_back(&t); });
      std::vector<double*> coords;
      std::vector<double> analytic;
      for (std::size_t k = 0; k < pt.size(); ++k)
        for (std::size_t i = 0; i < pt[k]->size(); ++i) coords.push_back(&(*pt[k])[i]), analytic.push_back((*gt[k])[i]);
      record(fd_error([&] { return proto::distill_loss(zf, zb, pair); }, coords, analytic, 1e-7), "L_distill");
    }
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "%d configurations per loss, worst rel err %.2e, ", kConfigs, worst);
  report("gradient oracle", c.ok() && seconds_since(t0) < 300, buf + summary(c, seconds_since(t0)));
}

void oracle_equivalence() {
  const auto t0 = Clock::now();
  Checks c;
  Rng rng(303);
  for (int trial = 0; trial < 100; ++trial) {
    const int W = rng.uniform_int(1, 10), H = rng.uniform_int(1, 10), B = rng.uniform_int(1, 7);
    const auto s = oracle::random_stream(W, H, rng.below(300), 10, 5000, rng);
    const auto g = events::voxelize(s, {B, {W, H}, 10, 5000});
    const auto o = oracle::voxelize(s, B, 10, 5000);
    double err = 0;
    for (std::size_t i = 0; i < o.size(); ++i) err = std::max(err, std::abs(g.data[i] - o[i]));
    c.expect(err <= 1e-12, "voxelize differs by " + std::to_string(err));
  }
  for (int trial = 0; trial < 100; ++trial) {
    const int C = rng.uniform_int(1, 8), W = rng.uniform_int(1, 12), H = rng.uniform_int(1, 12);
    const auto gt = oracle::random_labels(W, H, C, rng, 0.2), pred = oracle::random_labels(W, H, C, rng, 0.05);
    const auto cm = eval::confusion(pred, gt, C);
    const auto t = oracle::tally(pred, gt);
    bool same = cm.total() == [&] {
      std::uint64_t n = 0;
      for (const auto& [k, v] : t) n += v;
      return n;
    }();
    for (const auto& [k, v] : t) same = same && cm.at(k.first, k.second) == v;
    c.expect(same, "confusion differs from tally");
    if (cm.total() > 0) c.expect(eval::miou(cm).miou == oracle::miou(t, C), "mIoU differs from tally mIoU");
  }
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = oracle::random_probs(1 + rng.below(7), 1 + rng.below(8), 1 + rng.below(8), rng);
    const double th = rng.uniform(0.0, 1.0);
    c.expect(supervision::pseudo_gt(p, th) == oracle::pseudo_gt(p, th), "pseudo-GT differs from per-pixel rule");
  }
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t D = 1 + rng.below(8);
    const int H = rng.uniform_int(1, 6), W = rng.uniform_int(1, 6);
    const auto z = oracle::random_tensor({D, static_cast<std::size_t>(H), static_cast<std::size_t>(W)}, rng);
    Tensor<double> r({static_cast<std::size_t>(H), static_cast<std::size_t>(W)});
    for (auto& v : r.values()) v = rng.uniform(0.05, 1.0);
    const auto a = oracle::random_labels(W, H, 4, rng, 0.3);
    const auto got = proto::intra_aggregate(z, r, a, proto::BranchId::Forward);
    const auto want = oracle::intra_aggregate(z, r, a);
    bool same = got.size() == want.size();
    for (const auto& [k, v] : want) {
      if (!got.contains(k)) {
        same = false;
        continue;
      }
      for (std::size_t d = 0; d < v.size(); ++d) same = same && std::abs(got.at(k).vector[d] - v[d]) <= 1e-8;
    }
    c.expect(same, "intra aggregation differs from dense oracle");
  }
  report("oracle equivalence", c.ok(), "100 instances per oracle, " + summary(c, seconds_since(t0)));
}

// The default synthetic benchmark: 64x64, 6 classes, 250 scenes split
// 200/50 by scene seed, 2000 steps.
train::TrainConfig benchmark_config(train::Mode mode) {
  train::TrainConfig c;
  c.mode = mode;
  c.steps = 2000;
  c.warmup_steps = 500;
  return c;
}

std::string pts(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

void trends(const fs::path& out_dir) {
  const auto t0 = Clock::now();
  std::vector<dataset::Sample> samples;
  for (const auto& s : synth::make_samples(synth::ToySceneConfig{}, synth::SimConfig{}, 250, 0))
    samples.push_back(dataset::to_sample(s));

  using train::Mode;
  eval::AblationGrid grid;
  grid.seeds = {0, 1, 2, 3, 4};
  auto cell = [&](std::string name, Mode m, double th = 0.5, double swap = 0.0, double drop = 0.0) {
    auto cfg = benchmark_config(m);
    cfg.threshold = th;
    grid.cells.push_back({std::move(name), cfg, {swap, drop, 2}});
  };
  cell("baseline", Mode::Baseline);
  cell("dual", Mode::Dual);
  cell("full", Mode::Full);
  cell("self", Mode::Self);
  cell("ema", Mode::Ema);
  cell("full_th0.3", Mode::Full, 0.3);
  cell("full_th0.7", Mode::Full, 0.7);
  cell("full_swap0.1", Mode::Full, 0.5, 0.1);
  cell("full_swap0.2", Mode::Full, 0.5, 0.2);
  cell("full_drop0.1", Mode::Full, 0.5, 0.0, 0.1);

  eval::AblationOptions opts;
  opts.out_dir = out_dir;
  opts.on_result = [](const eval::CellResult& c, const eval::SeedResult& s) {
    if (s.report)
      std::fprintf(stderr, "  %-14s seed %llu  mIoU %.4f  (%.0f s)\n", c.cell.name.c_str(),
                   static_cast<unsigned long long>(s.seed), s.report->miou, s.seconds);
    else
      std::fprintf(stderr, "  %-14s seed %llu  failed: %s\n", c.cell.name.c_str(),
                   static_cast<unsigned long long>(s.seed), s.error.c_str());
  };
  const auto results = eval::run_ablation(samples, grid, opts);
  std::map<std::string, double> m, secs;
  bool complete = true;
  for (const auto& r : results) {
    if (!r.median_miou || r.seeds.size() != grid.seeds.size()) complete = false;
    m[r.cell.name] = r.median_miou.value_or(std::numeric_limits<double>::quiet_NaN());
    for (const auto& s : r.seeds) {
      if (!s.report) complete = false;
      secs[r.cell.name] += s.seconds;
    }
  }
  std::fputs(eval::format_table(results).c_str(), stderr);

  const double ordering_secs = secs["baseline"] + secs["dual"] + secs["full"];
  report("mode ordering trend",
         complete && m["full"] >= m["dual"] && m["dual"] >= m["baseline"] && m["full"] - m["baseline"] >= 0.02 &&
             ordering_secs <= 45 * 60,
         "median mIoU baseline " + pts(m["baseline"]) + ", dual " + pts(m["dual"]) + ", full " + pts(m["full"]) +
             " (full - baseline " + pts(m["full"] - m["baseline"]) + " points), " +
             std::to_string(static_cast<int>(ordering_secs / 60)) + " min");
  report("dual over baseline trend", complete && m["dual"] - m["baseline"] >= 0.01,
         "dual - baseline " + pts(m["dual"] - m["baseline"]) + " points; self " + pts(m["self"]) + ", ema " +
             pts(m["ema"]) + " (informational)");
  const double lo = std::min({m["full_th0.3"], m["full"], m["full_th0.7"]});
  const double hi = std::max({m["full_th0.3"], m["full"], m["full_th0.7"]});
  report("threshold robustness", complete && hi - lo <= 0.03,
         "th 0.3/0.5/0.7: " + pts(m["full_th0.3"]) + " / " + pts(m["full"]) + " / " + pts(m["full_th0.7"]) +
             ", spread " + pts(hi - lo) + " points");
  const bool monotone = m["full_swap0.1"] <= m["full"] + 0.005 && m["full_swap0.2"] <= m["full_swap0.1"] + 0.005;
  const double drop_loss = m["full"] - m["full_drop0.1"];
  report("label-corruption robustness", complete && monotone && drop_loss <= 0.05,
         "swap p 0/0.1/0.2: " + pts(m["full"]) + " / " + pts(m["full_swap0.1"]) + " / " + pts(m["full_swap0.2"]) +
             "; 10% drop costs " + pts(drop_loss) + " points");
  std::fprintf(stderr, "trend runs took %.0f min; CSV and plots in %s\n", seconds_since(t0) / 60,
               out_dir.string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  fs::path out_dir = "acceptance_out";
  bool skip_trends = false;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--out") && i + 1 < argc) out_dir = argv[++i];
    else if (!std::strcmp(argv[i], "--skip-trends")) skip_trends = true;
    else {
      std::fprintf(stderr, "usage: %s [--out DIR] [--skip-trends]\n", argv[0]);
      return 2;
    }
  }
  try {
    property_suite();
    gradient_oracle();
    oracle_equivalence();
    if (!skip_trends) trends(out_dir);
  } catch (const std::exception& e) {
    std::printf("FAIL acceptance run aborted: %s\n", e.what());
    return 1;
  }
  return g_failed ? 1 : 0;
}
