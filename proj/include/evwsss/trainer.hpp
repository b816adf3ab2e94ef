#pragma once

// Asymmetric dual-student training: voxel sequence preparation for both
// branches, per-sample loss evaluation with gradients, batched RAdam updates,
// the self-training and EMA-teacher comparison modes, and the fit loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "evwsss/errors.hpp"
#include "evwsss/event_core.hpp"
#include "evwsss/labels.hpp"
#include "evwsss/network.hpp"
#include "evwsss/prototypes.hpp"
#include "evwsss/radam.hpp"
#include "evwsss/rng.hpp"
#include "evwsss/supervision.hpp"
#include "evwsss/tensor.hpp"

namespace evwsss::train {

using Scalar = float;
using events::Timestamp;

enum class Mode { Baseline, Self, Ema, Dual, DualProto, DualProtoDistill, Full };

inline std::string to_string(Mode m) {
  switch (m) {
    case Mode::Baseline: return "baseline";
    case Mode::Self: return "self";
    case Mode::Ema: return "ema";
    case Mode::Dual: return "dual";
    case Mode::DualProto: return "dual+proto";
    case Mode::DualProtoDistill: return "dual+proto+distill";
    case Mode::Full: return "full";
  }
  return "?";
}

inline std::optional<Mode> parse_mode(const std::string& s) {
  for (Mode m : {Mode::Baseline, Mode::Self, Mode::Ema, Mode::Dual, Mode::DualProto, Mode::DualProtoDistill, Mode::Full})
    if (to_string(m) == s) return m;
  return std::nullopt;
}

inline bool uses_backward_branch(Mode m) {
  return m == Mode::Dual || m == Mode::DualProto || m == Mode::DualProtoDistill || m == Mode::Full;
}
inline bool uses_prototypes(Mode m) { return m == Mode::DualProto || m == Mode::DualProtoDistill || m == Mode::Full; }
inline bool uses_distillation(Mode m) { return m == Mode::DualProtoDistill || m == Mode::Full; }
inline bool uses_dual_anchors(Mode m) { return m == Mode::Full; }

struct TrainConfig {
  Mode mode = Mode::Full;
  double lambda_weak = 1.0;
  double lambda_dual = 1.0;
  double lambda_proto = 1.0;
  double lambda_distill = 1.0;
  double threshold = 0.5;
  double temperature = 0.1;
  int backward_ratio = 5;
  int warmup_steps = 0;
  double learning_rate = 1e-3;
  int steps = 2000;
  int batch_size = 4;
  std::uint64_t seed = 0;
  double ema_momentum = 0.99;
  Timestamp forward_window = 10'000;  // tau, microseconds
  std::size_t queue_capacity = 32;
  double projection_noise = 0.01;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
  nn::NetworkConfig network;

  void validate() const {
    for (double l : {lambda_weak, lambda_dual, lambda_proto, lambda_distill})
      if (!(l >= 0.0 && std::isfinite(l))) throw ArgumentError("train config: loss weights must be finite and >= 0");
    if (!(threshold > 0.0 && threshold < 1.0)) throw ArgumentError("train config: threshold must be in (0, 1)");
    if (!(temperature > 0.0)) throw ArgumentError("train config: temperature must be positive");
    if (backward_ratio < 1) throw ArgumentError("train config: backward ratio must be >= 1");
    if (warmup_steps < 0 || steps < 0) throw ArgumentError("train config: step counts must be >= 0");
    if (batch_size < 1) throw ArgumentError("train config: batch size must be >= 1");
    if (!(learning_rate > 0.0)) throw ArgumentError("train config: learning rate must be positive");
    if (ema_momentum < 0.0 || ema_momentum > 1.0) throw ArgumentError("train config: ema momentum must be in [0, 1]");
    if (forward_window <= 0) throw ArgumentError("train config: forward window must be positive");
    if (queue_capacity < 1) throw ArgumentError("train config: queue capacity must be >= 1");
    if (grad_clip < 0) throw ArgumentError("train config: grad_clip must be >= 0");
    network.validate();
  }

  proto::ContrastConfig contrast() const { return {temperature, queue_capacity, 1}; }
};

// Voxel sequences for both branches plus the supervision of one frame.
struct PreparedSample {
  std::string id;
  std::vector<Tensor<Scalar>> forward_voxels;
  std::vector<Tensor<Scalar>> backward_voxels;
  PointLabelSet labels;
  LabelMap gt;  // empty when unavailable
  std::size_t forward_events = 0;
  std::size_t backward_events = 0;
};

// Splits [t0, t1] into `steps` consecutive sub-windows, voxelizes each over
// its own span and rescales to unit RMS. Events must already lie in [t0, t1];
// the last sub-window is closed on the right.
inline std::vector<Tensor<Scalar>> voxel_sequence(const events::EventStream& stream, Timestamp t0, Timestamp t1,
                                                  int steps, int num_bins) {
  if (steps < 1) throw ArgumentError("voxel_sequence: steps must be >= 1");
  if (t1 < t0) throw ArgumentError("voxel_sequence: need t0 <= t1");
  const auto ev = stream.events();
  std::vector<Tensor<Scalar>> out;
  auto lower = [&](Timestamp t) {
    return std::lower_bound(ev.begin(), ev.end(), t, [](const events::Event& e, Timestamp v) { return e.t < v; });
  };
  for (int k = 0; k < steps; ++k) {
    const Timestamp a = t0 + (t1 - t0) * k / steps;
    const Timestamp b = t0 + (t1 - t0) * (k + 1) / steps;
    auto lo = lower(a);
    auto hi = k + 1 == steps ? ev.end() : lower(b);
    events::EventStream part(stream.sensor(), std::vector<events::Event>(lo, hi));
    events::VoxelizationConfig vc{num_bins, stream.sensor(), a, std::max(b, a + 1)};
    out.push_back(nn::normalize_voxels<Scalar>(events::voxelize(part, vc).data));
  }
  return out;
}

// Forward input: events in [T - tau, T). Backward input: the ratio * N_f
// events from T on, time-reversed and voxelized over their own span.
inline PreparedSample prepare_sample(const events::EventStream& stream, Timestamp T, const PointLabelSet& labels,
                                     const TrainConfig& cfg, std::string id = {}, LabelMap gt = {}) {
  const auto& net = cfg.network;
  if (stream.width() != net.width || stream.height() != net.height)
    throw ArgumentError("prepare_sample: stream size does not match the network input");
  PreparedSample s;
  s.id = std::move(id);
  s.labels = labels;
  s.gt = std::move(gt);
  const Timestamp t0 = std::max<Timestamp>(0, T - cfg.forward_window);
  const auto fwd = T > t0 ? events::slice_window(stream, t0, T) : events::EventStream(stream.sensor(), {});
  s.forward_events = fwd.size();
  s.forward_voxels = voxel_sequence(fwd, t0, T, net.recurrent_steps, net.num_bins);
  const auto bwd = events::reverse(
      events::select_backward(stream, T, fwd.size(), static_cast<std::size_t>(cfg.backward_ratio)));
  s.backward_events = bwd.size();
  s.backward_voxels = voxel_sequence(bwd, bwd.t_min(), bwd.t_max(), net.recurrent_steps, net.num_bins);
  return s;
}

template <class T>
struct Model {
  nn::NetworkConfig network;
  nn::BranchParams<T> forward;
  nn::BranchParams<T> backward;
  nn::ProjectionPair<T> projection;

  friend bool operator==(const Model&, const Model&) = default;
};

inline Model<Scalar> init_model(const TrainConfig& cfg) {
  Model<Scalar> m;
  m.network = cfg.network;
  m.forward = nn::init_branch<Scalar>(cfg.network, Rng::mix(cfg.seed));
  m.backward = nn::init_branch<Scalar>(cfg.network, Rng::mix(cfg.seed + 1));
  m.projection = nn::init_projection<Scalar>(static_cast<std::size_t>(cfg.network.feature_dim), cfg.projection_noise,
                                             Rng::mix(cfg.seed + 2));
  return m;
}

// theta_T <- m * theta_T + (1 - m) * theta.
template <class T>
void ema_update(nn::BranchParams<T>& teacher, const nn::BranchParams<T>& student, double momentum) {
  std::vector<const Tensor<T>*> src;
  student.visit([&](std::string_view, const Tensor<T>& t) { src.push_back(&t); });
  std::size_t i = 0;
  const T m = static_cast<T>(momentum), rest = static_cast<T>(1.0 - momentum);
  teacher.visit([&](std::string_view, Tensor<T>& t) {
    const Tensor<T>& s = *src[i++];
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = m * t[j] + rest * s[j];
  });
}

// Per-loss values. Inactive terms are 0 and flagged.
struct LossBreakdown {
  double l_weak = 0, l_dual = 0, l_proto_f = 0, l_proto_b = 0, l_distill = 0, total = 0;
  bool dual_active = false, proto_active = false, distill_active = false;
};

// Per-branch terms of one sample, before weighting.
struct SampleTerms {
  double weak_f = 0, weak_b = 0;
  double dual_f = 0, dual_b = 0;  // CE(P_f, A_b) and CE(P_b, A_f); self/ema put their term in dual_f
  double proto_f = 0, proto_b = 0;
  double distill = 0;
};

struct Gradients {
  nn::BranchParams<Scalar> forward, backward;
  nn::ProjectionPair<Scalar> projection;
};

inline LabelMap argmax_map(const Tensor<Scalar>& logits) {
  const std::size_t C = logits.dim(0), H = logits.dim(1), W = logits.dim(2);
  LabelMap out(static_cast<int>(W), static_cast<int>(H));
  for (std::size_t i = 0; i < H * W; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (logits[c * H * W + i] > logits[best * H * W + i]) best = c;
    out.values[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

// Inference uses the forward branch only.
inline LabelMap predict(const Model<Scalar>& model, const std::vector<Tensor<Scalar>>& forward_voxels) {
  return argmax_map(nn::forward(model.network, model.forward, forward_voxels).logits);
}

struct LogRecord {
  long step = 0;
  LossBreakdown losses;
  double lr = 0;
};

class Trainer {
 public:
  explicit Trainer(TrainConfig cfg)
      : cfg_(std::move(cfg)),
        model_((cfg_.validate(), init_model(cfg_))),
        optimizer_(optim::RAdamConfig{cfg_.learning_rate, 0.9, 0.999, 1e-8}),
        bank_f_(static_cast<std::size_t>(cfg_.network.feature_dim), cfg_.queue_capacity),
        bank_b_(static_cast<std::size_t>(cfg_.network.feature_dim), cfg_.queue_capacity) {
    if (cfg_.mode == Mode::Ema) teacher_ = model_.forward;
  }

  const TrainConfig& config() const noexcept { return cfg_; }
  const Model<Scalar>& model() const noexcept { return model_; }
  Model<Scalar>& model() noexcept { return model_; }
  long step_count() const noexcept { return step_; }
  const proto::PrototypeBank<Scalar>& bank_forward() const noexcept { return bank_f_; }
  const proto::PrototypeBank<Scalar>& bank_backward() const noexcept { return bank_b_; }
  proto::PrototypeBank<Scalar>& bank_forward() noexcept { return bank_f_; }
  proto::PrototypeBank<Scalar>& bank_backward() noexcept { return bank_b_; }
  const std::optional<nn::BranchParams<Scalar>>& teacher() const noexcept { return teacher_; }
  std::optional<nn::BranchParams<Scalar>>& teacher() noexcept { return teacher_; }
  optim::RAdam<Scalar>& optimizer() noexcept { return optimizer_; }
  const optim::RAdam<Scalar>& optimizer() const noexcept { return optimizer_; }
  void set_step_count(long s) noexcept { step_ = s; }
  // Extends or shortens the step budget of a restored run.
  void set_steps(int steps) {
    if (steps < 0) throw ArgumentError("steps must be >= 0");
    cfg_.steps = steps;
  }

  bool pseudo_losses_active() const noexcept { return step_ >= cfg_.warmup_steps; }

  // Parameters the optimizer owns in this mode, in canonical order.
  std::vector<Tensor<Scalar>*> trainable() {
    std::vector<Tensor<Scalar>*> out;
    model_.forward.visit([&](std::string_view, Tensor<Scalar>& t) { out.push_back(&t); });
    if (uses_backward_branch(cfg_.mode))
      model_.backward.visit([&](std::string_view, Tensor<Scalar>& t) { out.push_back(&t); });
    if (uses_distillation(cfg_.mode))
      model_.projection.visit([&](std::string_view, Tensor<Scalar>& t) { out.push_back(&t); });
    return out;
  }

  std::vector<std::string> trainable_names() const {
    std::vector<std::string> out;
    model_.forward.visit([&](std::string_view n, const Tensor<Scalar>&) { out.push_back("forward." + std::string(n)); });
    if (uses_backward_branch(cfg_.mode))
      model_.backward.visit(
          [&](std::string_view n, const Tensor<Scalar>&) { out.push_back("backward." + std::string(n)); });
    if (uses_distillation(cfg_.mode))
      model_.projection.visit([&](std::string_view n, const Tensor<Scalar>&) { out.push_back(std::string(n)); });
    return out;
  }

  // Evaluates every loss of one sample. When grads is given, adds scale times
  // the weighted-total gradient into it. Updates the prototype banks.
  SampleTerms run_sample(const PreparedSample& s, Gradients* grads, Scalar scale) {
    return run_sample(model_, s, bank_f_, bank_b_, grads, scale);
  }

  // Same as run_sample but against explicit model and banks.
  SampleTerms run_sample(const Model<Scalar>& model, const PreparedSample& s, proto::PrototypeBank<Scalar>& bank_f,
                         proto::PrototypeBank<Scalar>& bank_b, Gradients* grads, Scalar scale) const {
    namespace sv = supervision;
    const Mode mode = cfg_.mode;
    const bool two = uses_backward_branch(mode);
    const bool active = pseudo_losses_active();
    const auto& net = model.network;
    SampleTerms terms;

    const auto pass_f = nn::forward(net, model.forward, s.forward_voxels);
    const auto probs_f = sv::softmax_probs(pass_f.logits);
    Tensor<Scalar> gl_f(pass_f.logits.shape()), gz_f(pass_f.features().shape());
    std::optional<nn::BranchPass<Scalar>> pass_b;
    Tensor<Scalar> probs_b, gl_b, gz_b;
    if (two) {
      pass_b = nn::forward(net, model.backward, s.backward_voxels);
      probs_b = sv::softmax_probs(pass_b->logits);
      gl_b = Tensor<Scalar>(pass_b->logits.shape());
      gz_b = Tensor<Scalar>(pass_b->features().shape());
    }
    const auto lw = static_cast<Scalar>(cfg_.lambda_weak) * scale;
    const auto ld = static_cast<Scalar>(cfg_.lambda_dual) * scale;
    const auto lp = static_cast<Scalar>(cfg_.lambda_proto) * scale;
    const auto lt = static_cast<Scalar>(cfg_.lambda_distill) * scale;

    terms.weak_f = sv::point_ce(probs_f, s.labels).value;
    if (two) {
      terms.weak_b = sv::point_ce(probs_b, s.labels).value;
      if (grads) {
        sv::add_point_ce_grad(probs_f, s.labels, Scalar{0.5} * lw, gl_f);
        sv::add_point_ce_grad(probs_b, s.labels, Scalar{0.5} * lw, gl_b);
      }
    } else if (grads) {
      sv::add_point_ce_grad(probs_f, s.labels, lw, gl_f);
    }

    if (active && mode == Mode::Self) {
      const auto a = sv::pseudo_gt(probs_f, cfg_.threshold);
      terms.dual_f = sv::masked_ce(probs_f, a).value;
      if (grads) sv::add_masked_ce_grad(probs_f, a, ld, gl_f);
    } else if (active && mode == Mode::Ema) {
      if (!teacher_) throw ArgumentError("trainer: ema mode without a teacher");
      const auto t_logits = nn::forward(net, *teacher_, s.forward_voxels).logits;
      const auto a = sv::pseudo_gt(sv::softmax_probs(t_logits), cfg_.threshold);
      terms.dual_f = sv::masked_ce(probs_f, a).value;
      if (grads) sv::add_masked_ce_grad(probs_f, a, ld, gl_f);
    }

    if (active && two) {
      const auto a_f = sv::pseudo_gt(probs_f, cfg_.threshold);
      const auto a_b = sv::pseudo_gt(probs_b, cfg_.threshold);
      terms.dual_f = sv::masked_ce(probs_f, a_b).value;
      terms.dual_b = sv::masked_ce(probs_b, a_f).value;
      if (grads) {
        sv::add_masked_ce_grad(probs_f, a_b, Scalar{0.5} * ld, gl_f);
        sv::add_masked_ce_grad(probs_b, a_f, Scalar{0.5} * ld, gl_b);
      }
      if (uses_prototypes(mode)) {
        const int st = net.stride;
        const auto ds_f = proto::downsample_labels(a_f, st);
        const auto ds_b = proto::downsample_labels(a_b, st);
        const auto& z_f = pass_f.features();
        const auto& z_b = pass_b->features();
        bank_f.push(proto::intra_aggregate(z_f, proto::downsample_map(sv::reliability(probs_f), st), ds_f,
                                           proto::BranchId::Forward));
        bank_b.push(proto::intra_aggregate(z_b, proto::downsample_map(sv::reliability(probs_b), st), ds_b,
                                           proto::BranchId::Backward));
        auto inter_f = proto::inter_aggregate_all(bank_f);
        auto inter_b = proto::inter_aggregate_all(bank_b);
        if (uses_dual_anchors(mode)) {
          bank_f.set_anchors(combined(model.projection, inter_f, inter_b, nn::Direction::BackwardToForward));
          bank_b.set_anchors(combined(model.projection, inter_b, inter_f, nn::Direction::ForwardToBackward));
        } else {
          bank_f.set_anchors(std::move(inter_f));
          bank_b.set_anchors(std::move(inter_b));
        }
        const auto cc = cfg_.contrast();
        terms.proto_f =
            proto::proto_contrast_loss(z_f, bank_f.anchors(), ds_b, cc, grads ? &gz_f : nullptr, lp).value;
        terms.proto_b =
            proto::proto_contrast_loss(z_b, bank_b.anchors(), ds_f, cc, grads ? &gz_b : nullptr, lp).value;
      }
      if (uses_distillation(mode))
        terms.distill = proto::distill_loss(pass_f.features(), pass_b->features(), model.projection,
                                            grads ? &grads->projection : nullptr, lt);
    }

    if (grads) {
      nn::backward(model.forward, pass_f, gl_f, &gz_f, grads->forward);
      if (two) nn::backward(model.backward, *pass_b, gl_b, &gz_b, grads->backward);
    }
    return terms;
  }

  LossBreakdown combine(const std::vector<SampleTerms>& per_sample) const {
    LossBreakdown b;
    const bool two = uses_backward_branch(cfg_.mode);
    const bool active = pseudo_losses_active();
    b.dual_active = active && cfg_.mode != Mode::Baseline;
    b.proto_active = active && uses_prototypes(cfg_.mode);
    b.distill_active = active && uses_distillation(cfg_.mode);
    const double n = static_cast<double>(per_sample.size());
    for (const auto& t : per_sample) {
      b.l_weak += (two ? 0.5 * (t.weak_f + t.weak_b) : t.weak_f) / n;
      b.l_dual += (two ? 0.5 * (t.dual_f + t.dual_b) : t.dual_f) / n;
      b.l_proto_f += t.proto_f / n;
      b.l_proto_b += t.proto_b / n;
      b.l_distill += t.distill / n;
    }
    b.total = cfg_.lambda_weak * b.l_weak + cfg_.lambda_dual * b.l_dual +
              cfg_.lambda_proto * (b.l_proto_f + b.l_proto_b) + cfg_.lambda_distill * b.l_distill;
    return b;
  }

  // One optimizer update over a batch; gradients are averaged over samples.
  LossBreakdown train_step(const std::vector<const PreparedSample*>& batch) {
    if (batch.empty()) throw ArgumentError("train_step: empty batch");
    Gradients g{model_.forward.zeros_like(), model_.backward.zeros_like(), model_.projection.zeros_like()};
    std::vector<SampleTerms> terms;
    const Scalar scale = Scalar{1} / static_cast<Scalar>(batch.size());
    try {
      for (const auto* s : batch) {
        if (s->labels.empty()) throw ArgumentError("train_step: sample '" + s->id + "' has no point labels");
        terms.push_back(run_sample(*s, &g, scale));
      }
    } catch (const NumericError& e) {
      // Non-finite logits poison every term; l_weak is the first one evaluated.
      throw NumericError("step " + std::to_string(step_) + ": loss l_weak is not finite (" + e.what() + ")");
    }
    const LossBreakdown losses = combine(terms);
    check_finite(losses);
    auto params = trainable();
    std::vector<const Tensor<Scalar>*> grad_list;
    g.forward.visit([&](std::string_view, const Tensor<Scalar>& t) { grad_list.push_back(&t); });
    if (uses_backward_branch(cfg_.mode))
      g.backward.visit([&](std::string_view, const Tensor<Scalar>& t) { grad_list.push_back(&t); });
    if (uses_distillation(cfg_.mode))
      g.projection.visit([&](std::string_view, const Tensor<Scalar>& t) { grad_list.push_back(&t); });
    for (const auto* t : grad_list)
      if (!t->all_finite()) throw NumericError("step " + std::to_string(step_) + ": non-finite gradient");
    if (cfg_.grad_clip > 0) clip(grad_list, g);
    optimizer_.step(params, grad_list);
    if (teacher_) ema_update(*teacher_, model_.forward, cfg_.ema_momentum);
    ++step_;
    return losses;
  }

  // Loss values of a batch at the current parameters, without any update.
  // Banks are copied, so the trainer state is untouched.
  LossBreakdown evaluate_losses(const std::vector<const PreparedSample*>& batch) const {
    auto bf = bank_f_;
    auto bb = bank_b_;
    std::vector<SampleTerms> terms;
    for (const auto* s : batch) terms.push_back(run_sample(model_, *s, bf, bb, nullptr, Scalar{1}));
    return combine(terms);
  }

 private:
  static proto::PrototypeSet<Scalar> combined(const nn::ProjectionPair<Scalar>& pair,
                                              const proto::PrototypeSet<Scalar>& own,
                                              const proto::PrototypeSet<Scalar>& other, nn::Direction dir) {
    proto::PrototypeSet<Scalar> out;
    for (const auto& [k, p] : own) {
      auto it = other.find(k);
      out.emplace(k, it == other.end() ? p : proto::dual_combine(p, proto::deliver(pair, it->second, dir)));
    }
    return out;
  }

  void check_finite(const LossBreakdown& b) const {
    const std::pair<const char*, double> named[] = {{"l_weak", b.l_weak},       {"l_dual", b.l_dual},
                                                    {"l_proto_f", b.l_proto_f}, {"l_proto_b", b.l_proto_b},
                                                    {"l_distill", b.l_distill}, {"total", b.total}};
    for (const auto& [name, v] : named)
      if (!std::isfinite(v)) throw NumericError("step " + std::to_string(step_) + ": loss " + name + " is not finite");
  }

  void clip(const std::vector<const Tensor<Scalar>*>& grads, Gradients& g) const {
    double sq = 0;
    for (const auto* t : grads)
      for (Scalar v : t->values()) sq += static_cast<double>(v) * v;
    const double n = std::sqrt(sq);
    if (n <= cfg_.grad_clip) return;
    const auto f = static_cast<Scalar>(cfg_.grad_clip / n);
    g.forward.visit([&](std::string_view, Tensor<Scalar>& t) { t *= f; });
    g.backward.visit([&](std::string_view, Tensor<Scalar>& t) { t *= f; });
    g.projection.visit([&](std::string_view, Tensor<Scalar>& t) { t *= f; });
  }

  TrainConfig cfg_;
  Model<Scalar> model_;
  optim::RAdam<Scalar> optimizer_;
  proto::PrototypeBank<Scalar> bank_f_, bank_b_;
  std::optional<nn::BranchParams<Scalar>> teacher_;
  long step_ = 0;
};

// Sample order: each epoch is a fresh permutation seeded by (seed, epoch), so
// the sample at any global position is a pure function of the position.
class SampleOrder {
 public:
  SampleOrder(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {
    if (n == 0) throw ArgumentError("fit: empty dataset");
  }

  std::size_t at(std::uint64_t global) {
    const std::uint64_t epoch = global / n_;
    if (epoch != cached_epoch_ || perm_.empty()) {
      perm_.resize(n_);
      std::iota(perm_.begin(), perm_.end(), std::size_t{0});
      Rng rng(Rng::mix(seed_ ^ Rng::mix(epoch + 0x51ed)));
      for (std::size_t i = n_; i > 1; --i) std::swap(perm_[i - 1], perm_[rng.below(i)]);
      cached_epoch_ = epoch;
    }
    return perm_[global % n_];
  }

 private:
  std::size_t n_;
  std::uint64_t seed_;
  std::uint64_t cached_epoch_ = 0;
  std::vector<std::size_t> perm_;
};

inline std::string log_line(const LogRecord& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "{\"step\":%ld,\"l_weak\":%.17g,\"l_dual\":%.17g,\"l_proto_f\":%.17g,\"l_proto_b\":%.17g,"
                "\"l_distill\":%.17g,\"total\":%.17g,\"lr\":%.17g}",
                r.step, r.losses.l_weak, r.losses.l_dual, r.losses.l_proto_f, r.losses.l_proto_b, r.losses.l_distill,
                r.losses.total, r.lr);
  return buf;
}

struct FitOptions {
  std::filesystem::path log_path;         // NDJSON, appended; empty disables
  std::filesystem::path checkpoint_path;  // empty disables
  int checkpoint_every = 0;               // steps; 0 writes only at the end
  std::function<void(const Trainer&, const std::filesystem::path&)> save_checkpoint;
  std::function<void(const LogRecord&)> on_step;
};

// Runs train_step until the trainer's step counter reaches cfg.steps. A
// trainer restored from a checkpoint continues where it stopped.
inline std::vector<LogRecord> fit(Trainer& trainer, const std::vector<PreparedSample>& dataset,
                                  const FitOptions& opts = {}) {
  const auto& cfg = trainer.config();
  SampleOrder order(dataset.size(), cfg.seed);
  std::vector<LogRecord> log;
  std::ofstream log_out;
  if (!opts.log_path.empty()) {
    log_out.open(opts.log_path, std::ios::app);
    if (!log_out) throw std::runtime_error("fit: cannot open log " + opts.log_path.string());
  }
  auto checkpoint = [&] {
    if (opts.checkpoint_path.empty() || !opts.save_checkpoint) return;
    opts.save_checkpoint(trainer, opts.checkpoint_path);
  };
  const auto B = static_cast<std::uint64_t>(cfg.batch_size);
  while (trainer.step_count() < cfg.steps) {
    const auto step = static_cast<std::uint64_t>(trainer.step_count());
    std::vector<const PreparedSample*> batch;
    for (std::uint64_t j = 0; j < B; ++j) batch.push_back(&dataset[order.at(step * B + j)]);
    LogRecord rec{trainer.step_count(), trainer.train_step(batch), cfg.learning_rate};
    log.push_back(rec);
    if (log_out) log_out << log_line(rec) << '\n' << std::flush;
    if (opts.on_step) opts.on_step(rec);
    if (opts.checkpoint_every > 0 && trainer.step_count() % opts.checkpoint_every == 0) checkpoint();
  }
  checkpoint();
  return log;
}

}  // namespace evwsss::train
