#pragma once

// Point-label loss, reliability map, thresholded pseudo-labels and the
// cross-branch dual loss. Probabilities are C x H x W tensors; the gradient
// helpers return dL/dlogits, using dCE/dlogit = p - onehot.

#include <algorithm>
#include <cmath>
#include <limits>

#include "evwsss/errors.hpp"
#include "evwsss/labels.hpp"
#include "evwsss/tensor.hpp"

namespace evwsss::supervision {

template <class T>
struct LossValue {
  T value{};
  bool degenerate = false;  // no contributing pixels; value is 0
};

template <class T>
Tensor<T> softmax_probs(const Tensor<T>& logits) {
  if (logits.rank() != 3) throw ArgumentError("softmax_probs: expected C x H x W logits");
  if (!logits.all_finite()) throw NumericError("softmax_probs: non-finite logit");
  const std::size_t C = logits.dim(0), HW = logits.dim(1) * logits.dim(2);
  Tensor<T> probs(logits.shape());
  const T* in = logits.data();
  T* out = probs.data();
  for (std::size_t i = 0; i < HW; ++i) {
    T m = in[i];
    for (std::size_t c = 1; c < C; ++c) m = std::max(m, in[c * HW + i]);
    T sum{};
    for (std::size_t c = 0; c < C; ++c) {
      out[c * HW + i] = std::exp(in[c * HW + i] - m);
      sum += out[c * HW + i];
    }
    for (std::size_t c = 0; c < C; ++c) out[c * HW + i] /= sum;
  }
  return probs;
}

namespace detail {

template <class T>
T safe_log(T p) {
  return std::log(std::max(p, std::numeric_limits<T>::min()));
}

template <class T>
void check_labels(const Tensor<T>& probs, const PointLabelSet& labels) {
  const auto C = static_cast<int>(probs.dim(0)), H = static_cast<int>(probs.dim(1)), W = static_cast<int>(probs.dim(2));
  for (const auto& p : labels.points)
    if (p.x < 0 || p.y < 0 || p.x >= W || p.y >= H || p.class_id < 0 || p.class_id >= C)
      throw ArgumentError("weak_loss: label point outside the probability map");
}

}  // namespace detail

// Mean cross-entropy over the clicked pixels of one branch.
template <class T>
LossValue<T> point_ce(const Tensor<T>& probs, const PointLabelSet& labels) {
  if (labels.empty()) return {T{}, true};
  detail::check_labels(probs, labels);
  T sum{};
  for (const auto& p : labels.points)
    sum -= detail::safe_log(probs(static_cast<std::size_t>(p.class_id), static_cast<std::size_t>(p.y),
                                  static_cast<std::size_t>(p.x)));
  return {sum / static_cast<T>(labels.size()), false};
}

// -(1 / 2|t|) * sum over clicks of [log p_f + log p_b]. Unlabeled pixels
// never contribute.
template <class T>
LossValue<T> weak_loss(const Tensor<T>& probs_f, const Tensor<T>& probs_b, const PointLabelSet& labels) {
  if (!probs_f.same_shape(probs_b)) throw ArgumentError("weak_loss: branch shapes differ");
  const auto f = point_ce(probs_f, labels);
  const auto b = point_ce(probs_b, labels);
  return {T{0.5} * (f.value + b.value), f.degenerate};
}

// Adds scale * d(point_ce)/dlogits into grad.
template <class T>
void add_point_ce_grad(const Tensor<T>& probs, const PointLabelSet& labels, T scale, Tensor<T>& grad) {
  if (labels.empty()) return;
  const T w = scale / static_cast<T>(labels.size());
  const std::size_t C = probs.dim(0);
  for (const auto& p : labels.points) {
    const auto y = static_cast<std::size_t>(p.y), x = static_cast<std::size_t>(p.x);
    for (std::size_t c = 0; c < C; ++c)
      grad(c, y, x) += w * (probs(c, y, x) - (static_cast<int>(c) == p.class_id ? T{1} : T{}));
  }
}

// Per-pixel maximum class probability.
template <class T>
Tensor<T> reliability(const Tensor<T>& probs) {
  const std::size_t C = probs.dim(0), H = probs.dim(1), W = probs.dim(2);
  Tensor<T> r({H, W});
  for (std::size_t i = 0; i < H * W; ++i) {
    T m = probs[i];
    for (std::size_t c = 1; c < C; ++c) m = std::max(m, probs[c * H * W + i]);
    r[i] = m;
  }
  return r;
}

// Argmax class where reliability exceeds th, else 255. Ties go to the lowest index.
template <class T>
LabelMap pseudo_gt(const Tensor<T>& probs, double th) {
  if (!(th > 0.0 && th < 1.0)) throw ArgumentError("pseudo_gt: threshold must be in (0, 1)");
  const std::size_t C = probs.dim(0), H = probs.dim(1), W = probs.dim(2);
  LabelMap out(static_cast<int>(W), static_cast<int>(H), kIgnoreLabel);
  for (std::size_t i = 0; i < H * W; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (probs[c * H * W + i] > probs[best * H * W + i]) best = c;
    if (static_cast<double>(probs[best * H * W + i]) > th) out.values[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

// Mean -log p[target] over pixels whose target is not 255.
template <class T>
LossValue<T> masked_ce(const Tensor<T>& probs, const LabelMap& target) {
  const std::size_t H = probs.dim(1), W = probs.dim(2);
  if (static_cast<std::size_t>(target.width) != W || static_cast<std::size_t>(target.height) != H)
    throw ArgumentError("masked_ce: pseudo-label size mismatch");
  T sum{};
  std::size_t n = 0;
  for (std::size_t i = 0; i < H * W; ++i) {
    const auto c = target.values[i];
    if (c == kIgnoreLabel) continue;
    sum -= detail::safe_log(probs[c * H * W + i]);
    ++n;
  }
  if (n == 0) return {T{}, true};
  return {sum / static_cast<T>(n), false};
}

template <class T>
void add_masked_ce_grad(const Tensor<T>& probs, const LabelMap& target, T scale, Tensor<T>& grad) {
  const std::size_t C = probs.dim(0), HW = probs.dim(1) * probs.dim(2);
  const auto n = static_cast<std::size_t>(
      std::count_if(target.values.begin(), target.values.end(), [](auto v) { return v != kIgnoreLabel; }));
  if (n == 0) return;
  const T w = scale / static_cast<T>(n);
  for (std::size_t i = 0; i < HW; ++i) {
    const auto t = target.values[i];
    if (t == kIgnoreLabel) continue;
    for (std::size_t c = 0; c < C; ++c) grad[c * HW + i] += w * (probs[c * HW + i] - (c == t ? T{1} : T{}));
  }
}

// 1/2 CE(P_f, A_b) + 1/2 CE(P_b, A_f). Pseudo-labels are constants.
template <class T>
T dual_loss(const Tensor<T>& probs_f, const LabelMap& pgt_b, const Tensor<T>& probs_b, const LabelMap& pgt_f) {
  if (!probs_f.same_shape(probs_b)) throw ArgumentError("dual_loss: branch shapes differ");
  return T{0.5} * masked_ce(probs_f, pgt_b).value + T{0.5} * masked_ce(probs_b, pgt_f).value;
}

}  // namespace evwsss::supervision
