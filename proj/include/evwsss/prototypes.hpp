#pragma once

// Class prototypes: reliability-weighted aggregation within a sample, FIFO
// memory across samples, cross-branch combination through the projection
// pair, the prototype InfoNCE loss and the projection distillation loss.
//
// Prototypes are training-time constants: none of the aggregation steps
// produce gradients, the contrastive loss differentiates only the features,
// and the distillation loss differentiates only the projection maps.

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <vector>

#include "evwsss/errors.hpp"
#include "evwsss/labels.hpp"
#include "evwsss/layers.hpp"
#include "evwsss/network.hpp"
#include "evwsss/supervision.hpp"
#include "evwsss/tensor.hpp"

namespace evwsss::proto {

using supervision::LossValue;

enum class BranchId { Forward, Backward };

template <class T>
struct ClassPrototype {
  Tensor<T> vector;  // unit norm, length D
  int class_id = 0;
  BranchId source = BranchId::Forward;

  friend bool operator==(const ClassPrototype&, const ClassPrototype&) = default;
};

template <class T>
using PrototypeSet = std::map<int, ClassPrototype<T>>;

struct ContrastConfig {
  double temperature = 0.1;  // beta
  std::size_t queue_capacity = 32;
  std::size_t min_pixels = 1;

  void validate() const {
    if (!(temperature > 0.0)) throw ArgumentError("contrast: temperature must be positive");
    if (queue_capacity < 1) throw ArgumentError("contrast: queue capacity must be >= 1");
  }
};

template <class T>
T norm(const Tensor<T>& v) {
  T s{};
  for (T x : v.values()) s += x * x;
  return std::sqrt(s);
}

// Normalizes v in place; returns false and leaves v untouched when |v| is
// numerically zero.
template <class T>
bool normalize_inplace(Tensor<T>& v) {
  const T n = norm(v);
  if (!(n > std::numeric_limits<T>::epsilon())) return false;
  for (T& x : v.values()) x /= n;
  return true;
}

// Nearest-neighbour resampling of a full-resolution map to the feature grid:
// feature cell (i, j) reads pixel (i*s + s/2, j*s + s/2).
inline LabelMap downsample_labels(const LabelMap& m, int stride) {
  LabelMap out(m.width / stride, m.height / stride);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out.at(x, y) = m.at(x * stride + stride / 2, y * stride + stride / 2);
  return out;
}

template <class T>
Tensor<T> downsample_map(const Tensor<T>& m, int stride) {
  const std::size_t s = static_cast<std::size_t>(stride);
  Tensor<T> out({m.dim(0) / s, m.dim(1) / s});
  for (std::size_t y = 0; y < out.dim(0); ++y)
    for (std::size_t x = 0; x < out.dim(1); ++x) out(y, x) = m(y * s + s / 2, x * s + s / 2);
  return out;
}

// Per class k: normalize(sum over a == k of r * normalize(z)). Classes with
// fewer than min_pixels qualifying cells are omitted.
template <class T>
PrototypeSet<T> intra_aggregate(const Tensor<T>& z, const Tensor<T>& r, const LabelMap& a, BranchId source,
                                std::size_t min_pixels = 1) {
  const std::size_t D = z.dim(0), H = z.dim(1), W = z.dim(2);
  if (r.shape() != std::vector<std::size_t>{H, W} || static_cast<std::size_t>(a.width) != W ||
      static_cast<std::size_t>(a.height) != H)
    throw ArgumentError("intra_aggregate: reliability/pseudo-label maps must match the feature grid");
  std::map<int, Tensor<T>> sums;
  std::map<int, std::size_t> counts;
  for (std::size_t i = 0; i < H * W; ++i) {
    const int k = a.values[i];
    if (k == kIgnoreLabel) continue;
    T n2{};
    for (std::size_t d = 0; d < D; ++d) n2 += z[d * H * W + i] * z[d * H * W + i];
    ++counts[k];
    auto [it, fresh] = sums.try_emplace(k, Tensor<T>({D}));
    if (!(n2 > T{})) continue;
    const T w = r[i] / std::sqrt(n2);
    for (std::size_t d = 0; d < D; ++d) it->second[d] += w * z[d * H * W + i];
  }
  PrototypeSet<T> out;
  for (auto& [k, v] : sums) {
    if (counts[k] < min_pixels || !normalize_inplace(v)) continue;
    out.emplace(k, ClassPrototype<T>{std::move(v), k, source});
  }
  return out;
}

// Per-class FIFO queues of intra-level prototypes plus the prototypes
// currently used as contrast anchors.
template <class T>
class PrototypeBank {
 public:
  PrototypeBank() = default;
  PrototypeBank(std::size_t dim, std::size_t capacity) : dim_(dim), capacity_(capacity) {
    if (capacity < 1) throw ArgumentError("prototype bank: capacity must be >= 1");
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t capacity() const noexcept { return capacity_; }
  const std::map<int, std::deque<ClassPrototype<T>>>& queues() const noexcept { return queues_; }

  bool contains(int class_id) const {
    auto it = queues_.find(class_id);
    return it != queues_.end() && !it->second.empty();
  }
  const std::deque<ClassPrototype<T>>& queue(int class_id) const {
    auto it = queues_.find(class_id);
    if (it == queues_.end()) throw NotFoundError("prototype bank: class " + std::to_string(class_id) + " never observed");
    return it->second;
  }

  // Appends each prototype to its class queue, evicting the oldest beyond capacity.
  void push(const PrototypeSet<T>& protos) {
    for (const auto& [k, p] : protos) {
      if (p.vector.size() != dim_) throw ArgumentError("prototype bank: dimension mismatch");
      ClassPrototype<T> stored = p;
      if (!normalize_inplace(stored.vector)) throw ArgumentError("prototype bank: zero prototype");
      auto& q = queues_[k];
      q.push_back(std::move(stored));
      while (q.size() > capacity_) q.pop_front();
    }
  }

  // Anchors for the contrastive loss (inter-level, optionally dual-combined).
  const PrototypeSet<T>& anchors() const noexcept { return anchors_; }
  void set_anchors(PrototypeSet<T> anchors) { anchors_ = std::move(anchors); }

  // Direct queue restore for checkpoints.
  void restore_queue(int class_id, std::deque<ClassPrototype<T>> q) { queues_[class_id] = std::move(q); }

  friend bool operator==(const PrototypeBank&, const PrototypeBank&) = default;

 private:
  std::size_t dim_ = 0;
  std::size_t capacity_ = 32;
  std::map<int, std::deque<ClassPrototype<T>>> queues_;
  PrototypeSet<T> anchors_;
};

template <class T>
void queue_push(PrototypeBank<T>& bank, const PrototypeSet<T>& protos) {
  bank.push(protos);
}

// Mean of the queued vectors, renormalized. A zero mean falls back to the
// most recent entry.
template <class T>
ClassPrototype<T> inter_aggregate(const PrototypeBank<T>& bank, int class_id) {
  if (!bank.contains(class_id))
    throw NotFoundError("inter_aggregate: class " + std::to_string(class_id) + " has no queued prototypes");
  const auto& q = bank.queue(class_id);
  Tensor<T> mean({bank.dim()});
  for (const auto& p : q) mean += p.vector;
  mean *= T{1} / static_cast<T>(q.size());
  if (!normalize_inplace(mean)) return q.back();
  return {std::move(mean), class_id, q.back().source};
}

template <class T>
PrototypeSet<T> inter_aggregate_all(const PrototypeBank<T>& bank) {
  PrototypeSet<T> out;
  for (const auto& [k, q] : bank.queues())
    if (!q.empty()) out.emplace(k, inter_aggregate(bank, k));
  return out;
}

// normalize(own + delivered); falls back to own when the sum vanishes.
template <class T>
ClassPrototype<T> dual_combine(const ClassPrototype<T>& own, const ClassPrototype<T>& delivered) {
  if (own.class_id != delivered.class_id) throw ArgumentError("dual_combine: class mismatch");
  if (own.vector.size() != delivered.vector.size()) throw ArgumentError("dual_combine: dimension mismatch");
  Tensor<T> sum = own.vector;
  sum += delivered.vector;
  if (!normalize_inplace(sum)) return own;
  return {std::move(sum), own.class_id, own.source};
}

// Prototype delivered from the opposite branch: the projection of its
// inter-level prototype (not renormalized; dual_combine normalizes the sum).
template <class T>
ClassPrototype<T> deliver(const nn::ProjectionPair<T>& pair, const ClassPrototype<T>& opposite, nn::Direction dir) {
  return {nn::project(pair, opposite.vector, dir), opposite.class_id, opposite.source};
}

// InfoNCE against prototype anchors, averaged over contributing cells:
//   -log[ exp(zhat . pt_alpha / beta) / sum_k exp(zhat . pt_k / beta) ]
// where zhat = z / |z|, alpha is the target class of the cell (from the
// opposite branch), and k ranges over the anchor classes. Cells whose target
// is 255 or absent from the anchors are skipped. When grad_z is given,
// scale * dL/dz is added to it.
template <class T>
LossValue<T> proto_contrast_loss(const Tensor<T>& z, const PrototypeSet<T>& anchors, const LabelMap& targets,
                                 const ContrastConfig& cfg, Tensor<T>* grad_z = nullptr, T scale = T{1}) {
  cfg.validate();
  const std::size_t D = z.dim(0), H = z.dim(1), W = z.dim(2);
  if (static_cast<std::size_t>(targets.width) != W || static_cast<std::size_t>(targets.height) != H)
    throw ArgumentError("proto_contrast_loss: targets must match the feature grid");
  if (anchors.empty()) return {T{}, true};
  const std::size_t K = anchors.size();
  nn::RowMatrix<T> P(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(D));
  std::map<int, std::size_t> row_of;
  std::size_t row = 0;
  for (const auto& [k, p] : anchors) {
    if (p.vector.size() != D) throw ArgumentError("proto_contrast_loss: prototype dimension mismatch");
    for (std::size_t d = 0; d < D; ++d) P(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(d)) = p.vector[d];
    row_of[k] = row++;
  }
  const T inv_beta = static_cast<T>(1.0 / cfg.temperature);

  std::vector<std::size_t> cells;
  for (std::size_t i = 0; i < H * W; ++i) {
    const int a = targets.values[i];
    if (a != kIgnoreLabel && row_of.contains(a)) cells.push_back(i);
  }
  if (cells.empty()) return {T{}, true};

  T total{};
  nn::ColVector<T> zhat(static_cast<Eigen::Index>(D)), s(static_cast<Eigen::Index>(K));
  const T w = scale / static_cast<T>(cells.size());
  for (std::size_t i : cells) {
    T n2{};
    for (std::size_t d = 0; d < D; ++d) {
      zhat(static_cast<Eigen::Index>(d)) = z[d * H * W + i];
      n2 += z[d * H * W + i] * z[d * H * W + i];
    }
    const T nz = std::max(std::sqrt(n2), std::numeric_limits<T>::min());
    zhat /= nz;
    s.noalias() = P * zhat * inv_beta;
    const auto alpha = static_cast<Eigen::Index>(row_of.at(targets.values[i]));
    const T m = s.maxCoeff();
    nn::ColVector<T> q = (s.array() - m).exp().matrix();
    const T sum = q.sum();
    total += m + std::log(sum) - s(alpha);
    if (grad_z) {
      q /= sum;
      q(alpha) -= T{1};
      // dL/dzhat = P^T (q - onehot) / beta; project onto the tangent space of the sphere.
      nn::ColVector<T> g = P.transpose() * q * inv_beta;
      g -= zhat * zhat.dot(g);
      g *= w / nz;
      for (std::size_t d = 0; d < D; ++d) (*grad_z)[d * H * W + i] += g(static_cast<Eigen::Index>(d));
    }
  }
  return {total / static_cast<T>(cells.size()), false};
}

// 1/2 mean|G_b2f(z_b) - z_f| + 1/2 mean|G_f2b(z_f) - z_b|. Both feature maps
// are constants; when grads is given, scale * dL/dprojection is added to it.
template <class T>
T distill_loss(const Tensor<T>& z_f, const Tensor<T>& z_b, const nn::ProjectionPair<T>& pair,
               nn::ProjectionPair<T>* grads = nullptr, T scale = T{1}) {
  if (!z_f.same_shape(z_b)) throw ArgumentError("distill_loss: feature shapes differ");
  const Tensor<T> to_f = nn::project(pair, z_b, nn::Direction::BackwardToForward);
  const Tensor<T> to_b = nn::project(pair, z_f, nn::Direction::ForwardToBackward);
  const auto N = static_cast<T>(z_f.size());
  Tensor<T> sign_f(z_f.shape()), sign_b(z_b.shape());
  T sum_f{}, sum_b{};
  for (std::size_t i = 0; i < z_f.size(); ++i) {
    const T df = to_f[i] - z_f[i];
    const T db = to_b[i] - z_b[i];
    sum_f += std::abs(df);
    sum_b += std::abs(db);
    sign_f[i] = static_cast<T>((df > T{}) - (df < T{}));
    sign_b[i] = static_cast<T>((db > T{}) - (db < T{}));
  }
  if (grads) {
    const T w = scale * T{0.5} / N;
    const auto D = static_cast<Eigen::Index>(z_f.dim(0));
    const auto cols = static_cast<Eigen::Index>(z_f.size()) / D;
    nn::ConstMatrixMap<T> Sf(sign_f.data(), D, cols), Sb(sign_b.data(), D, cols);
    nn::ConstMatrixMap<T> Zf(z_f.data(), D, cols), Zb(z_b.data(), D, cols);
    nn::as_matrix(grads->b2f_w).noalias() += w * Sf * Zb.transpose();
    nn::as_vector(grads->b2f_b) += w * Sf.rowwise().sum();
    nn::as_matrix(grads->f2b_w).noalias() += w * Sb * Zf.transpose();
    nn::as_vector(grads->f2b_b) += w * Sb.rowwise().sum();
  }
  return T{0.5} * sum_f / N + T{0.5} * sum_b / N;
}

}  // namespace evwsss::proto
