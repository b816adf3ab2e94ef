#pragma once

// Rectified Adam: Adam whose adaptive step is switched on only once the
// variance of the adaptive learning rate is tractable (rho_t > 5), with the
// rectification factor r_t applied afterwards. Before that, the update is
// bias-corrected momentum SGD.

#include <cmath>
#include <string>
#include <vector>

#include "evwsss/errors.hpp"
#include "evwsss/tensor.hpp"

namespace evwsss::optim {

struct RAdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
class RAdam {
 public:
  RAdam() = default;
  explicit RAdam(RAdamConfig cfg) : cfg_(cfg) {}

  const RAdamConfig& config() const noexcept { return cfg_; }
  long step_count() const noexcept { return step_; }

  // params and grads are parallel lists in a fixed canonical order. State is
  // allocated lazily on the first call.
  void step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads) {
    if (params.size() != grads.size()) throw ArgumentError("radam: params/grads length mismatch");
    if (m_.empty()) {
      for (const auto* p : params) {
        m_.emplace_back(p->shape());
        v_.emplace_back(p->shape());
      }
    }
    if (m_.size() != params.size()) throw ArgumentError("radam: parameter list changed between steps");
    ++step_;
    const double t = static_cast<double>(step_);
    const double b1t = std::pow(cfg_.beta1, t), b2t = std::pow(cfg_.beta2, t);
    const double rho_inf = 2.0 / (1.0 - cfg_.beta2) - 1.0;
    const double rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t);
    const bool adaptive = rho_t > 5.0;
    double rect = 0.0;
    if (adaptive)
      rect = std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T lr_m = static_cast<T>(cfg_.learning_rate / (1.0 - b1t));
    const T v_corr = static_cast<T>(1.0 / std::sqrt(1.0 - b2t));
    const T eps = static_cast<T>(cfg_.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor<T>& p = *params[i];
      const Tensor<T>& g = *grads[i];
      if (!p.same_shape(g) || !p.same_shape(m_[i])) throw ArgumentError("radam: shape mismatch");
      for (std::size_t j = 0; j < p.size(); ++j) {
        m_[i][j] = b1 * m_[i][j] + (T{1} - b1) * g[j];
        v_[i][j] = b2 * v_[i][j] + (T{1} - b2) * g[j] * g[j];
        if (adaptive)
          p[j] -= lr_m * static_cast<T>(rect) * m_[i][j] / (std::sqrt(v_[i][j]) * v_corr + eps);
        else
          p[j] -= lr_m * m_[i][j];
      }
    }
  }

  // Moment buffers, exposed for checkpointing.
  std::vector<Tensor<T>>& first_moments() noexcept { return m_; }
  std::vector<Tensor<T>>& second_moments() noexcept { return v_; }
  const std::vector<Tensor<T>>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor<T>>& second_moments() const noexcept { return v_; }
  void set_step_count(long s) noexcept { step_ = s; }

 private:
  RAdamConfig cfg_;
  long step_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

}  // namespace evwsss::optim
