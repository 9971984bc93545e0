#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "firegan/autograd.hpp"
#include "firegan/errors.hpp"

namespace firegan {

struct AdamParams {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<std::pair<std::string, Var<T>>> params, AdamParams hp)
      : params_(std::move(params)), hp_(hp) {
    if (!(hp_.lr > 0)) throw ValidationError("learning rate must be positive");
    for (const auto& [name, p] : params_) {
      m_.emplace_back(p.shape());
      v_.emplace_back(p.shape());
    }
  }

  double lr() const noexcept { return hp_.lr; }
  const AdamParams& hyper() const noexcept { return hp_; }
  std::size_t steps() const noexcept { return t_; }

  // Applies one update from the accumulated gradients, then clears them.
  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(hp_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(hp_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(hp_.beta1), b2 = static_cast<T>(hp_.beta2);
    const T step_size = static_cast<T>(hp_.lr / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(hp_.eps);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Var<T>& p = params_[i].second;
      if (!p.has_grad()) continue;
      const Tensor<T> g = p.grad();
      Tensor<T>& w = p.mutable_value();
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (std::size_t k = 0; k < w.size(); ++k) {
        m[k] = b1 * m[k] + (T{1} - b1) * g[k];
        v[k] = b2 * v[k] + (T{1} - b2) * g[k] * g[k];
        w[k] -= step_size * m[k] / (std::sqrt(v[k] * inv_bc2) + eps);
      }
      p.zero_grad();
    }
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  // Moment buffers as "m.<param>" / "v.<param>" for checkpointing.
  std::vector<std::pair<std::string, Tensor<T>*>> named_state() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out.emplace_back("m." + params_[i].first, &m_[i]);
      out.emplace_back("v." + params_[i].first, &v_[i]);
    }
    return out;
  }
  void set_steps(std::size_t t) noexcept { t_ = t; }

 private:
  std::vector<std::pair<std::string, Var<T>>> params_;
  std::vector<Tensor<T>> m_, v_;
  AdamParams hp_;
  std::size_t t_ = 0;
};

}  // namespace firegan
