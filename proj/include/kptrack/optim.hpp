#pragma once

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "kptrack/error.hpp"
#include "kptrack/tensor.hpp"

namespace kptrack {

/// Adam moments for one parameter group.
struct AdamState {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
  std::int64_t t = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
};

/// Step-decay learning rate: base_lr until decay_epoch, base_lr*gamma after.
/// Epochs are zero-based, so decay_epoch = 10 decays from the 11th epoch on.
struct LrSchedule {
  float base_lr = 3e-5f;
  float decay_gamma = 0.1f;
  int decay_epoch = 10;

  float at(int epoch) const { return epoch < decay_epoch ? base_lr : base_lr * decay_gamma; }
};

namespace detail {

inline void adam_update(std::span<Tensor> params, const std::vector<std::span<const float>>& grads,
                        AdamState& state, float lr) {
  if (!(lr >= 0.0f)) throw UsageError("adam_step: learning rate must be non-negative");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(static_cast<std::size_t>(p.size()), 0.0f);
      state.v.emplace_back(static_cast<std::size_t>(p.size()), 0.0f);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: optimizer state does not match parameter list");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(static_cast<double>(state.beta1), static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(static_cast<double>(state.beta2), static_cast<double>(state.t));
  const float step = static_cast<float>(lr / bc1);
  const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto g = grads[i];
    auto p = params[i].data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != p.size()) throw ShapeError("adam_step: optimizer state does not match parameter " + std::to_string(i));
    for (std::size_t j = 0; j < p.size(); ++j) {
      const float gj = g.empty() ? 0.0f : g[j];
      m[j] = state.beta1 * m[j] + (1.0f - state.beta1) * gj;
      v[j] = state.beta2 * v[j] + (1.0f - state.beta2) * gj * gj;
      p[j] -= step * m[j] / (std::sqrt(v[j]) * inv_sqrt_bc2 + state.epsilon);
    }
  }
}

}  // namespace detail

/// One bias-corrected Adam update of `params`; grads[i] holds the gradient
/// of params[i] as its data.
inline void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state, float lr) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " params but " +
                     std::to_string(grads.size()) + " grads");
  }
  std::vector<std::span<const float>> g;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape()) {
      throw ShapeError("adam_step: parameter " + std::to_string(i) + " has shape " + shape_str(params[i].shape()) +
                       " but gradient has shape " + shape_str(grads[i].shape()));
    }
    g.push_back(grads[i].data());
  }
  detail::adam_update(params, g, state, lr);
}

/// Adam step using each parameter's accumulated gradient buffer (missing
/// buffers count as zero gradient).
inline void adam_step(std::span<Tensor> params, AdamState& state, float lr) {
  std::vector<std::span<const float>> g;
  for (auto& p : params) g.push_back(p.has_grad() ? std::as_const(p).grad() : std::span<const float>{});
  detail::adam_update(params, g, state, lr);
}

}  // namespace kptrack
