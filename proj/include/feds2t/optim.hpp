#pragma once

#include "feds2t/types.hpp"

#include <stdexcept>

namespace feds2t {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment estimates over a flattened trainable set.
struct AdamState {
  Vector m, v;
  long step = 0;

  explicit AdamState(Index dim) : m(Vector::Zero(dim)), v(Vector::Zero(dim)) {}
};

inline void adam_step(Eigen::Ref<Vector> params, const Vector& grads,
                      AdamState& state, double lr, const AdamConfig& cfg = {}) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw std::invalid_argument("adam_step shape mismatch");
  state.step += 1;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads;
  state.v = cfg.beta2 * state.v.array() + (1.0 - cfg.beta2) * grads.array().square();
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  params.array() -=
      lr * (state.m.array() / bc1) / ((state.v.array() / bc2).sqrt() + cfg.eps);
}

inline void sgd_step(Eigen::Ref<Vector> params, const Vector& grads, double lr) {
  if (params.size() != grads.size())
    throw std::invalid_argument("sgd_step shape mismatch");
  params -= lr * grads;
}

}  // namespace feds2t
