#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "mrp/tensor.hpp"

namespace mrp {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double peak_lr = 1e-3;
  double min_lr = 1e-5;
  std::int64_t total_steps = 1;
};

struct OptimizerState {
  AdamWConfig config;
  std::vector<Array> first_moment;
  std::vector<Array> second_moment;
  std::int64_t step_count = 0;
};

// Cosine decay from peak_lr at step 0 to min_lr at total_steps; clamps past the end.
inline double cosine_lr(std::int64_t step, const AdamWConfig& cfg) {
  if (cfg.total_steps <= 0 || step >= cfg.total_steps) return cfg.min_lr;
  if (step <= 0) return cfg.peak_lr;
  const double frac = static_cast<double>(step) / static_cast<double>(cfg.total_steps);
  return cfg.min_lr + 0.5 * (cfg.peak_lr - cfg.min_lr) * (1.0 + std::cos(std::numbers::pi * frac));
}

inline double cosine_lr(std::int64_t step, const OptimizerState& state) { return cosine_lr(step, state.config); }

inline OptimizerState make_optimizer(std::span<const Tensor> params, AdamWConfig cfg) {
  OptimizerState st{cfg, {}, {}, 0};
  for (const auto& p : params) {
    st.first_moment.emplace_back(p.shape());
    st.second_moment.emplace_back(p.shape());
  }
  return st;
}

// One AdamW update with decoupled weight decay and bias-corrected moments.
// Returns the learning rate used.
inline double adamw_step(std::span<Tensor> params, OptimizerState& st) {
  require(params.size() == st.first_moment.size(), ErrorKind::invalid_config, "optimizer/parameter count mismatch");
  bool any_grad = false;
  for (const auto& p : params) any_grad = any_grad || p.has_grad();
  require(any_grad, ErrorKind::no_grad, "adamw_step called before any backward pass");

  const auto& c = st.config;
  const double lr = cosine_lr(st.step_count, c);
  ++st.step_count;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.step_count));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.step_count));

  for (std::size_t i = 0; i < params.size(); ++i) {
    Array& w = params[i].mutable_value();
    require(st.first_moment[i].same_shape(w), ErrorKind::invalid_shape, "moment shape mismatch");
    const bool has = params[i].has_grad();
    const double* g = has ? params[i].mutable_grad().data() : nullptr;
    double* m = st.first_moment[i].data();
    double* v = st.second_moment[i].data();
    for (std::int64_t j = 0; j < w.numel(); ++j) {
      const double gj = has ? g[j] : 0.0;
      w[j] -= lr * c.weight_decay * w[j];
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
      const double mh = m[j] / bc1;
      const double vh = v[j] / bc2;
      w[j] -= lr * mh / (std::sqrt(vh) + c.eps);
    }
  }
  return lr;
}

}  // namespace mrp
