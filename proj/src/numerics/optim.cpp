#include "lpt/numerics/optim.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "lpt/errors.hpp"

namespace lpt {

OptimState OptimState::zeros_like(std::span<const Tensor> params) {
  OptimState s;
  for (const auto& p : params) {
    s.first_moment.emplace_back(p.shape());
    s.second_moment.emplace_back(p.shape());
  }
  return s;
}

void adamw_step(std::span<Tensor> params, std::span<const Tensor> grads, OptimState& state,
                std::span<const double> lrs, std::span<const bool> decay, const AdamWConfig& cfg) {
  const std::size_t n = params.size();
  if (grads.size() != n || lrs.size() != n || decay.size() != n ||
      state.first_moment.size() != n || state.second_moment.size() != n) {
    throw ShapeError("adamw_step: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (grads[i].shape() != params[i].shape() || state.first_moment[i].shape() != params[i].shape()) {
      throw ShapeError("adamw_step: shape mismatch for parameter " + std::to_string(i) + ": " +
                       shape_str(params[i].shape()) + " vs grad " + shape_str(grads[i].shape()));
    }
    if (lrs[i] < 0) throw ShapeError("adamw_step: negative learning rate");
  }

  ++state.step;
  const double bc1 = 1 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < n; ++i) {
    auto p = params[i].mutable_data();
    auto g = grads[i].data();
    auto m = state.first_moment[i].mutable_data();
    auto v = state.second_moment[i].mutable_data();
    const double lr = lrs[i];
    const double wd = decay[i] ? cfg.weight_decay : 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = static_cast<Scalar>(cfg.beta1 * m[j] + (1 - cfg.beta1) * g[j]);
      v[j] = static_cast<Scalar>(cfg.beta2 * v[j] + (1 - cfg.beta2) * g[j] * g[j]);
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      const double w = p[j];
      p[j] = static_cast<Scalar>(w - lr * wd * w - lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
    }
  }
}

void adamw_step(std::span<Tensor> params, std::span<const Tensor> grads, OptimState& state,
                double lr, const AdamWConfig& cfg) {
  std::vector<double> lrs(params.size(), lr);
  auto decay = std::make_unique<bool[]>(params.size());
  std::fill_n(decay.get(), params.size(), true);
  adamw_step(params, grads, state, lrs, std::span<const bool>(decay.get(), params.size()), cfg);
}

double cosine_lr(std::uint64_t step, const LrSchedule& schedule) {
  if (schedule.total_steps == 0) throw ConfigError("cosine_lr: total_steps must be positive");
  if (step > schedule.total_steps) {
    throw ConfigError("cosine_lr: step " + std::to_string(step) + " beyond total_steps " +
                      std::to_string(schedule.total_steps));
  }
  const double frac = static_cast<double>(step) / static_cast<double>(schedule.total_steps);
  return schedule.lr_min +
         0.5 * (schedule.lr_max - schedule.lr_min) * (1 + std::cos(std::numbers::pi * frac));
}

double global_norm(std::span<const Tensor> tensors) {
  double sq = 0;
  for (const auto& t : tensors)
    for (Scalar v : t.data()) sq += static_cast<double>(v) * v;
  return std::sqrt(sq);
}

double clip_global_norm(std::span<Tensor> tensors, double max_norm) {
  const double norm = global_norm(std::span<const Tensor>(tensors.data(), tensors.size()));
  if (max_norm > 0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& t : tensors)
      for (auto& v : t.mutable_data()) v = static_cast<Scalar>(v * factor);
  }
  return norm;
}

}  // namespace lpt
