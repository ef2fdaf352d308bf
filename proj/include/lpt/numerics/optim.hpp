#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lpt/numerics/tensor.hpp"

namespace lpt {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.1;
};

/// First/second moment accumulators for a fixed list of parameters.
struct OptimState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;

  static OptimState zeros_like(std::span<const Tensor> params);
};

/// Applies one AdamW update to `params[i]` for every i with `lrs[i]` present.
///
/// Weight decay is decoupled: p <- p - lr*wd*p - lr*m_hat/(sqrt(v_hat)+eps),
/// applied only where `decay[i]` is set. The step counter advances once per call.
void adamw_step(std::span<Tensor> params, std::span<const Tensor> grads, OptimState& state,
                std::span<const double> lrs, std::span<const bool> decay, const AdamWConfig& cfg);

/// Single learning rate for every parameter, weight decay everywhere.
void adamw_step(std::span<Tensor> params, std::span<const Tensor> grads, OptimState& state,
                double lr, const AdamWConfig& cfg);

struct LrSchedule {
  double lr_max = 7.5e-4;
  double lr_min = 7.5e-5;
  std::uint64_t total_steps = 1;
};

/// lr_min + 0.5 (lr_max - lr_min)(1 + cos(pi step / total_steps)).
double cosine_lr(std::uint64_t step, const LrSchedule& schedule);

/// Global L2 norm over all tensors.
double global_norm(std::span<const Tensor> tensors);

/// Rescales in place so the global norm is at most `max_norm`. Returns the norm before clipping.
double clip_global_norm(std::span<Tensor> tensors, double max_norm);

}  // namespace lpt
