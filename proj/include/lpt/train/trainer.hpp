#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lpt/model/lpt_model.hpp"
#include "lpt/numerics/optim.hpp"
#include "lpt/sampler/langevin.hpp"

namespace lpt::train {

/// Multipliers applied to the scheduled learning rate for each parameter
/// group: eta0 (prior transport), eta1 (generator), eta2 (regression head).
struct GroupRates {
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 1.0;
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 256;
  double lr_max = 7.5e-4;
  double lr_min = 7.5e-5;
  GroupRates rates;
  AdamWConfig adam;
  /// Global-norm gradient clip; 0 disables.
  double clip_norm = 1.0;
  sampler::LangevinConfig langevin;

  void validate() const;
};

struct EpochReport {
  std::size_t epoch = 0;
  /// Optimizer step counter after the epoch.
  std::uint64_t step = 0;
  double lr = 0;
  double seq_nll_per_token = 0;
  /// Mean -log p(y|z) per record; zero in pretraining.
  double property_nll = 0;
  double grad_norm_alpha = 0;
  double grad_norm_beta = 0;
  double grad_norm_gamma = 0;
  double wall_time_s = 0;
};

/// Metrics fields only; wall time is kept out so reruns compare bitwise.
nlohmann::ordered_json to_json(const EpochReport& r);

struct TrainReport {
  std::string stage;
  std::vector<EpochReport> epochs;
};

/// Called after every epoch; returning false stops training early.
using EpochCallback = std::function<bool(const EpochReport&)>;

/// Monte Carlo learning gradients at posterior samples z0, averaged over the
/// batch: the ascent directions delta_alpha, delta_beta, delta_gamma of
/// log p(x|U(z0)) + log p(y|U(z0)), one tensor per parameter. With `y` null
/// the regression head receives exact zeros; with `xs` empty the generator does.
struct LearningGradients {
  std::vector<Tensor> delta;
  double seq_log_prob_sum = 0;
  double property_log_density_sum = 0;
  std::size_t tokens = 0;
};

LearningGradients learning_gradients(const model::LptModel& model, const model::ModelParams& params,
                                     std::span<const data::TokenSequence> xs, const Tensor* y,
                                     const Tensor& z0);

/// Sequences-only training: per mini-batch, z0 ~ p(z0|x) by fresh-noise
/// Langevin chains, then AdamW on alpha and beta. gamma is never touched.
TrainReport pretrain(const model::LptModel& model, std::span<const data::TokenSequence> xs,
                     model::ModelParams& params, OptimState& optim, const TrainConfig& cfg,
                     RngBank& rngs, const EpochCallback& on_epoch = {});

/// Joint training on (x, y) with y already normalised: z0 ~ p(z0|x,y), then
/// AdamW on alpha, beta and gamma, each at its own rate.
TrainReport finetune(const model::LptModel& model, std::span<const data::TokenSequence> xs,
                     std::span<const std::vector<double>> ys, model::ModelParams& params,
                     OptimState& optim, const TrainConfig& cfg, RngBank& rngs,
                     const EpochCallback& on_epoch = {});

/// Decay applies to matrices and kernels (rank >= 2), not to biases, gains or
/// the rank-1 regression output bias.
std::vector<char> decay_mask(const model::LptModel& model);

}  // namespace lpt::train
