#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lpt/model/lpt_model.hpp"
#include "lpt/numerics/rng.hpp"

namespace lpt::sampler {

/// Log-density of a batch of chains. `rows` names which original chains the
/// rows of `z0` belong to, so a target can pick the matching x and y.
/// Row i of the result must depend only on row i of `z0`.
using LogDensityFn =
    std::function<ad::Var(const ad::Var& z0, std::span<const std::size_t> rows)>;

struct LangevinConfig {
  std::size_t steps = 15;
  double step_size = 0.1;
};

enum class InitMode { fresh_noise, warm_start };

struct ChainState {
  Tensor z0;           // [B, d]
  Tensor log_density;  // [B], at the point of the most recent gradient evaluation
  std::size_t step = 0;
};

/// One unadjusted Langevin update of every chain:
/// z0 <- z0 + s grad log pi(z0) + sqrt(2 s) noise. Throws ChainDivergedError
/// carrying the step index when the gradient or the new point is not finite.
ChainState langevin_step(const ChainState& state, const LogDensityFn& target, double step_size,
                         const Tensor& noise);

struct PosteriorSample {
  ChainState state;
  /// Chains whose dynamics hit a non-finite value; their z0 rows are frozen
  /// at the last finite point and must not be used.
  std::vector<char> failed;
  std::vector<std::string> failures;

  std::size_t failed_count() const;
};

/// Runs cfg.steps Langevin updates from `init`. With one noise stream the
/// noise for each step is drawn row-major for the whole batch; with one stream
/// per chain, chain b draws only from noise[b]. A chain that diverges is
/// frozen and reported without disturbing the others.
PosteriorSample sample_posterior(const Tensor& init, const LogDensityFn& target,
                                 const LangevinConfig& cfg, std::span<RngStream> noise);

/// Fresh chain starts z0 ~ N(0, I_d) drawn from `rng` (the init stream).
Tensor fresh_init(std::size_t chains, std::size_t dim, RngStream& rng);

/// Target log p(z0 | x, y) up to a constant for a model snapshot. Empty `xs`
/// or null `y` drops that term; both absent leaves the prior.
LogDensityFn posterior_target(const model::LptModel& model, std::span<const ad::Var> params,
                              std::span<const data::TokenSequence> xs, const Tensor* y);

}  // namespace lpt::sampler
