#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"
#include "lpt/data/normalizer.hpp"
#include "lpt/data/ranking.hpp"
#include "lpt/model/lpt_model.hpp"
#include "lpt/oracle/oracle.hpp"
#include "lpt/train/trainer.hpp"

namespace lpt::sgds {

struct ShiftConfig {
  std::size_t iterations = 25;
  std::size_t proposals = 2500;
  std::size_t retain = 1000;
  /// Per-objective increment in internal (maximisation) units. Objectives
  /// with a zero entry are not shifted. Empty: resolved at initialize() as
  /// delta_fraction times the spread of the annotated seed set, with zero
  /// on objectives that appear in a constraint.
  std::vector<double> delta_y;
  double delta_fraction = 0.05;
  sampler::LangevinConfig warm_start{2, 0.1};
  data::RankSpec rank;
  train::TrainConfig refit;
  /// Chains and decodes are processed in chunks of this many candidates.
  std::size_t chunk = 256;

  void validate(std::size_t objectives) const;
};

/// One member of the shifting dataset. `y` is in internal units: raw oracle
/// values with minimised objectives negated.
struct ShiftRecord {
  data::TokenSequence x;
  std::vector<double> y;
  Tensor z0;  // [d]
  /// Substream key of the candidate that produced x: iteration << 32 | index.
  std::uint64_t key = 0;
};

struct Candidate {
  data::TokenSequence x;
  Tensor z0;
  std::uint64_t key = 0;
  std::size_t donor = 0;
  std::vector<double> target;  // internal units
};

struct ProposeStats {
  std::size_t dropped = 0;
  /// max over candidates and shifted objectives of target - (max D.y + delta).
  double max_target_excess = -std::numeric_limits<double>::infinity();
};

struct ShiftState {
  std::size_t t = 0;
  std::vector<ShiftRecord> data;  // best first
  std::uint64_t queries = 0;
  model::ModelParams params;
  OptimState optim;
};

struct IterationMetrics {
  std::size_t t = 0;
  std::vector<double> top_y;  // ranking scores of the best three records
  double mean_top_n = 0;
  std::uint64_t queries_total = 0;
  double constraint_satisfaction_rate = 1.0;
  std::size_t proposed = 0;
  std::size_t dropped_chains = 0;
  std::size_t oracle_failures = 0;
  std::size_t rank_dominance_violations = 0;
  double max_target_excess = 0;
  /// Raw oracle values of every candidate annotated this iteration.
  std::vector<std::vector<double>> annotated_raw;
  double wall_time_s = 0;
};

nlohmann::ordered_json to_json(const IterationMetrics& m);

class ShiftEngine {
 public:
  ShiftEngine(const model::LptModel& model, ShiftConfig cfg, oracle::OracleHandle& oracle,
              const data::Vocabulary& vocab, data::Normalizer normalizer, RngBank& rngs);

  const ShiftConfig& config() const { return cfg_; }

  /// Annotates every seed sequence with the oracle, keeps the top n, and
  /// gives each a z0 drawn from p(z0 | x, y) by fresh Langevin chains.
  ShiftState initialize(const std::vector<data::TokenSequence>& seed, model::ModelParams params,
                        OptimState optim);

  /// m candidates: donor uniform over D, target donor.y + delta, warm-start
  /// Langevin on p(z0 | y) from donor.z0, then x ~ p(x | U(z0)). Candidates
  /// whose chain diverges are logged and dropped.
  std::vector<Candidate> propose(const ShiftState& state, std::size_t iteration,
                                 ProposeStats* stats = nullptr);

  /// Scores candidates; failures are dropped but still counted as queries.
  std::vector<ShiftRecord> annotate(std::vector<Candidate> candidates, ShiftState& state,
                                    std::vector<std::vector<double>>* raw = nullptr,
                                    std::size_t* failures = nullptr);

  /// Top n of current ∪ fresh under the ranking order; current members are
  /// older and win ties.
  std::vector<ShiftRecord> select_top_n(const std::vector<ShiftRecord>& current,
                                        const std::vector<ShiftRecord>& fresh) const;

  /// propose -> annotate -> select -> refit.
  IterationMetrics shift_iteration(ShiftState& state);

  /// Runs the configured number of iterations, reporting after each.
  std::vector<IterationMetrics> run(ShiftState& state,
                                    const std::function<void(const IterationMetrics&, const ShiftState&)>&
                                        on_iteration = {});

  std::vector<double> to_raw(std::span<const double> internal) const;
  std::vector<double> to_internal(std::span<const double> raw) const;
  double score(const ShiftRecord& r) const { return cfg_.rank.score(r.y); }

 private:
  Tensor normalized(const std::vector<std::vector<double>>& ys) const;
  void refit(ShiftState& state);

  const model::LptModel& model_;
  ShiftConfig cfg_;
  oracle::OracleHandle& oracle_;
  const data::Vocabulary& vocab_;
  data::Normalizer normalizer_;
  RngBank& rngs_;
};

/// Default increment: `fraction` of each objective's standard deviation over `ys`.
std::vector<double> delta_from_spread(const std::vector<std::vector<double>>& ys, double fraction);

}  // namespace lpt::sgds
