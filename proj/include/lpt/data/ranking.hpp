#pragma once

#include <span>
#include <string>
#include <vector>

#include "lpt/data/corpus.hpp"

namespace lpt::data {

enum class Comparison { ge, gt, le, lt };

/// y[index] <op> threshold, evaluated on internal (maximisation) values.
struct Constraint {
  std::size_t index = 0;
  Comparison op = Comparison::ge;
  double threshold = 0;

  bool satisfied(std::span<const double> y) const;
};

/// Total order used for every ranking: constraint satisfiers before violators,
/// then higher weighted score, then earlier insertion. Insertion positions are
/// distinct, so the order is total without looking at tokens.
struct RankSpec {
  /// Per-objective weights of the score; objectives with weight 0 only matter
  /// through constraints. Empty means weight 1 on every objective.
  std::vector<double> weights;
  std::vector<Constraint> constraints;

  double score(std::span<const double> y) const;
  bool satisfied(std::span<const double> y) const;
};

/// Indices of `ys` sorted best-first. Position in `ys` is the insertion order.
std::vector<std::size_t> rank_order(std::span<const std::vector<double>> ys,
                                    const RankSpec& spec);

/// The best `n` annotated records of `corpus`, best first. Throws DataError
/// when fewer than `n` records carry properties.
std::vector<PropertyRecord> top_n_seed(const Corpus& corpus, std::size_t n, const RankSpec& spec);

}  // namespace lpt::data
