#pragma once

#include <map>
#include <set>
#include <string>

#include "lpt/oracle/oracle.hpp"

namespace lpt::oracle {

/// Pure functions of the token string with closed-form optima under a cap of
/// L content tokens:
///   token_count:T            number of T tokens; max L (all T).
///   weighted_composition:A=w,B=v,...  sum of per-token weights (unlisted tokens
///                            weigh 0); max L * max(0, largest weight).
///   longest_run:T            longest run of consecutive T tokens; min 0.
///   pattern_fraction:T1,T2   fraction of tokens in {T1, T2}, 0 for the empty
///                            sequence; max 1.
class SyntheticOracle : public Oracle {
 public:
  explicit SyntheticOracle(const std::string& spec);

  std::vector<std::string> score_names() const override { return {spec_}; }
  std::vector<ScoreResult> score_batch(const std::vector<std::string>& seqs) override;

  double evaluate(const std::string& seq) const;

 private:
  enum class Kind { token_count, weighted_composition, longest_run, pattern_fraction };
  std::string spec_;
  Kind kind_;
  std::string token_;
  std::map<std::string, double> weights_;
  std::set<std::string> pattern_;
};

}  // namespace lpt::oracle
