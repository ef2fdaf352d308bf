#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace lpt::oracle {

enum class Direction { maximize, minimize };
Direction parse_direction(const std::string& s);
const char* to_string(Direction d);

/// Scores for one sequence, or the reason there are none.
struct ScoreResult {
  std::vector<double> values;
  std::string error;

  bool ok() const { return error.empty(); }
};

/// A black-box scorer over decoded token strings. Each call returns one
/// result per input, in input order, with `score_names().size()` values each.
class Oracle {
 public:
  virtual ~Oracle() = default;
  virtual std::vector<std::string> score_names() const = 0;
  virtual std::vector<ScoreResult> score_batch(const std::vector<std::string>& seqs) = 0;
};

/// Builds an oracle from a registry spec: a synthetic spec such as
/// "token_count:A", or "external:<score>" served by `external_command`.
std::unique_ptr<Oracle> make_oracle(const std::string& spec, const std::string& external_command,
                                    double timeout_s);

/// The run's scoring front end. Concatenates the outputs of its oracles into
/// one y vector per sequence, counts every scored sequence as one query
/// whether or not it succeeded, and never substitutes values for failures.
class OracleHandle {
 public:
  OracleHandle(std::vector<std::string> specs, std::vector<Direction> directions,
               const std::string& external_command = "", double timeout_s = 30.0);

  std::size_t objectives() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<Direction>& directions() const { return directions_; }
  std::uint64_t queries() const { return queries_; }

  /// Raw-unit scores. A sequence fails if any of its oracles fails or returns
  /// a non-finite value.
  std::vector<ScoreResult> score(const std::vector<std::string>& seqs);

 private:
  std::vector<std::unique_ptr<Oracle>> oracles_;
  std::vector<std::string> names_;
  std::vector<Direction> directions_;
  std::uint64_t queries_ = 0;
};

}  // namespace lpt::oracle
