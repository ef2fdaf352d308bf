#pragma once

#include <string>
#include <sys/types.h>

#include "lpt/oracle/oracle.hpp"

namespace lpt::oracle {

/// Client for an oracle process speaking newline-delimited JSON on its
/// standard streams. Each request is one line
///   {"id": k, "seq": "...", "scores": ["name", ...]}
/// answered by {"id": k, "values": [...]} or {"id": k, "error": "..."}.
/// Responses may arrive in any order and are matched by id. Lines that do not
/// parse or carry an unknown id are logged and skipped.
class ExternalOracle : public Oracle {
 public:
  /// Spawns `command` through /bin/sh. Throws OracleError if that fails.
  ExternalOracle(std::string command, std::vector<std::string> scores, double timeout_s = 30.0);
  ~ExternalOracle() override;
  ExternalOracle(const ExternalOracle&) = delete;
  ExternalOracle& operator=(const ExternalOracle&) = delete;

  std::vector<std::string> score_names() const override { return scores_; }

  /// Outstanding requests fail with "timeout" when the process makes no
  /// progress for `timeout_s` seconds, and with an exit message if it dies.
  /// Either way the process is stopped and respawned on the next call.
  std::vector<ScoreResult> score_batch(const std::vector<std::string>& seqs) override;

 private:
  void spawn();
  void shutdown();

  std::string command_;
  std::vector<std::string> scores_;
  double timeout_s_;
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string pending_;  // partial line read from the child
  long long next_id_ = 0;
  bool alive_ = false;
};

}  // namespace lpt::oracle
