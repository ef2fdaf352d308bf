#include "lpt/oracle/oracle.hpp"

#include <cmath>

#include "lpt/errors.hpp"
#include "lpt/oracle/external.hpp"
#include "lpt/oracle/synthetic.hpp"

namespace lpt::oracle {

namespace {
constexpr const char* kExternal = "external:";
bool is_external(const std::string& spec) { return spec.rfind(kExternal, 0) == 0; }
}  // namespace

Direction parse_direction(const std::string& s) {
  if (s == "maximize") return Direction::maximize;
  if (s == "minimize") return Direction::minimize;
  throw ConfigError("oracle direction must be 'maximize' or 'minimize', got '" + s + "'");
}

const char* to_string(Direction d) { return d == Direction::maximize ? "maximize" : "minimize"; }

std::unique_ptr<Oracle> make_oracle(const std::string& spec, const std::string& external_command,
                                    double timeout_s) {
  if (is_external(spec)) {
    const std::string name = spec.substr(std::string(kExternal).size());
    if (name.empty()) throw ConfigError("oracle spec 'external:' needs a score name");
    if (external_command.empty())
      throw ConfigError("oracle spec '" + spec + "' needs oracle.external_command");
    return std::make_unique<ExternalOracle>(external_command, std::vector<std::string>{name}, timeout_s);
  }
  return std::make_unique<SyntheticOracle>(spec);
}

OracleHandle::OracleHandle(std::vector<std::string> specs, std::vector<Direction> directions,
                           const std::string& external_command, double timeout_s)
    : names_(std::move(specs)), directions_(std::move(directions)) {
  if (names_.empty()) throw ConfigError("oracle.scores must name at least one score");
  if (directions_.size() != names_.size())
    throw ConfigError("oracle.directions needs one entry per score");
  // All external scores share one process; synthetic scores get one oracle each.
  std::vector<std::string> external;
  for (const auto& spec : names_)
    if (is_external(spec)) {
      external.push_back(spec.substr(std::string(kExternal).size()));
      if (external.back().empty()) throw ConfigError("oracle spec 'external:' needs a score name");
    } else {
      oracles_.push_back(make_oracle(spec, "", timeout_s));
    }
  if (!external.empty()) {
    if (external_command.empty())
      throw ConfigError("external oracle scores need oracle.external_command");
    oracles_.push_back(std::make_unique<ExternalOracle>(external_command, external, timeout_s));
  }
}

std::vector<ScoreResult> OracleHandle::score(const std::vector<std::string>& seqs) {
  queries_ += seqs.size();
  std::vector<std::vector<ScoreResult>> parts;
  for (auto& o : oracles_) {
    parts.push_back(o->score_batch(seqs));
    if (parts.back().size() != seqs.size()) throw OracleError("oracle returned the wrong number of results");
  }
  std::vector<ScoreResult> out(seqs.size());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    // Reassemble in spec order: synthetic oracles in order, then external scores.
    std::size_t synth = 0, ext = 0;
    const std::size_t ext_part = oracles_.size() - 1;
    for (const auto& spec : names_) {
      const ScoreResult* r;
      std::size_t slot;
      if (is_external(spec)) {
        r = &parts[ext_part][i];
        slot = ext++;
      } else {
        r = &parts[synth++][i];
        slot = 0;
      }
      if (!r->ok()) {
        out[i] = {{}, r->error};
        break;
      }
      if (slot >= r->values.size() || !std::isfinite(r->values[slot])) {
        out[i] = {{}, "score '" + spec + "' missing or not finite"};
        break;
      }
      out[i].values.push_back(r->values[slot]);
    }
  }
  return out;
}

}  // namespace lpt::oracle
