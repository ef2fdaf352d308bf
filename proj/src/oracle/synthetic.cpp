#include "lpt/oracle/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "lpt/data/vocab.hpp"
#include "lpt/errors.hpp"

namespace lpt::oracle {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

SyntheticOracle::SyntheticOracle(const std::string& spec) : spec_(spec) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos || colon + 1 == spec.size())
    throw ConfigError("oracle spec '" + spec + "' needs the form kind:argument");
  const std::string kind = spec.substr(0, colon), arg = spec.substr(colon + 1);
  if (kind == "token_count" || kind == "longest_run") {
    kind_ = kind == "token_count" ? Kind::token_count : Kind::longest_run;
    token_ = arg;
  } else if (kind == "weighted_composition") {
    kind_ = Kind::weighted_composition;
    for (const auto& item : split(arg, ',')) {
      const auto eq = item.find('=');
      if (eq == std::string::npos || eq == 0)
        throw ConfigError("oracle spec '" + spec + "': expected TOKEN=weight entries");
      try {
        std::size_t used = 0;
        const double w = std::stod(item.substr(eq + 1), &used);
        if (used != item.size() - eq - 1 || !std::isfinite(w)) throw std::invalid_argument("w");
        weights_[item.substr(0, eq)] = w;
      } catch (const std::exception&) {
        throw ConfigError("oracle spec '" + spec + "': bad weight in '" + item + "'");
      }
    }
  } else if (kind == "pattern_fraction") {
    kind_ = Kind::pattern_fraction;
    for (const auto& t : split(arg, ',')) {
      if (t.empty()) throw ConfigError("oracle spec '" + spec + "': empty pattern token");
      pattern_.insert(t);
    }
  } else {
    throw ConfigError("unknown synthetic oracle '" + kind + "'");
  }
}

double SyntheticOracle::evaluate(const std::string& seq) const {
  const auto tokens = data::split_tokens(seq);
  switch (kind_) {
    case Kind::token_count:
      return static_cast<double>(std::count(tokens.begin(), tokens.end(), token_));
    case Kind::weighted_composition: {
      double s = 0;
      for (const auto& t : tokens)
        if (auto it = weights_.find(t); it != weights_.end()) s += it->second;
      return s;
    }
    case Kind::longest_run: {
      std::size_t best = 0, run = 0;
      for (const auto& t : tokens) {
        run = t == token_ ? run + 1 : 0;
        best = std::max(best, run);
      }
      return static_cast<double>(best);
    }
    case Kind::pattern_fraction: {
      if (tokens.empty()) return 0.0;
      std::size_t hits = 0;
      for (const auto& t : tokens) hits += pattern_.count(t);
      return static_cast<double>(hits) / static_cast<double>(tokens.size());
    }
  }
  return 0.0;
}

std::vector<ScoreResult> SyntheticOracle::score_batch(const std::vector<std::string>& seqs) {
  std::vector<ScoreResult> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back({{evaluate(s)}, {}});
  return out;
}

}  // namespace lpt::oracle
