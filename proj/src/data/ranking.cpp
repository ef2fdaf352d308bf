#include "lpt/data/ranking.hpp"

#include <algorithm>
#include <numeric>

#include "lpt/errors.hpp"

namespace lpt::data {

bool Constraint::satisfied(std::span<const double> y) const {
  if (index >= y.size()) throw DataError("constraint refers to objective " + std::to_string(index));
  const double v = y[index];
  switch (op) {
    case Comparison::ge: return v >= threshold;
    case Comparison::gt: return v > threshold;
    case Comparison::le: return v <= threshold;
    case Comparison::lt: return v < threshold;
  }
  return false;
}

double RankSpec::score(std::span<const double> y) const {
  if (weights.empty()) return std::accumulate(y.begin(), y.end(), 0.0);
  if (weights.size() != y.size())
    throw DataError("rank weights have " + std::to_string(weights.size()) + " entries, y has " +
                    std::to_string(y.size()));
  double s = 0;
  for (std::size_t j = 0; j < y.size(); ++j) s += weights[j] * y[j];
  return s;
}

bool RankSpec::satisfied(std::span<const double> y) const {
  return std::all_of(constraints.begin(), constraints.end(),
                     [&](const Constraint& c) { return c.satisfied(y); });
}

std::vector<std::size_t> rank_order(std::span<const std::vector<double>> ys,
                                    const RankSpec& spec) {
  std::vector<double> scores(ys.size());
  std::vector<char> ok(ys.size());
  for (std::size_t i = 0; i < ys.size(); ++i) {
    scores[i] = spec.score(ys[i]);
    ok[i] = spec.satisfied(ys[i]);
  }
  std::vector<std::size_t> order(ys.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (ok[a] != ok[b]) return ok[a] > ok[b];
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  return order;
}

std::vector<PropertyRecord> top_n_seed(const Corpus& corpus, std::size_t n, const RankSpec& spec) {
  std::vector<std::size_t> source;
  std::vector<std::vector<double>> ys;
  for (std::size_t i = 0; i < corpus.records.size(); ++i)
    if (corpus.records[i].y) {
      source.push_back(i);
      ys.push_back(*corpus.records[i].y);
    }
  if (ys.size() < n)
    throw DataError("top-n selection needs " + std::to_string(n) + " annotated records, corpus has " +
                    std::to_string(ys.size()));
  const auto order = rank_order(ys, spec);
  std::vector<PropertyRecord> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(corpus.records[source[order[i]]]);
  return out;
}

}  // namespace lpt::data
