#include "lpt/sgds/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "lpt/errors.hpp"
#include "lpt/util/log.hpp"

namespace lpt::sgds {

using oracle::Direction;

void ShiftConfig::validate(std::size_t objectives) const {
  if (proposals < 1) throw ConfigError("sgds.proposals must be >= 1");
  if (retain < 1) throw ConfigError("sgds.retain must be >= 1");
  if (chunk < 1) throw ConfigError("sgds chunk size must be >= 1");
  if (!(delta_fraction >= 0) || !std::isfinite(delta_fraction))
    throw ConfigError("sgds.delta_fraction must be finite and >= 0");
  if (!delta_y.empty() && delta_y.size() != objectives)
    throw ConfigError("sgds.delta_y needs one entry per objective (" +
                      std::to_string(objectives) + ")");
  for (double d : delta_y)
    if (!std::isfinite(d) || d < 0) throw ConfigError("sgds.delta_y entries must be finite and >= 0");
  if (!(warm_start.step_size >= 0)) throw ConfigError("sgds Langevin step size must be >= 0");
  if (!rank.weights.empty() && rank.weights.size() != objectives)
    throw ConfigError("sgds rank weights need one entry per objective");
  for (const auto& c : rank.constraints)
    if (c.index >= objectives) throw ConfigError("constraint refers to a missing objective");
  refit.validate();
}

nlohmann::ordered_json to_json(const IterationMetrics& m) {
  return {{"t", m.t},
          {"top_y", m.top_y},
          {"mean_top_n", m.mean_top_n},
          {"queries_total", m.queries_total},
          {"constraint_satisfaction_rate", m.constraint_satisfaction_rate},
          {"proposed", m.proposed},
          {"dropped_chains", m.dropped_chains},
          {"oracle_failures", m.oracle_failures},
          {"rank_dominance_violations", m.rank_dominance_violations},
          {"max_target_excess", m.max_target_excess}};
}

std::vector<double> delta_from_spread(const std::vector<std::vector<double>>& ys, double fraction) {
  if (ys.empty()) throw DataError("cannot derive delta_y from an empty seed set");
  auto n = data::Normalizer::fit(ys);
  std::vector<double> d(n.objectives());
  for (std::size_t j = 0; j < d.size(); ++j) d[j] = fraction * n.std[j];
  return d;
}

ShiftEngine::ShiftEngine(const model::LptModel& model, ShiftConfig cfg,
                         oracle::OracleHandle& oracle, const data::Vocabulary& vocab,
                         data::Normalizer normalizer, RngBank& rngs)
    : model_(model),
      cfg_(std::move(cfg)),
      oracle_(oracle),
      vocab_(vocab),
      normalizer_(std::move(normalizer)),
      rngs_(rngs) {
  const std::size_t M = oracle_.objectives();
  if (model_.config().objectives() != M)
    throw ConfigError("model has " + std::to_string(model_.config().objectives()) +
                      " objectives but the oracle provides " + std::to_string(M));
  if (normalizer_.objectives() != M) throw ConfigError("normalizer does not match the objectives");
  cfg_.validate(M);
}

std::vector<double> ShiftEngine::to_internal(std::span<const double> raw) const {
  std::vector<double> y(raw.begin(), raw.end());
  for (std::size_t j = 0; j < y.size(); ++j)
    if (oracle_.directions()[j] == Direction::minimize) y[j] = -y[j];
  return y;
}

std::vector<double> ShiftEngine::to_raw(std::span<const double> internal) const {
  return to_internal(internal);  // negation is its own inverse
}

Tensor ShiftEngine::normalized(const std::vector<std::vector<double>>& ys) const {
  const std::size_t M = normalizer_.objectives();
  Tensor t(Shape{ys.size(), M});
  auto d = t.mutable_data();
  for (std::size_t i = 0; i < ys.size(); ++i) {
    auto n = normalizer_.normalize(ys[i]);
    for (std::size_t j = 0; j < M; ++j) d[i * M + j] = static_cast<Scalar>(n[j]);
  }
  return t;
}

namespace {

std::uint64_t candidate_key(std::size_t iteration, std::size_t index) {
  return (static_cast<std::uint64_t>(iteration) << 32) | static_cast<std::uint64_t>(index);
}

Tensor gather_rows(const std::vector<Tensor>& rows) {
  const std::size_t d = rows.front().numel();
  Tensor t(Shape{rows.size(), d});
  auto out = t.mutable_data();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i].data().begin(), rows[i].data().end(), out.begin() + i * d);
  return t;
}

Tensor row(const Tensor& t, std::size_t r) {
  const std::size_t d = t.dim(1);
  return Tensor(Shape{d}, std::vector<Scalar>(t.data().begin() + r * d, t.data().begin() + (r + 1) * d));
}

}  // namespace

ShiftState ShiftEngine::initialize(const std::vector<data::TokenSequence>& seed,
                                   model::ModelParams params, OptimState optim) {
  model_.check_params(params);
  ShiftState state;
  state.params = std::move(params);
  state.optim = std::move(optim);

  std::vector<Candidate> cands(seed.size());
  for (std::size_t i = 0; i < seed.size(); ++i) {
    cands[i].x = seed[i];
    cands[i].key = candidate_key(0, i);
  }
  auto annotated = annotate(std::move(cands), state);
  if (annotated.size() < cfg_.retain)
    throw DataError("seed set has " + std::to_string(annotated.size()) +
                    " annotated sequences, fewer than retain = " + std::to_string(cfg_.retain));
  if (cfg_.delta_y.empty()) {
    std::vector<std::vector<double>> ys;
    for (const auto& r : annotated) ys.push_back(r.y);
    cfg_.delta_y = delta_from_spread(ys, cfg_.delta_fraction);
    for (const auto& c : cfg_.rank.constraints) cfg_.delta_y[c.index] = 0;
  }
  state.data = select_top_n({}, annotated);

  // Seed latents come from p(z0 | x, y) under the fine-tuned model.
  const std::size_t d = model_.config().latent_dim();
  auto pv = model::param_vars(state.params, false);
  for (std::size_t start = 0; start < state.data.size(); start += cfg_.chunk) {
    const std::size_t end = std::min(state.data.size(), start + cfg_.chunk);
    std::vector<data::TokenSequence> xs;
    std::vector<std::vector<double>> ys;
    std::vector<Tensor> inits;
    std::vector<RngStream> noise;
    for (std::size_t i = start; i < end; ++i) {
      const auto& r = state.data[i];
      xs.push_back(r.x);
      ys.push_back(r.y);
      RngStream init = rngs_.derive(StreamId::init, r.key);
      inits.push_back(sampler::fresh_init(1, d, init).reshaped(Shape{d}));
      noise.push_back(rngs_.derive(StreamId::langevin, r.key));
    }
    Tensor y = normalized(ys);
    auto target = sampler::posterior_target(model_, pv, xs, &y);
    auto post = sampler::sample_posterior(gather_rows(inits), target, cfg_.refit.langevin, noise);
    if (post.failed_count() > 0)
      throw NumericError("posterior sampling of seed latents diverged: " + post.failures.front());
    for (std::size_t i = start; i < end; ++i) state.data[i].z0 = row(post.state.z0, i - start);
  }
  return state;
}

std::vector<Candidate> ShiftEngine::propose(const ShiftState& state, std::size_t iteration,
                                            ProposeStats* stats) {
  if (state.data.empty()) throw DataError("cannot propose from an empty dataset");
  if (cfg_.delta_y.empty()) throw ConfigError("delta_y unresolved; call initialize first");
  const std::size_t M = normalizer_.objectives();
  std::vector<double> best(M, -std::numeric_limits<double>::infinity());
  for (const auto& r : state.data)
    for (std::size_t j = 0; j < M; ++j) best[j] = std::max(best[j], r.y[j]);

  ProposeStats local;
  auto& st = stats ? *stats : local;
  st = ProposeStats{};

  std::vector<Candidate> drafts(cfg_.proposals);
  auto& shuffle = rngs_.stream(StreamId::shuffle);
  for (std::size_t i = 0; i < drafts.size(); ++i) {
    auto& c = drafts[i];
    c.key = candidate_key(iteration, i);
    c.donor = static_cast<std::size_t>(shuffle.below(state.data.size()));
    c.target = state.data[c.donor].y;
    for (std::size_t j = 0; j < M; ++j) {
      if (cfg_.delta_y[j] == 0) continue;
      c.target[j] += cfg_.delta_y[j];
      st.max_target_excess = std::max(st.max_target_excess, c.target[j] - (best[j] + cfg_.delta_y[j]));
    }
  }

  auto pv = model::param_vars(state.params, false);
  std::vector<Candidate> out;
  out.reserve(drafts.size());
  for (std::size_t start = 0; start < drafts.size(); start += cfg_.chunk) {
    const std::size_t end = std::min(drafts.size(), start + cfg_.chunk);
    std::vector<Tensor> inits;
    std::vector<std::vector<double>> targets;
    std::vector<RngStream> noise;
    for (std::size_t i = start; i < end; ++i) {
      inits.push_back(state.data[drafts[i].donor].z0);
      targets.push_back(drafts[i].target);
      noise.push_back(rngs_.derive(StreamId::langevin, drafts[i].key));
    }
    Tensor y = normalized(targets);
    auto target = sampler::posterior_target(model_, pv, {}, &y);
    auto post = sampler::sample_posterior(gather_rows(inits), target, cfg_.warm_start, noise);

    for (const auto& f : post.failures)
      log::warn("iteration " + std::to_string(iteration) + ", candidates from " +
                std::to_string(start) + ": dropped " + f);
    std::vector<std::size_t> kept;
    for (std::size_t i = start; i < end; ++i) {
      if (post.failed[i - start])
        ++st.dropped;
      else
        kept.push_back(i);
    }
    if (kept.empty()) continue;
    std::vector<Tensor> z0s;
    std::vector<RngStream> sampling;
    for (auto i : kept) {
      z0s.push_back(row(post.state.z0, i - start));
      sampling.push_back(rngs_.derive(StreamId::sampling, drafts[i].key));
    }
    Tensor z0 = gather_rows(z0s);
    Tensor z = model_.prior_transform(ad::Var::constant(z0), pv).value();
    auto xs = model_.sample(z, pv, sampling);
    for (std::size_t r = 0; r < kept.size(); ++r) {
      auto& c = drafts[kept[r]];
      c.x = std::move(xs[r]);
      c.z0 = std::move(z0s[r]);
      out.push_back(std::move(c));
    }
  }
  return out;
}

std::vector<ShiftRecord> ShiftEngine::annotate(std::vector<Candidate> candidates, ShiftState& state,
                                               std::vector<std::vector<double>>* raw,
                                               std::size_t* failures) {
  std::vector<std::string> text;
  text.reserve(candidates.size());
  for (const auto& c : candidates) text.push_back(vocab_.decode(c.x));
  const auto before = oracle_.queries();
  auto results = oracle_.score(text);
  state.queries += oracle_.queries() - before;

  std::vector<ShiftRecord> out;
  std::size_t failed = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (!results[i].ok()) {
      ++failed;
      log::warn("oracle failed on '" + text[i] + "': " + results[i].error);
      continue;
    }
    if (raw) raw->push_back(results[i].values);
    out.push_back({std::move(candidates[i].x), to_internal(results[i].values),
                   std::move(candidates[i].z0), candidates[i].key});
  }
  if (failures) *failures = failed;
  return out;
}

std::vector<ShiftRecord> ShiftEngine::select_top_n(const std::vector<ShiftRecord>& current,
                                                   const std::vector<ShiftRecord>& fresh) const {
  std::vector<const ShiftRecord*> pool;
  for (const auto& r : current) pool.push_back(&r);
  for (const auto& r : fresh) pool.push_back(&r);
  std::vector<std::vector<double>> ys;
  for (auto* r : pool) ys.push_back(r->y);
  auto order = data::rank_order(ys, cfg_.rank);
  const std::size_t n = std::min(cfg_.retain, order.size());
  std::vector<ShiftRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(*pool[order[i]]);
  return out;
}

void ShiftEngine::refit(ShiftState& state) {
  if (cfg_.refit.epochs == 0) return;
  std::vector<data::TokenSequence> xs;
  std::vector<std::vector<double>> ys;
  for (const auto& r : state.data) {
    xs.push_back(r.x);
    ys.push_back(normalizer_.normalize(r.y));
  }
  train::finetune(model_, xs, ys, state.params, state.optim, cfg_.refit, rngs_,
                  [&](const train::EpochReport& e) {
                    log::debug("refit t=" + std::to_string(state.t + 1) + " " + to_json(e).dump());
                    return true;
                  });
}

IterationMetrics ShiftEngine::shift_iteration(ShiftState& state) {
  const auto t0 = std::chrono::steady_clock::now();
  IterationMetrics m;
  m.t = state.t + 1;

  ProposeStats ps;
  auto candidates = propose(state, m.t, &ps);
  m.proposed = cfg_.proposals;
  m.dropped_chains = ps.dropped;
  m.max_target_excess = ps.max_target_excess;

  auto fresh = annotate(std::move(candidates), state, &m.annotated_raw, &m.oracle_failures);
  auto next = select_top_n(state.data, fresh);

  // Nothing left out may outrank the worst member kept.
  const auto outranks = [&](const ShiftRecord& a, const ShiftRecord& b) {
    const bool sa = cfg_.rank.satisfied(a.y), sb = cfg_.rank.satisfied(b.y);
    if (sa != sb) return sa;
    return score(a) > score(b);
  };
  std::vector<std::uint64_t> kept_keys;
  for (const auto& r : next) kept_keys.push_back(r.key);
  std::sort(kept_keys.begin(), kept_keys.end());
  if (!next.empty()) {
    const auto& worst = next.back();
    const auto check = [&](const std::vector<ShiftRecord>& pool) {
      for (const auto& r : pool)
        if (!std::binary_search(kept_keys.begin(), kept_keys.end(), r.key) && outranks(r, worst))
          ++m.rank_dominance_violations;
    };
    check(state.data);
    check(fresh);
  }
  // Position-wise: the i-th best may only improve.
  for (std::size_t i = 0; i < std::min(next.size(), state.data.size()); ++i)
    if (outranks(state.data[i], next[i])) ++m.rank_dominance_violations;

  state.data = std::move(next);
  refit(state);
  state.t = m.t;

  for (std::size_t i = 0; i < std::min<std::size_t>(3, state.data.size()); ++i)
    m.top_y.push_back(score(state.data[i]));
  std::size_t satisfied = 0;
  double total = 0;
  for (const auto& r : state.data) {
    total += score(r);
    satisfied += cfg_.rank.satisfied(r.y);
  }
  m.mean_top_n = total / static_cast<double>(state.data.size());
  m.constraint_satisfaction_rate =
      static_cast<double>(satisfied) / static_cast<double>(state.data.size());
  m.queries_total = state.queries;
  m.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  log::info("sgds t=" + std::to_string(m.t) + " best=" +
            (m.top_y.empty() ? std::string("-") : std::to_string(m.top_y[0])) +
            " mean_top_n=" + std::to_string(m.mean_top_n) +
            " queries=" + std::to_string(m.queries_total));
  return m;
}

std::vector<IterationMetrics> ShiftEngine::run(
    ShiftState& state,
    const std::function<void(const IterationMetrics&, const ShiftState&)>& on_iteration) {
  std::vector<IterationMetrics> all;
  while (state.t < cfg_.iterations) {
    all.push_back(shift_iteration(state));
    if (on_iteration) on_iteration(all.back(), state);
  }
  return all;
}

}  // namespace lpt::sgds
