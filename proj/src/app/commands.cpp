#include "lpt/app/commands.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "lpt/app/checkpoint.hpp"
#include "lpt/app/io.hpp"
#include "lpt/app/run_config.hpp"
#include "lpt/data/corpus.hpp"
#include "lpt/errors.hpp"
#include "lpt/sgds/engine.hpp"
#include "lpt/util/log.hpp"

namespace lpt::app {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

int report_error(const std::exception& e) {
  int code = kExitFailure;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DataError*>(&e))
    code = kExitConfig;
  else if (dynamic_cast<const CheckpointError*>(&e))
    code = kExitCheckpoint;
  else if (dynamic_cast<const OracleError*>(&e))
    code = kExitOracle;
  else if (dynamic_cast<const NumericError*>(&e))
    code = kExitNumeric;
  std::cerr << "lpt: error: " << e.what() << "\n";
  return code;
}

namespace {

struct RunDir {
  fs::path root;

  std::string checkpoint(const std::string& stage) const {
    return (root / "checkpoints" / (stage + ".ckpt")).string();
  }
  std::string metrics(const std::string& name) const { return (root / "metrics" / name).string(); }
  std::string report(const std::string& name) const { return (root / "reports" / name).string(); }

  void create(const RunConfig& cfg) const {
    for (const char* sub : {"checkpoints", "metrics", "reports"}) fs::create_directories(root / sub);
    atomic_write((root / "config.toml").string(), to_toml(cfg));
  }
};

std::vector<double> to_internal(std::vector<double> y, const std::vector<oracle::Direction>& dirs) {
  for (std::size_t j = 0; j < y.size(); ++j)
    if (dirs[j] == oracle::Direction::minimize) y[j] = -y[j];
  return y;
}

data::Vocabulary resolve_vocab(const RunConfig& cfg) {
  if (cfg.data.vocab.empty()) return data::Vocabulary::build(cfg.data.corpus);
  std::vector<std::string> tokens;
  for (const auto& line : data::read_corpus_lines(cfg.data.vocab))
    for (auto& t : data::split_tokens(line)) tokens.push_back(t);
  return data::Vocabulary(tokens);
}

std::vector<data::TokenSequence> sequences(const data::Corpus& c) {
  std::vector<data::TokenSequence> xs;
  for (const auto& r : c.records) xs.push_back(r.x);
  return xs;
}

/// Config [model] must describe the checkpoint's model exactly.
void check_model(const RunConfig& cfg, const Checkpoint& ckpt) {
  auto want = cfg.model;
  want.vocab_size = ckpt.model.vocab_size;
  if (!(want == ckpt.model))
    throw CheckpointError("checkpoint model does not match the [model] section of the config");
}

Checkpoint require_checkpoint(const CommandOptions& opts) {
  if (opts.checkpoint.empty()) throw ConfigError(opts.command + " needs --checkpoint");
  return load_checkpoint(opts.checkpoint);
}

std::unique_ptr<oracle::OracleHandle> make_handle(const RunConfig& cfg) {
  if (cfg.oracle.scores.empty()) return nullptr;
  return std::make_unique<oracle::OracleHandle>(cfg.oracle.scores, cfg.directions(),
                                                cfg.oracle.external_command, cfg.oracle.timeout_s);
}

/// Oracle-annotates `xs`; records whose scoring fails are dropped with a warning.
void annotate_with_oracle(oracle::OracleHandle& h, const data::Vocabulary& vocab,
                          std::vector<data::TokenSequence>& xs, std::vector<std::vector<double>>& raw) {
  std::vector<std::string> text;
  for (const auto& x : xs) text.push_back(vocab.decode(x));
  auto res = h.score(text);
  std::vector<data::TokenSequence> kept;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!res[i].ok()) {
      log::warn("oracle failed on '" + text[i] + "': " + res[i].error);
      continue;
    }
    kept.push_back(xs[i]);
    raw.push_back(res[i].values);
  }
  xs = std::move(kept);
}

/// Sequences and raw-unit properties from a corpus plus property file, or
/// from the oracle when no property file is configured.
void load_annotated(const RunConfig& cfg, const std::string& corpus, const std::string& properties,
                    const data::Vocabulary& vocab, std::size_t max_len,
                    std::vector<data::TokenSequence>& xs, std::vector<std::vector<double>>& raw) {
  const std::size_t M = cfg.objectives();
  if (!properties.empty()) {
    auto c = data::load_corpus(corpus, vocab, max_len, properties, M);
    for (const auto& r : c.records) {
      if (!r.y) continue;
      xs.push_back(r.x);
      raw.push_back(*r.y);
    }
    if (xs.empty()) throw DataError("no annotated records in " + properties);
    return;
  }
  if (cfg.oracle.scores.empty())
    throw ConfigError("properties are needed: set data.properties or oracle.scores");
  xs = sequences(data::load_corpus(corpus, vocab, max_len));
  auto h = make_handle(cfg);
  annotate_with_oracle(*h, vocab, xs, raw);
  log::info("annotated " + std::to_string(xs.size()) + " sequences with the oracle (" +
            std::to_string(h->queries()) + " queries)");
  if (xs.empty()) throw OracleError("the oracle failed on every sequence");
}

/// Metrics lines from an earlier run of the same stage, kept on resume.
std::vector<ordered_json> prior_lines(const std::string& path, std::size_t keep) {
  std::vector<ordered_json> rows;
  if (keep == 0 || !fs::exists(path)) return rows;
  std::istringstream in(read_text(path));
  for (std::string line; std::getline(in, line) && rows.size() < keep;)
    if (!line.empty()) rows.push_back(ordered_json::parse(line));
  return rows;
}

struct StageRun {
  const RunConfig& cfg;
  const RunDir& dir;
  std::string stage;
  Checkpoint ckpt;
  RngBank& bank;
  std::size_t prior_epochs;
  std::vector<ordered_json> metrics, timing;

  bool on_epoch(const train::EpochReport& r, const model::ModelParams& params, const OptimState& optim) {
    auto row = train::to_json(r);
    row["epoch"] = prior_epochs + r.epoch;
    metrics.push_back(row);
    timing.push_back({{"epoch", prior_epochs + r.epoch}, {"wall_time_s", r.wall_time_s}});
    ckpt.params = params;
    ckpt.optim = optim;
    ckpt.epochs_completed = prior_epochs + r.epoch + 1;
    ckpt.rng_counters = bank.counters();
    save_checkpoint(dir.checkpoint(stage), ckpt);
    atomic_write(dir.metrics(stage + ".jsonl"), to_jsonl(metrics));
    atomic_write(dir.metrics(stage + "_timing.jsonl"), to_jsonl(timing));
    log::info(stage + " epoch " + std::to_string(prior_epochs + r.epoch) + " " + row.dump());
    return true;
  }
};

int cmd_pretrain(const RunConfig& cfg, const CommandOptions& opts, std::ostream& out) {
  if (cfg.data.corpus.empty()) throw ConfigError("data.corpus is required");
  std::optional<Checkpoint> resume;
  if (!opts.checkpoint.empty()) resume = load_checkpoint(opts.checkpoint);
  data::Vocabulary vocab = resume ? resume->vocab : resolve_vocab(cfg);
  auto mcfg = cfg.model;
  mcfg.vocab_size = vocab.size();
  if (resume) check_model(cfg, *resume);
  auto xs = sequences(data::load_corpus(cfg.data.corpus, vocab, mcfg.max_len));
  if (xs.empty()) throw DataError("corpus " + cfg.data.corpus + " is empty");
  model::LptModel model(mcfg);

  RngBank bank(cfg.seed);
  Checkpoint ckpt;
  std::size_t done = 0;
  if (resume && resume->stage == "pretrain") {
    ckpt = std::move(*resume);
    done = ckpt.epochs_completed;
    if (ckpt.rng_seed == cfg.seed) bank.restore_counters(ckpt.rng_counters);
  } else {
    ckpt.model = mcfg;
    ckpt.vocab = vocab;
    ckpt.params = resume ? resume->params : model.init(bank.stream(StreamId::init));
  }
  ckpt.stage = "pretrain";
  ckpt.rng_seed = cfg.seed;

  const RunDir dir{cfg.output_dir};
  dir.create(cfg);
  auto tc = cfg.pretrain_config();
  tc.epochs = cfg.training.pretrain_epochs > done ? cfg.training.pretrain_epochs - done : 0;
  StageRun run{cfg, dir, "pretrain", ckpt, bank, done,
               prior_lines(dir.metrics("pretrain.jsonl"), done), prior_lines(dir.metrics("pretrain_timing.jsonl"), done)};
  auto params = ckpt.params;
  auto optim = ckpt.optim;
  train::pretrain(model, xs, params, optim, tc, bank,
                  [&](const train::EpochReport& r) { return run.on_epoch(r, params, optim); });
  run.ckpt.params = params;
  run.ckpt.optim = optim;
  run.ckpt.rng_counters = bank.counters();
  save_checkpoint(dir.checkpoint("pretrain"), run.ckpt);
  atomic_write(dir.metrics("pretrain.jsonl"), to_jsonl(run.metrics));
  atomic_write(dir.metrics("pretrain_timing.jsonl"), to_jsonl(run.timing));
  out << "pretrain: " << run.ckpt.epochs_completed << " epochs, " << model::parameter_count(mcfg)
      << " parameters, checkpoint " << dir.checkpoint("pretrain") << "\n";
  return kExitOk;
}

int cmd_finetune(const RunConfig& cfg, const CommandOptions& opts, std::ostream& out) {
  if (cfg.data.corpus.empty()) throw ConfigError("data.corpus is required");
  auto ckpt = require_checkpoint(opts);
  check_model(cfg, ckpt);
  const auto dirs = cfg.directions();
  std::vector<data::TokenSequence> xs;
  std::vector<std::vector<double>> raw;
  load_annotated(cfg, cfg.data.corpus, cfg.data.properties, ckpt.vocab, ckpt.model.max_len, xs, raw);
  std::vector<std::vector<double>> ys;
  for (auto& y : raw) ys.push_back(to_internal(y, dirs));

  RngBank bank(cfg.seed);
  std::size_t done = 0;
  if (ckpt.stage == "finetune") {
    done = ckpt.epochs_completed;
    if (ckpt.rng_seed == cfg.seed) bank.restore_counters(ckpt.rng_counters);
  } else {
    ckpt.optim = OptimState{};
    ckpt.epochs_completed = 0;
  }
  // Statistics are fitted once, at the first fine-tune, and kept afterwards.
  if (!ckpt.normalizer) ckpt.normalizer = data::Normalizer::fit(ys);
  if (ckpt.normalizer->objectives() != cfg.objectives())
    throw CheckpointError("checkpoint normalizer has a different objective count");
  std::vector<std::vector<double>> yn;
  for (const auto& y : ys) yn.push_back(ckpt.normalizer->normalize(y));
  ckpt.stage = "finetune";
  ckpt.rng_seed = cfg.seed;

  model::LptModel model(ckpt.model);
  const RunDir dir{cfg.output_dir};
  dir.create(cfg);
  auto tc = cfg.finetune_config();
  tc.epochs = cfg.training.finetune_epochs > done ? cfg.training.finetune_epochs - done : 0;
  StageRun run{cfg, dir, "finetune", ckpt, bank, done,
               prior_lines(dir.metrics("finetune.jsonl"), done), prior_lines(dir.metrics("finetune_timing.jsonl"), done)};
  auto params = ckpt.params;
  auto optim = ckpt.optim;
  train::finetune(model, xs, yn, params, optim, tc, bank,
                  [&](const train::EpochReport& r) { return run.on_epoch(r, params, optim); });
  run.ckpt.params = params;
  run.ckpt.optim = optim;
  run.ckpt.rng_counters = bank.counters();
  save_checkpoint(dir.checkpoint("finetune"), run.ckpt);
  atomic_write(dir.metrics("finetune.jsonl"), to_jsonl(run.metrics));
  atomic_write(dir.metrics("finetune_timing.jsonl"), to_jsonl(run.timing));
  out << "finetune: " << run.ckpt.epochs_completed << " epochs on " << xs.size()
      << " records, checkpoint " << dir.checkpoint("finetune") << "\n";
  return kExitOk;
}

ordered_json histogram(std::size_t t, const std::vector<std::string>& names,
                       const std::vector<std::vector<double>>& raw) {
  constexpr std::size_t kBins = 20;
  ordered_json objs = ordered_json::array();
  for (std::size_t j = 0; j < names.size(); ++j) {
    std::vector<double> v;
    for (const auto& y : raw) v.push_back(y[j]);
    ordered_json o{{"score", names[j]}, {"values", v}};
    if (!v.empty()) {
      const double lo = *std::min_element(v.begin(), v.end());
      const double hi = *std::max_element(v.begin(), v.end());
      std::vector<std::size_t> counts(kBins, 0);
      const double w = hi > lo ? (hi - lo) / kBins : 1.0;
      for (double x : v) counts[std::min(kBins - 1, static_cast<std::size_t>((x - lo) / w))]++;
      o["bin_lo"] = lo;
      o["bin_width"] = w;
      o["counts"] = counts;
    }
    objs.push_back(o);
  }
  return {{"t", t}, {"n", raw.size()}, {"objectives", objs}};
}

int cmd_sgds(const RunConfig& cfg, const CommandOptions& opts, std::ostream& out) {
  if (cfg.oracle.scores.empty()) throw ConfigError("sgds needs oracle.scores");
  auto ckpt = require_checkpoint(opts);
  check_model(cfg, ckpt);
  if (!ckpt.normalizer) throw CheckpointError("sgds needs a fine-tuned checkpoint");
  if (ckpt.normalizer->objectives() != cfg.objectives())
    throw CheckpointError("checkpoint normalizer has a different objective count");
  const std::string seed_path = cfg.data.seed_corpus.empty() ? cfg.data.corpus : cfg.data.seed_corpus;
  if (seed_path.empty()) throw ConfigError("sgds needs data.seed_corpus or data.corpus");
  auto seed = sequences(data::load_corpus(seed_path, ckpt.vocab, ckpt.model.max_len));
  auto scfg = cfg.shift_config();
  scfg.validate(cfg.objectives());
  auto handle = make_handle(cfg);
  model::LptModel model(ckpt.model);
  RngBank bank(cfg.seed);
  sgds::ShiftEngine engine(model, scfg, *handle, ckpt.vocab, *ckpt.normalizer, bank);

  const RunDir dir{cfg.output_dir};
  dir.create(cfg);
  auto state = engine.initialize(seed, ckpt.params, OptimState{});
  {
    std::vector<std::vector<double>> raw;
    for (const auto& r : state.data) raw.push_back(engine.to_raw(r.y));
    atomic_write(dir.report("hist_t0.json"), histogram(0, handle->names(), raw).dump() + "\n");
  }
  ordered_json resolved{{"delta_y", engine.config().delta_y},
                        {"seed_annotations", state.queries},
                        {"retain", scfg.retain},
                        {"proposals", scfg.proposals}};
  std::vector<ordered_json> metrics, timing;
  engine.run(state, [&](const sgds::IterationMetrics& m, const sgds::ShiftState&) {
    metrics.push_back(sgds::to_json(m));
    timing.push_back({{"t", m.t}, {"wall_time_s", m.wall_time_s}});
    atomic_write(dir.metrics("sgds.jsonl"), to_jsonl(metrics));
    atomic_write(dir.metrics("sgds_timing.jsonl"), to_jsonl(timing));
    atomic_write(dir.report("hist_t" + std::to_string(m.t) + ".json"),
                 histogram(m.t, handle->names(), m.annotated_raw).dump() + "\n");
  });
  atomic_write(dir.metrics("sgds.jsonl"), to_jsonl(metrics));
  atomic_write(dir.metrics("sgds_timing.jsonl"), to_jsonl(timing));

  std::vector<ordered_json> final_rows;
  for (std::size_t i = 0; i < state.data.size(); ++i) {
    const auto& r = state.data[i];
    final_rows.push_back({{"rank", i + 1},
                          {"seq", ckpt.vocab.decode(r.x)},
                          {"y", engine.to_raw(r.y)},
                          {"score", engine.score(r)},
                          {"satisfies_constraints", scfg.rank.satisfied(r.y)},
                          {"origin_iteration", r.key >> 32}});
  }
  atomic_write(dir.report("final.jsonl"), to_jsonl(final_rows));
  resolved["iterations"] = state.t;
  resolved["queries_total"] = state.queries;
  resolved["scores"] = handle->names();
  atomic_write(dir.report("sgds_summary.json"), resolved.dump(2) + "\n");

  Checkpoint outc = ckpt;
  outc.stage = "sgds";
  outc.params = state.params;
  outc.optim = state.optim;
  outc.rng_seed = cfg.seed;
  outc.rng_counters = bank.counters();
  outc.epochs_completed = 0;
  save_checkpoint(dir.checkpoint("sgds"), outc);
  out << "sgds: " << state.t << " iterations, " << state.queries << " oracle queries, best "
      << (final_rows.empty() ? ordered_json() : final_rows.front()["y"]).dump() << "\n";
  return kExitOk;
}

/// Posterior z0 under `target` from per-item fresh starts, then decoded samples.
struct Draws {
  std::vector<data::TokenSequence> xs;
  Tensor z;
  std::vector<char> failed;
};

Draws draw(const model::LptModel& model, std::span<const ad::Var> pv, RngBank& bank, std::size_t count,
           const Tensor* y, const sampler::LangevinConfig& lc) {
  const std::size_t d = model.config().latent_dim();
  std::vector<RngStream> noise, sampling;
  Tensor init(Shape{count, d});
  for (std::size_t i = 0; i < count; ++i) {
    RngStream s = bank.derive(StreamId::init, i);
    auto row = sampler::fresh_init(1, d, s);
    std::copy(row.data().begin(), row.data().end(), init.mutable_data().begin() + i * d);
    noise.push_back(bank.derive(StreamId::langevin, i));
    sampling.push_back(bank.derive(StreamId::sampling, i));
  }
  Draws out;
  Tensor z0 = init;
  out.failed.assign(count, 0);
  if (y) {
    auto post = sampler::sample_posterior(init, sampler::posterior_target(model, pv, {}, y), lc, noise);
    z0 = post.state.z0;
    out.failed = post.failed;
    for (const auto& f : post.failures) log::warn("sample chain dropped: " + f);
  }
  out.z = model.prior_transform(ad::Var::constant(z0), pv).value();
  out.xs = model.sample(out.z, pv, sampling);
  return out;
}

int cmd_sample(const RunConfig& cfg, const CommandOptions& opts, std::ostream& out) {
  auto ckpt = require_checkpoint(opts);
  check_model(cfg, ckpt);
  const auto dirs = cfg.directions();
  const std::size_t M = ckpt.model.objectives();
  if (!opts.target.empty() && opts.target.size() != M)
    throw ConfigError("--target needs " + std::to_string(M) + " values");
  if (!opts.target.empty() && !ckpt.normalizer)
    throw CheckpointError("conditional sampling needs a fine-tuned checkpoint");
  auto handle = make_handle(cfg);
  model::LptModel model(ckpt.model);
  RngBank bank(cfg.seed);
  const RunDir dir{cfg.output_dir};
  dir.create(cfg);
  std::vector<ordered_json> rows;
  if (opts.count > 0) {
    auto pv = model::param_vars(ckpt.params, false);
    std::optional<Tensor> y;
    if (!opts.target.empty()) {
      auto n = ckpt.normalizer->normalize(to_internal(opts.target, dirs));
      y = Tensor(Shape{opts.count, M});
      for (std::size_t i = 0; i < opts.count; ++i)
        for (std::size_t j = 0; j < M; ++j) y->mutable_data()[i * M + j] = static_cast<Scalar>(n[j]);
    }
    auto draws = draw(model, pv, bank, opts.count, y ? &*y : nullptr,
                      {cfg.langevin.sample_steps, cfg.langevin.sample_step_size});
    Tensor pred = model.predict(ad::Var::constant(draws.z), pv).value();
    std::vector<std::string> text;
    for (const auto& x : draws.xs) text.push_back(ckpt.vocab.decode(x));
    std::vector<oracle::ScoreResult> scored;
    if (handle) scored = handle->score(text);
    for (std::size_t i = 0; i < opts.count; ++i) {
      if (draws.failed[i]) continue;
      ordered_json row{{"index", i}, {"seq", text[i]}};
      if (ckpt.normalizer) {
        std::vector<double> p(M);
        for (std::size_t j = 0; j < M; ++j) p[j] = pred[i * M + j];
        row["y_pred"] = to_internal(ckpt.normalizer->denormalize(p), dirs);
      }
      if (handle) {
        if (scored[i].ok())
          row["y_oracle"] = scored[i].values;
        else
          row["oracle_error"] = scored[i].error;
      }
      rows.push_back(row);
    }
  }
  const std::string body = to_jsonl(rows);
  atomic_write(dir.report("samples.jsonl"), body);
  out << body;
  return kExitOk;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] / n;
    mb += b[i] / n;
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return saa > 0 && sbb > 0 ? sab / std::sqrt(saa * sbb) : 0.0;
}

int cmd_eval(const RunConfig& cfg, const CommandOptions& opts, std::ostream& out) {
  auto ckpt = require_checkpoint(opts);
  check_model(cfg, ckpt);
  const std::string corpus = cfg.data.heldout.empty() ? cfg.data.corpus : cfg.data.heldout;
  if (corpus.empty()) throw ConfigError("eval needs data.heldout or data.corpus");
  const std::string props = cfg.data.heldout.empty() ? cfg.data.properties : cfg.data.heldout_properties;
  std::vector<data::TokenSequence> xs;
  std::vector<std::vector<double>> raw;
  const bool with_y = ckpt.normalizer && (!props.empty() || !cfg.oracle.scores.empty());
  if (with_y)
    load_annotated(cfg, corpus, props, ckpt.vocab, ckpt.model.max_len, xs, raw);
  else
    xs = sequences(data::load_corpus(corpus, ckpt.vocab, ckpt.model.max_len));
  if (xs.empty()) throw DataError("eval corpus is empty");

  model::LptModel model(ckpt.model);
  RngBank bank(cfg.seed);
  const RunDir dir{cfg.output_dir};
  dir.create(cfg);
  auto pv = model::param_vars(ckpt.params, false);
  const std::size_t d = model.config().latent_dim();
  const std::size_t M = ckpt.model.objectives();
  const auto dirs = cfg.directions();
  const sampler::LangevinConfig lc{cfg.langevin.finetune_steps, cfg.langevin.finetune_step_size};
  double nll = 0;
  std::size_t tokens = 0, failed = 0;
  std::vector<std::vector<double>> pred(M), truth(M);
  const std::size_t chunk = std::max<std::size_t>(1, cfg.training.batch_size);
  for (std::size_t start = 0; start < xs.size(); start += chunk) {
    const std::size_t end = std::min(xs.size(), start + chunk);
    std::span<const data::TokenSequence> batch(xs.data() + start, end - start);
    Tensor init(Shape{batch.size(), d});
    std::vector<RngStream> noise;
    for (std::size_t i = start; i < end; ++i) {
      RngStream s = bank.derive(StreamId::init, i);
      auto row = sampler::fresh_init(1, d, s);
      std::copy(row.data().begin(), row.data().end(), init.mutable_data().begin() + (i - start) * d);
      noise.push_back(bank.derive(StreamId::langevin, i));
    }
    // z0 ~ p(z0 | x): predictions never see the held-out y.
    auto post = sampler::sample_posterior(init, sampler::posterior_target(model, pv, batch, nullptr), lc, noise);
    ad::Var z = model.prior_transform(ad::Var::constant(post.state.z0), pv);
    Tensor lp = model.seq_log_prob(z, batch, pv).value();
    Tensor yp = model.predict(z, pv).value();
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (post.failed[i]) {
        ++failed;
        continue;
      }
      nll -= lp[i];
      tokens += batch[i].size();
      if (!with_y) continue;
      std::vector<double> p(M);
      for (std::size_t j = 0; j < M; ++j) p[j] = yp[i * M + j];
      auto y = to_internal(ckpt.normalizer->denormalize(p), dirs);
      for (std::size_t j = 0; j < M; ++j) {
        pred[j].push_back(y[j]);
        truth[j].push_back(raw[start + i][j]);
      }
    }
  }
  ordered_json rep{{"sequences", xs.size()},
                   {"failed_chains", failed},
                   {"seq_nll_per_token", tokens ? nll / static_cast<double>(tokens) : 0.0}};
  if (with_y) {
    ordered_json objs = ordered_json::array();
    for (std::size_t j = 0; j < M; ++j) {
      double se = 0;
      for (std::size_t i = 0; i < pred[j].size(); ++i) se += (pred[j][i] - truth[j][i]) * (pred[j][i] - truth[j][i]);
      objs.push_back({{"pearson", pearson(pred[j], truth[j])},
                      {"rmse", pred[j].empty() ? 0.0 : std::sqrt(se / static_cast<double>(pred[j].size()))}});
    }
    rep["objectives"] = objs;
  }
  atomic_write(dir.report("eval.json"), rep.dump(2) + "\n");
  out << rep.dump() << "\n";
  return kExitOk;
}

}  // namespace

int run_command(const CommandOptions& opts, std::ostream& out) {
  RunConfig cfg = load_run_config(opts.config_path);
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.dry_run) {
    out << to_toml(cfg);
    return kExitOk;
  }
  if (opts.command == "pretrain") return cmd_pretrain(cfg, opts, out);
  if (opts.command == "finetune") return cmd_finetune(cfg, opts, out);
  if (opts.command == "sgds") return cmd_sgds(cfg, opts, out);
  if (opts.command == "sample") return cmd_sample(cfg, opts, out);
  if (opts.command == "eval") return cmd_eval(cfg, opts, out);
  throw ConfigError("unknown command '" + opts.command + "'");
}

}  // namespace lpt::app
