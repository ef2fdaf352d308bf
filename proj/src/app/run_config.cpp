#include "lpt/app/run_config.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <sstream>

#include "lpt/app/toml_lite.hpp"
#include "lpt/data/vocab.hpp"
#include "lpt/errors.hpp"

namespace lpt::app {

using nlohmann::ordered_json;
namespace fs = std::filesystem;
using data::Comparison;

namespace {

struct Field {
  std::string key;
  std::function<void(const ordered_json&, const std::string&)> set;
  std::function<ordered_json()> get;
  std::string note;
};

std::size_t as_size(const ordered_json& v, const std::string& where) {
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw ConfigError(where + " must be a non-negative integer");
  return v.get<std::size_t>();
}

double as_double(const ordered_json& v, const std::string& where) {
  if (!v.is_number()) throw ConfigError(where + " must be a number");
  return v.get<double>();
}

std::string as_string(const ordered_json& v, const std::string& where) {
  if (!v.is_string()) throw ConfigError(where + " must be a string");
  return v.get<std::string>();
}

template <class T>
std::vector<T> as_list(const ordered_json& v, const std::string& where,
                       T (*conv)(const ordered_json&, const std::string&)) {
  if (!v.is_array()) throw ConfigError(where + " must be an array");
  std::vector<T> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(conv(v[i], where + "[" + std::to_string(i) + "]"));
  return out;
}

Field size_field(const std::string& key, std::size_t& ref, const std::string& note = "") {
  return {key, [&ref](const ordered_json& v, const std::string& w) { ref = as_size(v, w); },
          [&ref] { return ordered_json(ref); }, note};
}
Field double_field(const std::string& key, double& ref, const std::string& note = "") {
  return {key, [&ref](const ordered_json& v, const std::string& w) { ref = as_double(v, w); },
          [&ref] { return ordered_json(ref); }, note};
}
Field string_field(const std::string& key, std::string& ref, const std::string& note = "") {
  return {key, [&ref](const ordered_json& v, const std::string& w) { ref = as_string(v, w); },
          [&ref] { return ordered_json(ref); }, note};
}
Field doubles_field(const std::string& key, std::vector<double>& ref, const std::string& note = "") {
  return {key, [&ref](const ordered_json& v, const std::string& w) { ref = as_list<double>(v, w, as_double); },
          [&ref] {
            ordered_json a = ordered_json::array();
            for (double d : ref) a.push_back(d);
            return a;
          },
          note};
}
Field strings_field(const std::string& key, std::vector<std::string>& ref, const std::string& note = "") {
  return {key,
          [&ref](const ordered_json& v, const std::string& w) { ref = as_list<std::string>(v, w, as_string); },
          [&ref] {
            ordered_json a = ordered_json::array();
            for (const auto& s : ref) a.push_back(s);
            return a;
          },
          note};
}
template <class E>
Field enum_field(const std::string& key, E& ref, E (*parse)(const std::string&), const char* (*show)(E),
                 const std::string& note) {
  return {key, [&ref, parse](const ordered_json& v, const std::string& w) { ref = parse(as_string(v, w)); },
          [&ref, show] { return ordered_json(show(ref)); }, note};
}

using Sections = std::vector<std::pair<std::string, std::vector<Field>>>;

// Keys of every section bound to `cfg`. The first entry holds the top-level keys.
Sections bind(RunConfig& c) {
  auto& m = c.model;
  auto& t = c.training;
  auto& l = c.langevin;
  auto& s = c.shift;
  auto& o = c.oracle;
  auto& d = c.data;
  Sections out;
  out.push_back({"", {{"seed",
                       [&c](const ordered_json& v, const std::string& w) { c.seed = as_size(v, w); },
                       [&c] { return ordered_json(c.seed); }, "base seed of every random stream"},
                      string_field("output_dir", c.output_dir, "run directory")}});
  out.push_back({"data",
                 {string_field("corpus", d.corpus, "one whitespace-tokenised sequence per line"),
                  string_field("properties", d.properties, "JSONL {\"seq_index\", \"y\"}; empty: annotate with the oracle"),
                  string_field("seed_corpus", d.seed_corpus, "SGDS starting set; empty: corpus"),
                  string_field("vocab", d.vocab, "token list; empty: tokens of corpus"),
                  string_field("heldout", d.heldout, "eval corpus; empty: corpus"),
                  string_field("heldout_properties", d.heldout_properties)}});
  out.push_back(
      {"model",
       {size_field("latent_tokens", m.latent_tokens, "k latent vectors"),
        size_field("latent_channels", m.latent_channels, "c channels per latent vector"),
        size_field("n_layers", m.n_layers),
        size_field("embed_dim", m.embed_dim),
        size_field("n_heads", m.n_heads),
        size_field("ffn_dim", m.ffn_dim),
        size_field("max_len", m.max_len, "content tokens per sequence, EOS included when it fits"),
        size_field("unet_base_channels", m.unet_base_channels),
        size_field("regression_hidden", m.regression_hidden),
        doubles_field("sigma2", m.sigma2, "regression variance per objective"),
        enum_field("transport", m.transport, model::parse_transport, model::to_string, "unet | identity"),
        enum_field("regression_head", m.regression_head, model::parse_regression_head, model::to_string,
                   "mlp | linear"),
        enum_field("cross_attention", m.cross_attention, model::parse_cross_attention, model::to_string,
                   "every_block | single")}});
  out.push_back({"training",
                 {size_field("pretrain_epochs", t.pretrain_epochs),
                  double_field("pretrain_lr_max", t.pretrain_lr_max),
                  double_field("pretrain_lr_min", t.pretrain_lr_min),
                  size_field("finetune_epochs", t.finetune_epochs),
                  double_field("finetune_lr_max", t.finetune_lr_max),
                  double_field("finetune_lr_min", t.finetune_lr_min),
                  size_field("batch_size", t.batch_size),
                  double_field("weight_decay", t.weight_decay),
                  double_field("clip_norm", t.clip_norm, "global gradient norm; 0 disables"),
                  double_field("eta_prior", t.eta_prior, "lr scale of the prior transport"),
                  double_field("eta_generator", t.eta_generator, "lr scale of the generator"),
                  double_field("eta_regression", t.eta_regression, "lr scale of the regression head"),
                  double_field("adam_beta1", t.adam_beta1),
                  double_field("adam_beta2", t.adam_beta2),
                  double_field("adam_eps", t.adam_eps)}});
  out.push_back({"langevin",
                 {size_field("pretrain_steps", l.pretrain_steps),
                  double_field("pretrain_step_size", l.pretrain_step_size),
                  size_field("finetune_steps", l.finetune_steps),
                  double_field("finetune_step_size", l.finetune_step_size),
                  size_field("sample_steps", l.sample_steps, "z0 ~ p(z0|y*) for the sample command"),
                  double_field("sample_step_size", l.sample_step_size)}});
  out.push_back({"shift",
                 {size_field("iterations", s.iterations),
                  size_field("proposals", s.proposals, "m candidates per iteration"),
                  size_field("retain", s.retain, "n records kept"),
                  doubles_field("delta_y", s.delta_y, "raw units per objective; empty: delta_fraction * seed std"),
                  double_field("delta_fraction", s.delta_fraction),
                  size_field("warm_start_steps", s.warm_start_steps),
                  double_field("warm_start_step_size", s.warm_start_step_size),
                  size_field("refit_epochs", s.refit_epochs),
                  doubles_field("rank_weights", s.rank_weights,
                                "per objective; empty: 1 on unconstrained, 0 on constrained"),
                  strings_field("constraints", s.constraints, "\"SCORE OP THRESHOLD\", raw units"),
                  size_field("chunk", s.chunk, "chains processed together")}});
  out.push_back({"oracle",
                 {strings_field("scores", o.scores, "token_count:T, weighted_composition:A=w,..., "
                                                    "longest_run:T, pattern_fraction:T1,T2, external:NAME"),
                  strings_field("directions", o.directions, "maximize | minimize per score"),
                  string_field("external_command", o.external_command, "shell command serving external scores"),
                  double_field("timeout_s", o.timeout_s, "per request")}});
  return out;
}

std::string resolve_path(const std::string& p, const std::string& base) {
  if (p.empty() || base.empty()) return p;
  fs::path path(p);
  if (path.is_absolute()) return p;
  return fs::weakly_canonical(fs::path(base) / path).string();
}

Comparison parse_op(const std::string& op) {
  if (op == ">=") return Comparison::ge;
  if (op == ">") return Comparison::gt;
  if (op == "<=") return Comparison::le;
  if (op == "<") return Comparison::lt;
  throw ConfigError("constraint operator must be one of >= > <= <, got '" + op + "'");
}

}  // namespace

std::size_t RunConfig::objectives() const {
  return oracle.scores.empty() ? model.sigma2.size() : oracle.scores.size();
}

std::vector<oracle::Direction> RunConfig::directions() const {
  std::vector<oracle::Direction> out;
  if (oracle.directions.empty()) return std::vector<oracle::Direction>(objectives(), oracle::Direction::maximize);
  for (const auto& d : oracle.directions) out.push_back(oracle::parse_direction(d));
  return out;
}

data::Constraint parse_constraint(const std::string& text, const std::vector<std::string>& names,
                                  const std::vector<oracle::Direction>& directions) {
  std::istringstream in(text);
  std::vector<std::string> parts;
  for (std::string w; in >> w;) parts.push_back(w);
  if (parts.size() < 3) throw ConfigError("constraint '" + text + "' must read SCORE OP THRESHOLD");
  std::string name = parts[0];
  for (std::size_t i = 1; i + 2 < parts.size(); ++i) name += " " + parts[i];
  auto op = parse_op(parts[parts.size() - 2]);
  double threshold;
  try {
    std::size_t used = 0;
    threshold = std::stod(parts.back(), &used);
    if (used != parts.back().size()) throw std::invalid_argument("");
  } catch (const std::exception&) {
    throw ConfigError("constraint '" + text + "' has a non-numeric threshold");
  }
  if (!std::isfinite(threshold)) throw ConfigError("constraint '" + text + "' threshold must be finite");
  std::size_t index = names.size();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) index = i;
  if (index == names.size()) throw ConfigError("constraint '" + text + "' names unknown score '" + name + "'");
  data::Constraint c{index, op, threshold};
  // Internal values of minimised scores are negated, which flips the comparison.
  if (directions[index] == oracle::Direction::minimize) {
    c.threshold = -threshold;
    switch (op) {
      case Comparison::ge: c.op = Comparison::le; break;
      case Comparison::gt: c.op = Comparison::lt; break;
      case Comparison::le: c.op = Comparison::ge; break;
      case Comparison::lt: c.op = Comparison::gt; break;
    }
  }
  return c;
}

void RunConfig::validate() const {
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  auto m = model;
  m.vocab_size = std::max<std::size_t>(m.vocab_size, data::kFirstToken + 1);
  m.validate();
  const std::size_t M = objectives();
  if (model.sigma2.size() != M)
    throw ConfigError("model.sigma2 has " + std::to_string(model.sigma2.size()) + " entries for " +
                      std::to_string(M) + " objectives");
  if (!oracle.directions.empty() && oracle.directions.size() != oracle.scores.size())
    throw ConfigError("oracle.directions needs one entry per oracle score");
  const auto dirs = directions();
  if (!(oracle.timeout_s > 0)) throw ConfigError("oracle.timeout_s must be > 0");
  pretrain_config().validate();
  finetune_config().validate();
  if (!(langevin.sample_step_size >= 0)) throw ConfigError("langevin.sample_step_size must be >= 0");
  if (!shift.delta_y.empty() && shift.delta_y.size() != M)
    throw ConfigError("shift.delta_y needs one entry per objective");
  if (!shift.rank_weights.empty() && shift.rank_weights.size() != M)
    throw ConfigError("shift.rank_weights needs one entry per objective");
  for (double w : shift.rank_weights)
    if (!std::isfinite(w)) throw ConfigError("shift.rank_weights must be finite");
  if (!shift.constraints.empty() && oracle.scores.empty())
    throw ConfigError("shift.constraints need oracle.scores");
  for (const auto& c : shift.constraints) parse_constraint(c, oracle.scores, dirs);
  if (shift.proposals < 1 || shift.retain < 1) throw ConfigError("shift.proposals and shift.retain must be >= 1");
  if (shift.chunk < 1) throw ConfigError("shift.chunk must be >= 1");
  if (!(shift.delta_fraction >= 0) || !std::isfinite(shift.delta_fraction))
    throw ConfigError("shift.delta_fraction must be finite and >= 0");
  for (double dlt : shift.delta_y)
    if (!std::isfinite(dlt) || dlt < 0) throw ConfigError("shift.delta_y entries must be finite and >= 0");
}

namespace {

train::TrainConfig base_train(const TrainingSection& t) {
  train::TrainConfig c;
  c.batch_size = t.batch_size;
  c.rates = {t.eta_prior, t.eta_generator, t.eta_regression};
  c.adam = {t.adam_beta1, t.adam_beta2, t.adam_eps, t.weight_decay};
  c.clip_norm = t.clip_norm;
  return c;
}

}  // namespace

train::TrainConfig RunConfig::pretrain_config() const {
  auto c = base_train(training);
  c.epochs = training.pretrain_epochs;
  c.lr_max = training.pretrain_lr_max;
  c.lr_min = training.pretrain_lr_min;
  c.rates.gamma = 0;
  c.langevin = {langevin.pretrain_steps, langevin.pretrain_step_size};
  return c;
}

train::TrainConfig RunConfig::finetune_config() const {
  auto c = base_train(training);
  c.epochs = training.finetune_epochs;
  c.lr_max = training.finetune_lr_max;
  c.lr_min = training.finetune_lr_min;
  c.langevin = {langevin.finetune_steps, langevin.finetune_step_size};
  return c;
}

sgds::ShiftConfig RunConfig::shift_config() const {
  const auto dirs = directions();
  const std::size_t M = objectives();
  sgds::ShiftConfig c;
  c.iterations = shift.iterations;
  c.proposals = shift.proposals;
  c.retain = shift.retain;
  c.delta_y = shift.delta_y;  // increments are direction-free magnitudes
  c.delta_fraction = shift.delta_fraction;
  c.warm_start = {shift.warm_start_steps, shift.warm_start_step_size};
  c.chunk = shift.chunk;
  c.refit = finetune_config();
  c.refit.epochs = shift.refit_epochs;
  std::vector<char> constrained(M, 0);
  for (const auto& text : shift.constraints) {
    c.rank.constraints.push_back(parse_constraint(text, oracle.scores, dirs));
    constrained[c.rank.constraints.back().index] = 1;
  }
  if (!shift.rank_weights.empty()) {
    c.rank.weights = shift.rank_weights;
  } else if (!c.rank.constraints.empty()) {
    c.rank.weights.assign(M, 1.0);
    for (std::size_t j = 0; j < M; ++j)
      if (constrained[j]) c.rank.weights[j] = 0.0;
  }
  return c;
}

RunConfig run_config_from_toml(const ordered_json& doc, const std::string& base_dir) {
  RunConfig cfg;
  auto sections = bind(cfg);
  for (const auto& [key, value] : doc.items()) {
    if (value.is_object()) {
      auto it = std::find_if(sections.begin() + 1, sections.end(),
                             [&](const auto& s) { return s.first == key; });
      if (it == sections.end()) throw ConfigError("unknown config section [" + key + "]");
      for (const auto& [k, v] : value.items()) {
        auto f = std::find_if(it->second.begin(), it->second.end(), [&](const Field& x) { return x.key == k; });
        if (f == it->second.end()) throw ConfigError("unknown config key " + key + "." + k);
        f->set(v, key + "." + k);
      }
    } else {
      auto& top = sections.front().second;
      auto f = std::find_if(top.begin(), top.end(), [&](const Field& x) { return x.key == key; });
      if (f == top.end()) throw ConfigError("unknown config key " + key);
      f->set(value, key);
    }
  }
  if (cfg.model.sigma2.size() == 1 && cfg.oracle.scores.size() > 1)
    cfg.model.sigma2.assign(cfg.oracle.scores.size(), cfg.model.sigma2.front());
  if (cfg.oracle.directions.empty() && !cfg.oracle.scores.empty())
    cfg.oracle.directions.assign(cfg.oracle.scores.size(), "maximize");
  for (auto* p : {&cfg.data.corpus, &cfg.data.properties, &cfg.data.seed_corpus, &cfg.data.vocab,
                  &cfg.data.heldout, &cfg.data.heldout_properties, &cfg.output_dir})
    *p = resolve_path(*p, base_dir);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  auto doc = toml::parse_file(path);
  auto base = fs::absolute(fs::path(path)).parent_path().string();
  return run_config_from_toml(doc, base);
}

std::string to_toml(const RunConfig& cfg) {
  RunConfig copy = cfg;
  auto sections = bind(copy);
  std::string out;
  for (const auto& [name, fields] : sections) {
    if (!name.empty()) out += "\n[" + name + "]\n";
    for (const auto& f : fields) {
      out += f.key + " = " + toml::format_value(f.get());
      if (!f.note.empty()) out += "  # " + f.note;
      out += "\n";
    }
  }
  return out;
}

}  // namespace lpt::app
