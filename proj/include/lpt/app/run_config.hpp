#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "lpt/model/config.hpp"
#include "lpt/oracle/oracle.hpp"
#include "lpt/sgds/engine.hpp"
#include "lpt/train/trainer.hpp"

namespace lpt::app {

struct DataSection {
  std::string corpus;       // one whitespace-tokenised sequence per line
  std::string properties;   // JSONL {"seq_index", "y"} for fine-tuning
  std::string seed_corpus;  // SGDS starting set; defaults to corpus
  std::string vocab;        // optional token list, one per line; else built from corpus
  std::string heldout;      // optional corpus for eval
  std::string heldout_properties;
};

struct TrainingSection {
  std::size_t pretrain_epochs = 30;
  double pretrain_lr_max = 7.5e-4;
  double pretrain_lr_min = 7.5e-5;
  std::size_t finetune_epochs = 10;
  double finetune_lr_max = 3e-4;
  double finetune_lr_min = 7.5e-5;
  std::size_t batch_size = 256;
  double weight_decay = 0.1;
  double clip_norm = 1.0;
  double eta_prior = 1.0;
  double eta_generator = 1.0;
  double eta_regression = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

struct LangevinSection {
  std::size_t pretrain_steps = 15;
  double pretrain_step_size = 0.1;
  std::size_t finetune_steps = 15;
  double finetune_step_size = 0.1;
  /// z0 ~ p(z0 | y*) for the sample command.
  std::size_t sample_steps = 15;
  double sample_step_size = 0.1;
};

struct ShiftSection {
  std::size_t iterations = 25;
  std::size_t proposals = 2500;
  std::size_t retain = 1000;
  std::vector<double> delta_y;  // raw units; empty -> delta_fraction * seed std
  double delta_fraction = 0.05;
  std::size_t warm_start_steps = 2;
  double warm_start_step_size = 0.1;
  std::size_t refit_epochs = 10;
  std::vector<double> rank_weights;
  /// "SCORE OP THRESHOLD" in raw units, OP one of >= > <= <.
  std::vector<std::string> constraints;
  std::size_t chunk = 256;
};

struct OracleSection {
  std::vector<std::string> scores;
  std::vector<std::string> directions;
  std::string external_command;
  double timeout_s = 30.0;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "run";
  DataSection data;
  model::ModelConfig model;
  TrainingSection training;
  LangevinSection langevin;
  ShiftSection shift;
  OracleSection oracle;

  /// Objective count: the number of oracle scores if any, else sigma2's length.
  std::size_t objectives() const;
  std::vector<oracle::Direction> directions() const;

  /// Everything except vocab_size, which comes from the vocabulary.
  void validate() const;

  train::TrainConfig pretrain_config() const;
  train::TrainConfig finetune_config() const;
  /// Rank weights, constraints and delta converted to internal units.
  sgds::ShiftConfig shift_config() const;
};

/// Parses a config; relative paths resolve against `base_dir`. Unknown
/// sections or keys are ConfigErrors. A single sigma2 entry is broadcast to
/// every oracle score.
RunConfig run_config_from_toml(const nlohmann::ordered_json& doc, const std::string& base_dir);
RunConfig load_run_config(const std::string& path);

/// The fully resolved config, every key present, in a form the loader reads back.
std::string to_toml(const RunConfig& cfg);

/// "SCORE OP THRESHOLD" against the score names.
data::Constraint parse_constraint(const std::string& text, const std::vector<std::string>& names,
                                  const std::vector<oracle::Direction>& directions);

}  // namespace lpt::app
