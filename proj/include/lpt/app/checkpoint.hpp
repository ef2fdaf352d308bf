#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "lpt/data/normalizer.hpp"
#include "lpt/data/vocab.hpp"
#include "lpt/model/config.hpp"
#include "lpt/model/params.hpp"
#include "lpt/numerics/optim.hpp"

namespace lpt::app {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to resume or reuse a model. The file is the magic
/// "LPTCKPT\0", a little-endian u32 version, a u64 header length, a JSON
/// header, then raw tensor data: parameters, followed by the first and
/// second optimizer moments when present.
struct Checkpoint {
  std::string stage;  // pretrain | finetune | sgds
  model::ModelConfig model;
  data::Vocabulary vocab;
  model::ModelParams params;
  std::optional<data::Normalizer> normalizer;
  /// Internal-unit property directions are not stored; reports convert with the run config.
  std::uint64_t rng_seed = 0;
  std::map<std::string, std::uint64_t> rng_counters;
  OptimState optim;
  std::size_t epochs_completed = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);

/// Throws CheckpointError on a missing, truncated or inconsistent file.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace lpt::app
