#pragma once

#include <string>
#include <vector>

#include "lpt/model/config.hpp"
#include "lpt/numerics/rng.hpp"
#include "lpt/numerics/tensor.hpp"

namespace lpt::model {

/// alpha: prior transport, beta: sequence generator, gamma: regression head.
enum class ParamGroup { alpha, beta, gamma };
const char* to_string(ParamGroup g);

enum class InitKind { normal, zeros, ones };

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamGroup group;
  InitKind init;
};

/// Every parameter tensor of the model, in a fixed order determined by the config.
std::vector<ParamSpec> param_layout(const ModelConfig& cfg);

std::size_t parameter_count(const ModelConfig& cfg);
std::size_t parameter_count(const ModelConfig& cfg, ParamGroup group);

/// Parameter tensors aligned with param_layout().
struct ModelParams {
  std::vector<Tensor> tensors;
};

/// Weights from a normal with std 0.02 truncated at two standard deviations;
/// biases zero, layer-norm gains one, final regression layer and output
/// projection zero.
ModelParams init_params(const ModelConfig& cfg, RngStream& rng);

}  // namespace lpt::model
