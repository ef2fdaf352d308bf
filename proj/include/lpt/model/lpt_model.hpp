#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lpt/data/vocab.hpp"
#include "lpt/model/config.hpp"
#include "lpt/model/params.hpp"
#include "lpt/numerics/ops.hpp"
#include "lpt/numerics/rng.hpp"

namespace lpt::model {

using ad::Var;
using data::TokenSequence;

/// Parameters as graph leaves. With `requires_grad`, gradients flow into them.
std::vector<Var> param_vars(const ModelParams& params, bool requires_grad);

/// The latent prompt model: z0 ~ N(0, I_d), z = U_alpha(z0), a causal
/// Transformer p_beta(x|z) that cross-attends to z viewed as k tokens of c
/// channels, and a Gaussian regression head p_gamma(y|z).
///
/// All batched functions take z0 or z as [B, d]. Row b of every result
/// depends only on row b of the inputs, bit for bit, so batch composition
/// never changes a chain or a sample.
class LptModel {
 public:
  explicit LptModel(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<ParamSpec>& layout() const { return layout_; }
  std::size_t index(const std::string& name) const;

  ModelParams init(RngStream& rng) const { return init_params(cfg_, rng); }
  void check_params(const ModelParams& params) const;

  /// z = U_alpha(z0).
  Var prior_transform(const Var& z0, std::span<const Var> p) const;

  /// Next-token logits over the emittable ids for inputs [B, T] (row-major ids,
  /// starting with BOS). Returns [B, T, V-2]; output j is token id j+2.
  Var logits(const Var& z, std::span<const std::int32_t> inputs, std::size_t batch,
             std::size_t len, std::span<const Var> p) const;

  /// log p_beta(x_b | z_b) per row, including the EOS term when present -> [B].
  Var seq_log_prob(const Var& z, std::span<const TokenSequence> xs, std::span<const Var> p) const;

  /// s_gamma(z) -> [B, M].
  Var predict(const Var& z, std::span<const Var> p) const;

  /// sum_j log N(y_j; s_gamma_j(z), sigma2_j) per row -> [B]. `y` is [B, M].
  Var property_log_density(const Var& y, const Var& z, std::span<const Var> p) const;

  /// log N(z0; 0, I) + [x] log p(x|U(z0)) + [y] log p(y|U(z0)) per row -> [B].
  /// An empty `xs` or a null `y` drops that term.
  Var posterior_log_density(const Var& z0, std::span<const TokenSequence> xs, const Tensor* y,
                            std::span<const Var> p) const;

  /// Softmax distribution of the next token after each content prefix -> [B, V-2].
  Tensor next_token_probs(const Tensor& z, std::span<const TokenSequence> prefixes,
                          std::span<const Var> p) const;

  /// Ancestral sampling at temperature 1 until EOS or max_len. Row b draws
  /// from rngs[b], so each sample is reproducible from its own stream.
  std::vector<TokenSequence> sample(const Tensor& z, std::span<const Var> p,
                                    std::span<RngStream> rngs) const;

 private:
  const Var& P(std::span<const Var> p, const std::string& name) const { return p[index(name)]; }
  Var conv_block(const Var& x, std::span<const Var> p, const std::string& name, std::size_t stride,
                 std::size_t pad) const;
  Var attention(const Var& h, const Var& mem, std::span<const Var> p, const std::string& name,
                bool causal) const;

  ModelConfig cfg_;
  std::vector<ParamSpec> layout_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace lpt::model
