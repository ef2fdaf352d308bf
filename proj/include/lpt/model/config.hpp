#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace lpt::model {

enum class Transport { unet, identity };
enum class RegressionHead { mlp, linear };
enum class CrossAttention { every_block, single };

struct ModelConfig {
  std::size_t latent_tokens = 4;      // k
  std::size_t latent_channels = 256;  // c
  std::size_t n_layers = 3;
  std::size_t embed_dim = 256;
  std::size_t n_heads = 4;
  std::size_t ffn_dim = 1024;
  std::size_t max_len = 73;
  /// Total token ids including PAD/BOS/EOS; set from the vocabulary.
  std::size_t vocab_size = 0;
  std::size_t unet_base_channels = 64;
  std::size_t regression_hidden = 256;
  /// Regression variance per objective; its length is the objective count M.
  std::vector<double> sigma2{0.25};
  Transport transport = Transport::unet;
  RegressionHead regression_head = RegressionHead::mlp;
  CrossAttention cross_attention = CrossAttention::every_block;

  std::size_t latent_dim() const { return latent_tokens * latent_channels; }
  std::size_t objectives() const { return sigma2.size(); }
  /// Emittable tokens: EOS plus every non-reserved token.
  std::size_t output_size() const { return vocab_size - 2; }

  /// Throws ConfigError on inconsistent settings.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

const char* to_string(Transport t);
const char* to_string(RegressionHead h);
const char* to_string(CrossAttention c);
Transport parse_transport(const std::string& s);
RegressionHead parse_regression_head(const std::string& s);
CrossAttention parse_cross_attention(const std::string& s);

}  // namespace lpt::model
