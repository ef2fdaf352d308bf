#include "lpt/model/params.hpp"

#include <cmath>

#include "lpt/errors.hpp"

namespace lpt::model {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError("model: " + msg);
}

struct LayoutBuilder {
  std::vector<ParamSpec> specs;
  ParamGroup group = ParamGroup::beta;

  void add(std::string name, Shape shape, InitKind init) {
    specs.push_back({std::move(name), std::move(shape), group, init});
  }
  void linear(const std::string& name, std::size_t in, std::size_t out, bool zero = false) {
    add(name + ".w", {in, out}, zero ? InitKind::zeros : InitKind::normal);
    add(name + ".b", {out}, InitKind::zeros);
  }
  void norm(const std::string& name, std::size_t dim) {
    add(name + ".g", {dim}, InitKind::ones);
    add(name + ".b", {dim}, InitKind::zeros);
  }
  void conv(const std::string& name, std::size_t in, std::size_t out, bool with_norm = true) {
    add(name + ".w", {3, in, out}, InitKind::normal);
    add(name + ".b", {out}, InitKind::zeros);
    if (with_norm) norm(name + ".ln", out);
  }
};

}  // namespace

void ModelConfig::validate() const {
  require(latent_tokens >= 1 && latent_channels >= 1, "latent_tokens and latent_channels must be >= 1");
  require(n_layers >= 1, "n_layers must be >= 1");
  require(n_heads >= 1 && embed_dim % n_heads == 0, "embed_dim must be divisible by n_heads");
  require(ffn_dim >= 1, "ffn_dim must be >= 1");
  require(max_len >= 1, "max_len must be >= 1");
  require(vocab_size >= 4, "vocabulary needs at least one non-reserved token");
  require(!sigma2.empty(), "sigma2 needs one entry per objective");
  for (double s : sigma2) require(std::isfinite(s) && s > 0, "sigma2 entries must be > 0");
  if (transport == Transport::unet) require(unet_base_channels >= 1, "unet_base_channels must be >= 1");
  if (regression_head == RegressionHead::mlp) require(regression_hidden >= 1, "regression_hidden must be >= 1");
}

const char* to_string(Transport t) { return t == Transport::unet ? "unet" : "identity"; }
const char* to_string(RegressionHead h) { return h == RegressionHead::mlp ? "mlp" : "linear"; }
const char* to_string(CrossAttention c) {
  return c == CrossAttention::every_block ? "every_block" : "single";
}
const char* to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::alpha: return "alpha";
    case ParamGroup::beta: return "beta";
    case ParamGroup::gamma: return "gamma";
  }
  return "?";
}

Transport parse_transport(const std::string& s) {
  if (s == "unet") return Transport::unet;
  if (s == "identity") return Transport::identity;
  throw ConfigError("model.transport: expected 'unet' or 'identity', got '" + s + "'");
}
RegressionHead parse_regression_head(const std::string& s) {
  if (s == "mlp") return RegressionHead::mlp;
  if (s == "linear") return RegressionHead::linear;
  throw ConfigError("model.regression_head: expected 'mlp' or 'linear', got '" + s + "'");
}
CrossAttention parse_cross_attention(const std::string& s) {
  if (s == "every_block") return CrossAttention::every_block;
  if (s == "single") return CrossAttention::single;
  throw ConfigError("model.cross_attention: expected 'every_block' or 'single', got '" + s + "'");
}

std::vector<ParamSpec> param_layout(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t c = cfg.latent_channels, e = cfg.embed_dim, d = cfg.latent_dim();
  LayoutBuilder lb;

  if (cfg.transport == Transport::unet) {
    const std::size_t b = cfg.unet_base_channels;
    lb.group = ParamGroup::alpha;
    lb.conv("unet.in", c, b);
    lb.conv("unet.down1", b, 2 * b);
    lb.conv("unet.down2", 2 * b, 4 * b);
    lb.conv("unet.mid", 4 * b, 4 * b);
    lb.conv("unet.up1.t", 4 * b, 2 * b);
    lb.conv("unet.up1.c", 4 * b, 2 * b);
    lb.conv("unet.up2.t", 2 * b, b);
    lb.conv("unet.up2.c", 2 * b, b);
    lb.add("unet.out.w", {3, b, c}, InitKind::zeros);
    lb.add("unet.out.b", {c}, InitKind::zeros);
  }

  lb.group = ParamGroup::beta;
  lb.add("tok_emb", {cfg.vocab_size, e}, InitKind::normal);
  lb.add("pos_emb", {cfg.max_len, e}, InitKind::normal);
  lb.add("latent_pos", {cfg.latent_tokens, c}, InitKind::normal);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string blk = "blk" + std::to_string(l);
    lb.norm(blk + ".ln1", e);
    for (const char* proj : {".q", ".k", ".v", ".o"}) lb.linear(blk + ".self" + proj, e, e);
    if (cfg.cross_attention == CrossAttention::every_block || l == 0) {
      lb.norm(blk + ".ln2", e);
      lb.linear(blk + ".cross.q", e, e);
      lb.linear(blk + ".cross.k", c, e);
      lb.linear(blk + ".cross.v", c, e);
      lb.linear(blk + ".cross.o", e, e);
    }
    lb.norm(blk + ".ln3", e);
    lb.linear(blk + ".ffn1", e, cfg.ffn_dim);
    lb.linear(blk + ".ffn2", cfg.ffn_dim, e);
  }
  lb.norm("ln_f", e);
  lb.linear("out", e, cfg.output_size(), true);

  lb.group = ParamGroup::gamma;
  if (cfg.regression_head == RegressionHead::mlp) {
    const std::size_t h = cfg.regression_hidden;
    lb.linear("reg1", d, h);
    lb.linear("reg2", h, h);
    lb.linear("reg3", h, cfg.objectives(), true);
  } else {
    lb.linear("reg", d, cfg.objectives());
  }
  return lb.specs;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  std::size_t n = 0;
  for (const auto& s : param_layout(cfg)) n += shape_numel(s.shape);
  return n;
}

std::size_t parameter_count(const ModelConfig& cfg, ParamGroup group) {
  std::size_t n = 0;
  for (const auto& s : param_layout(cfg))
    if (s.group == group) n += shape_numel(s.shape);
  return n;
}

ModelParams init_params(const ModelConfig& cfg, RngStream& rng) {
  ModelParams params;
  for (const auto& spec : param_layout(cfg)) {
    Tensor t(spec.shape, spec.init == InitKind::ones ? 1.0 : 0.0);
    if (spec.init == InitKind::normal) {
      for (auto& v : t.mutable_data()) {
        double z;
        do z = rng.normal();
        while (std::abs(z) > 2.0);
        v = static_cast<Scalar>(0.02 * z);
      }
    }
    params.tensors.push_back(std::move(t));
  }
  return params;
}

}  // namespace lpt::model
