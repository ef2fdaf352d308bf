#include "lpt/model/lpt_model.hpp"

#include <algorithm>
#include <cmath>

#include "lpt/errors.hpp"

namespace lpt::model {

using namespace lpt::ad;

std::vector<Var> param_vars(const ModelParams& params, bool requires_grad) {
  std::vector<Var> out;
  out.reserve(params.tensors.size());
  for (const auto& t : params.tensors)
    out.push_back(requires_grad ? Var::leaf(t) : Var::constant(t));
  return out;
}

namespace {

std::vector<Var> as_constants(std::span<const Var> p) {
  std::vector<Var> out;
  out.reserve(p.size());
  for (const auto& v : p) out.push_back(Var::constant(v.value()));
  return out;
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
  const std::size_t width = t.numel() / t.dim(0);
  Tensor out(Shape{rows.size(), width});
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(t.data().begin() + rows[i] * width, width, o.begin() + i * width);
  return out;
}

}  // namespace

LptModel::LptModel(ModelConfig cfg) : cfg_(std::move(cfg)), layout_(param_layout(cfg_)) {
  for (std::size_t i = 0; i < layout_.size(); ++i) index_.emplace(layout_[i].name, i);
}

std::size_t LptModel::index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::logic_error("no parameter named " + name);
  return it->second;
}

void LptModel::check_params(const ModelParams& params) const {
  if (params.tensors.size() != layout_.size())
    throw ShapeError("model expects " + std::to_string(layout_.size()) + " parameter tensors, got " +
                     std::to_string(params.tensors.size()));
  for (std::size_t i = 0; i < layout_.size(); ++i)
    if (params.tensors[i].shape() != layout_[i].shape)
      throw ShapeError("parameter " + layout_[i].name + " has shape " +
                       shape_str(params.tensors[i].shape()) + ", expected " +
                       shape_str(layout_[i].shape));
}

Var LptModel::conv_block(const Var& x, std::span<const Var> p, const std::string& name,
                         std::size_t stride, std::size_t pad) const {
  Var y = conv1d(x, P(p, name + ".w"), P(p, name + ".b"), stride, pad);
  return gelu(layer_norm(y, P(p, name + ".ln.g"), P(p, name + ".ln.b")));
}

Var LptModel::prior_transform(const Var& z0, std::span<const Var> p) const {
  const std::size_t d = cfg_.latent_dim();
  if (z0.shape().size() != 2 || z0.shape()[1] != d)
    throw ShapeError("prior_transform: z0 must be [B, " + std::to_string(d) + "], got " +
                     shape_str(z0.shape()));
  if (cfg_.transport == Transport::identity) return z0;

  const std::size_t B = z0.shape()[0], k = cfg_.latent_tokens;
  Var x = reshape(z0, {B, k, cfg_.latent_channels});
  Var h0 = conv_block(x, p, "unet.in", 1, 1);
  Var h1 = conv_block(h0, p, "unet.down1", 2, 1);
  Var h2 = conv_block(h1, p, "unet.down2", 2, 1);
  Var mid = conv_block(h2, p, "unet.mid", 1, 1);

  auto up = [&](const Var& in, const Var& skip, const std::string& name) {
    Var t = conv_transpose1d(in, P(p, name + ".t.w"), P(p, name + ".t.b"), 2, 1, skip.shape()[1]);
    t = gelu(layer_norm(t, P(p, name + ".t.ln.g"), P(p, name + ".t.ln.b")));
    return conv_block(concat_last(t, skip), p, name + ".c", 1, 1);
  };
  Var u1 = up(mid, h1, "unet.up1");
  Var u2 = up(u1, h0, "unet.up2");
  Var out = conv1d(u2, P(p, "unet.out.w"), P(p, "unet.out.b"), 1, 1);
  return add(z0, reshape(out, {B, d}));
}

Var LptModel::attention(const Var& h, const Var& mem, std::span<const Var> p,
                        const std::string& name, bool causal) const {
  const std::size_t B = h.shape()[0], T = h.shape()[1], S = mem.shape()[1];
  const std::size_t H = cfg_.n_heads, E = cfg_.embed_dim, Dh = E / H;
  auto proj = [&](const Var& x, const char* which) {
    return linear(x, P(p, name + which + ".w"), P(p, name + which + ".b"));
  };
  auto split = [&](const Var& x, std::size_t len) {
    return reshape(permute(reshape(x, {B, len, H, Dh}), {0, 2, 1, 3}), {B * H, len, Dh});
  };
  Var q = split(proj(h, ".q"), T);
  Var k = split(proj(mem, ".k"), S);
  Var v = split(proj(mem, ".v"), S);
  Var a = softmax_last(scale(bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(Dh))), causal);
  Var o = reshape(permute(reshape(bmm(a, v), {B, H, T, Dh}), {0, 2, 1, 3}), {B, T, E});
  return proj(o, ".o");
}

Var LptModel::logits(const Var& z, std::span<const std::int32_t> inputs, std::size_t batch,
                     std::size_t len, std::span<const Var> p) const {
  if (len == 0 || len > cfg_.max_len)
    throw ShapeError("logits: length " + std::to_string(len) + " outside [1, max_len=" +
                     std::to_string(cfg_.max_len) + "]");
  if (inputs.size() != batch * len) throw ShapeError("logits: need batch*len input ids");
  if (z.shape() != Shape{batch, cfg_.latent_dim()})
    throw ShapeError("logits: z must be [B, d], got " + shape_str(z.shape()));
  const std::size_t E = cfg_.embed_dim;

  std::vector<std::int32_t> positions(len);
  for (std::size_t t = 0; t < len; ++t) positions[t] = static_cast<std::int32_t>(t);
  Var h = add(reshape(embedding(P(p, "tok_emb"), inputs), {batch, len, E}),
              embedding(P(p, "pos_emb"), positions));
  Var mem = add(reshape(z, {batch, cfg_.latent_tokens, cfg_.latent_channels}), P(p, "latent_pos"));

  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string blk = "blk" + std::to_string(l);
    Var x = layer_norm(h, P(p, blk + ".ln1.g"), P(p, blk + ".ln1.b"));
    h = add(h, attention(x, x, p, blk + ".self", true));
    if (cfg_.cross_attention == CrossAttention::every_block || l == 0) {
      x = layer_norm(h, P(p, blk + ".ln2.g"), P(p, blk + ".ln2.b"));
      h = add(h, attention(x, mem, p, blk + ".cross", false));
    }
    x = layer_norm(h, P(p, blk + ".ln3.g"), P(p, blk + ".ln3.b"));
    x = gelu(linear(x, P(p, blk + ".ffn1.w"), P(p, blk + ".ffn1.b")));
    h = add(h, linear(x, P(p, blk + ".ffn2.w"), P(p, blk + ".ffn2.b")));
  }
  h = layer_norm(h, P(p, "ln_f.g"), P(p, "ln_f.b"));
  return linear(h, P(p, "out.w"), P(p, "out.b"));
}

Var LptModel::seq_log_prob(const Var& z, std::span<const TokenSequence> xs,
                           std::span<const Var> p) const {
  const std::size_t B = xs.size();
  if (B == 0) throw ShapeError("seq_log_prob: empty batch");
  std::size_t T = 0;
  for (const auto& x : xs) {
    if (x.empty()) throw DataError("seq_log_prob: empty token sequence");
    data::validate_sequence(x, cfg_.vocab_size, cfg_.max_len);
    T = std::max(T, x.size());
  }
  std::vector<std::int32_t> inputs(B * T, data::kPad), targets(B * T, -1);
  for (std::size_t b = 0; b < B; ++b) {
    inputs[b * T] = data::kBos;
    for (std::size_t t = 0; t < xs[b].size(); ++t) {
      if (t > 0) inputs[b * T + t] = xs[b][t - 1];
      targets[b * T + t] = xs[b][t] - 2;
    }
  }
  Var lp = log_softmax_last(logits(z, inputs, B, T, p));
  return sum_last(reshape(pick_last(reshape(lp, {B * T, cfg_.output_size()}), targets), {B, T}));
}

Var LptModel::predict(const Var& z, std::span<const Var> p) const {
  if (z.shape().size() != 2 || z.shape()[1] != cfg_.latent_dim())
    throw ShapeError("predict: z must be [B, d], got " + shape_str(z.shape()));
  if (cfg_.regression_head == RegressionHead::linear) return linear(z, P(p, "reg.w"), P(p, "reg.b"));
  Var h = gelu(linear(z, P(p, "reg1.w"), P(p, "reg1.b")));
  h = gelu(linear(h, P(p, "reg2.w"), P(p, "reg2.b")));
  return linear(h, P(p, "reg3.w"), P(p, "reg3.b"));
}

Var LptModel::property_log_density(const Var& y, const Var& z, std::span<const Var> p) const {
  if (y.shape() != Shape{z.shape()[0], cfg_.objectives()})
    throw ShapeError("property_log_density: y must be [B, " + std::to_string(cfg_.objectives()) +
                     "], got " + shape_str(y.shape()));
  return sum_last(gaussian_log_density(y, predict(z, p), cfg_.sigma2));
}

Var LptModel::posterior_log_density(const Var& z0, std::span<const TokenSequence> xs,
                                    const Tensor* y, std::span<const Var> p) const {
  Var out = std_normal_log_density(z0);
  if (xs.empty() && !y) return out;
  Var z = prior_transform(z0, p);
  if (!xs.empty()) {
    if (xs.size() != z0.shape()[0]) throw ShapeError("posterior_log_density: one x per chain");
    out = add(out, seq_log_prob(z, xs, p));
  }
  if (y) out = add(out, property_log_density(Var::constant(*y), z, p));
  return out;
}

Tensor LptModel::next_token_probs(const Tensor& z, std::span<const TokenSequence> prefixes,
                                  std::span<const Var> p) const {
  const std::size_t B = prefixes.size();
  std::size_t T = 0;
  for (const auto& pre : prefixes) {
    if (pre.size() >= cfg_.max_len)
      throw ShapeError("next_token_probs: prefix leaves no room before max_len");
    for (auto id : pre)
      if (id < data::kFirstToken || static_cast<std::size_t>(id) >= cfg_.vocab_size)
        throw DataError("next_token_probs: prefixes hold content tokens only");
    T = std::max(T, pre.size() + 1);
  }
  std::vector<std::int32_t> inputs(B * T, data::kPad);
  for (std::size_t b = 0; b < B; ++b) {
    inputs[b * T] = data::kBos;
    std::copy(prefixes[b].begin(), prefixes[b].end(), inputs.begin() + b * T + 1);
  }
  const auto pc = as_constants(p);
  Tensor lg = logits(Var::constant(z), inputs, B, T, pc).value();
  const std::size_t V = cfg_.output_size();
  Tensor out(Shape{B, V});
  auto o = out.mutable_data();
  for (std::size_t b = 0; b < B; ++b) {
    const Scalar* row = lg.data().data() + (b * T + prefixes[b].size()) * V;
    Scalar mx = *std::max_element(row, row + V);
    Scalar total = 0;
    for (std::size_t j = 0; j < V; ++j) total += (o[b * V + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < V; ++j) o[b * V + j] /= total;
  }
  return out;
}

std::vector<TokenSequence> LptModel::sample(const Tensor& z, std::span<const Var> p,
                                            std::span<RngStream> rngs) const {
  const std::size_t B = z.shape().empty() ? 0 : z.dim(0);
  if (rngs.size() != B) throw ShapeError("sample: need one RNG stream per latent");
  std::vector<TokenSequence> out(B);
  std::vector<std::size_t> active(B);
  for (std::size_t b = 0; b < B; ++b) active[b] = b;
  const std::size_t V = cfg_.output_size();
  for (std::size_t t = 0; t < cfg_.max_len && !active.empty(); ++t) {
    std::vector<TokenSequence> prefixes;
    for (auto b : active) prefixes.push_back(out[b]);
    Tensor probs = next_token_probs(gather_rows(z, active), prefixes, p);
    std::vector<std::size_t> still;
    for (std::size_t i = 0; i < active.size(); ++i) {
      const std::size_t b = active[i];
      const double u = rngs[b].uniform();
      double cum = 0;
      std::size_t pick = V;
      for (std::size_t j = 0; j < V; ++j) {
        const double pj = probs[i * V + j];
        if (pj <= 0) continue;
        pick = j;
        cum += pj;
        if (u < cum) break;
      }
      const auto id = static_cast<std::int32_t>(pick + 2);
      out[b].push_back(id);
      if (id != data::kEos) still.push_back(b);
    }
    active = std::move(still);
  }
  return out;
}

}  // namespace lpt::model
