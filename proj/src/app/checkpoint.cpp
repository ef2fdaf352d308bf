#include "lpt/app/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "lpt/app/io.hpp"
#include "lpt/errors.hpp"
#include "lpt/model/params.hpp"

namespace lpt::app {

using nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian");

namespace {

constexpr char kMagic[8] = {'L', 'P', 'T', 'C', 'K', 'P', 'T', '\0'};
constexpr const char* kScalarName = sizeof(Scalar) == 8 ? "float64" : "float32";

ordered_json model_json(const model::ModelConfig& m) {
  return {{"latent_tokens", m.latent_tokens},
          {"latent_channels", m.latent_channels},
          {"n_layers", m.n_layers},
          {"embed_dim", m.embed_dim},
          {"n_heads", m.n_heads},
          {"ffn_dim", m.ffn_dim},
          {"max_len", m.max_len},
          {"vocab_size", m.vocab_size},
          {"unet_base_channels", m.unet_base_channels},
          {"regression_hidden", m.regression_hidden},
          {"sigma2", m.sigma2},
          {"transport", model::to_string(m.transport)},
          {"regression_head", model::to_string(m.regression_head)},
          {"cross_attention", model::to_string(m.cross_attention)}};
}

model::ModelConfig model_from_json(const ordered_json& j) {
  model::ModelConfig m;
  m.latent_tokens = j.at("latent_tokens");
  m.latent_channels = j.at("latent_channels");
  m.n_layers = j.at("n_layers");
  m.embed_dim = j.at("embed_dim");
  m.n_heads = j.at("n_heads");
  m.ffn_dim = j.at("ffn_dim");
  m.max_len = j.at("max_len");
  m.vocab_size = j.at("vocab_size");
  m.unet_base_channels = j.at("unet_base_channels");
  m.regression_hidden = j.at("regression_hidden");
  m.sigma2 = j.at("sigma2").get<std::vector<double>>();
  m.transport = model::parse_transport(j.at("transport"));
  m.regression_head = model::parse_regression_head(j.at("regression_head"));
  m.cross_attention = model::parse_cross_attention(j.at("cross_attention"));
  return m;
}

void append_tensors(std::string& out, const std::vector<Tensor>& ts) {
  for (const auto& t : ts) {
    auto d = t.data();
    out.append(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(Scalar));
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  ordered_json h;
  h["version"] = kCheckpointVersion;
  h["scalar"] = kScalarName;
  h["stage"] = c.stage;
  h["model"] = model_json(c.model);
  h["vocab"] = c.vocab.tokens();
  if (c.normalizer)
    h["normalizer"] = {{"mean", c.normalizer->mean}, {"std", c.normalizer->std}};
  else
    h["normalizer"] = nullptr;
  h["rng"] = {{"seed", c.rng_seed}, {"counters", c.rng_counters}};
  h["epochs_completed"] = c.epochs_completed;
  h["optim_step"] = c.optim.step;
  const bool moments = !c.optim.first_moment.empty();
  h["has_moments"] = moments;
  ordered_json shapes = ordered_json::array();
  for (const auto& t : c.params.tensors) shapes.push_back(t.shape());
  h["shapes"] = shapes;

  const std::string header = h.dump();
  std::string out(kMagic, sizeof kMagic);
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t len = header.size();
  out.append(reinterpret_cast<const char*>(&version), sizeof version);
  out.append(reinterpret_cast<const char*>(&len), sizeof len);
  out += header;
  append_tensors(out, c.params.tensors);
  if (moments) {
    append_tensors(out, c.optim.first_moment);
    append_tensors(out, c.optim.second_moment);
  }
  atomic_write(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::string bytes;
  try {
    bytes = read_text(path);
  } catch (const DataError&) {
    throw CheckpointError("cannot open checkpoint " + path);
  }
  std::size_t pos = 0;
  auto take = [&](std::size_t n) {
    if (bytes.size() - pos < n) throw CheckpointError("checkpoint " + path + " is truncated");
    const char* p = bytes.data() + pos;
    pos += n;
    return p;
  };
  if (std::memcmp(take(sizeof kMagic), kMagic, sizeof kMagic) != 0)
    throw CheckpointError(path + " is not an LPT checkpoint");
  std::uint32_t version;
  std::memcpy(&version, take(sizeof version), sizeof version);
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported");
  std::uint64_t len;
  std::memcpy(&len, take(sizeof len), sizeof len);
  ordered_json h;
  Checkpoint c;
  std::vector<Shape> shapes;
  bool moments = false;
  try {
    h = ordered_json::parse(std::string(take(len), len));
    if (h.at("scalar") != kScalarName)
      throw CheckpointError("checkpoint holds " + h.at("scalar").get<std::string>() +
                            " tensors but this build uses " + kScalarName);
    c.stage = h.at("stage");
    c.model = model_from_json(h.at("model"));
    c.vocab = data::Vocabulary(h.at("vocab").get<std::vector<std::string>>());
    if (!h.at("normalizer").is_null())
      c.normalizer = data::Normalizer{h["normalizer"].at("mean").get<std::vector<double>>(),
                                      h["normalizer"].at("std").get<std::vector<double>>()};
    c.rng_seed = h.at("rng").at("seed");
    c.rng_counters = h.at("rng").at("counters").get<std::map<std::string, std::uint64_t>>();
    c.epochs_completed = h.at("epochs_completed");
    c.optim.step = h.at("optim_step");
    moments = h.at("has_moments");
    for (const auto& s : h.at("shapes")) shapes.push_back(s.get<Shape>());
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError("checkpoint " + path + " has a bad header: " + e.what());
  }
  if (c.vocab.size() != c.model.vocab_size)
    throw CheckpointError("checkpoint vocabulary does not match its model config");
  try {
    c.model.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint model config is invalid: ") + e.what());
  }
  const auto layout = model::param_layout(c.model);
  if (layout.size() != shapes.size()) throw CheckpointError("checkpoint tensor count does not match its model");
  for (std::size_t i = 0; i < shapes.size(); ++i)
    if (layout[i].shape != shapes[i])
      throw CheckpointError("checkpoint tensor '" + layout[i].name + "' has the wrong shape");
  auto read_set = [&](std::vector<Tensor>& into) {
    for (const auto& s : shapes) {
      Tensor t(s);
      auto d = t.mutable_data();
      std::memcpy(d.data(), take(d.size() * sizeof(Scalar)), d.size() * sizeof(Scalar));
      into.push_back(std::move(t));
    }
  };
  read_set(c.params.tensors);
  if (moments) {
    read_set(c.optim.first_moment);
    read_set(c.optim.second_moment);
  }
  if (pos != bytes.size()) throw CheckpointError("checkpoint " + path + " has trailing data");
  for (const auto& t : c.params.tensors)
    if (!t.all_finite()) throw CheckpointError("checkpoint " + path + " holds non-finite parameters");
  return c;
}

}  // namespace lpt::app
