#include "lpt/train/trainer.hpp"

#include <chrono>
#include <cmath>
#include <memory>
#include <numeric>

#include "lpt/errors.hpp"

namespace lpt::train {

using model::ParamGroup;

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
  if (!(lr_max >= 0) || !(lr_min >= 0)) throw ConfigError("learning rates must be >= 0");
  if (lr_min > lr_max) throw ConfigError("lr_min must not exceed lr_max");
  if (!(rates.alpha >= 0) || !(rates.beta >= 0) || !(rates.gamma >= 0))
    throw ConfigError("group learning-rate scales must be >= 0");
  if (!(clip_norm >= 0)) throw ConfigError("training.clip_norm must be >= 0");
  if (!(langevin.step_size >= 0)) throw ConfigError("Langevin step size must be >= 0");
  if (!(adam.weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
}

nlohmann::ordered_json to_json(const EpochReport& r) {
  return {{"epoch", r.epoch},
          {"step", r.step},
          {"lr", r.lr},
          {"seq_nll_per_token", r.seq_nll_per_token},
          {"property_nll", r.property_nll},
          {"grad_norm_alpha", r.grad_norm_alpha},
          {"grad_norm_beta", r.grad_norm_beta},
          {"grad_norm_gamma", r.grad_norm_gamma}};
}

std::vector<char> decay_mask(const model::LptModel& model) {
  std::vector<char> mask;
  for (const auto& s : model.layout()) mask.push_back(s.shape.size() >= 2);
  return mask;
}

LearningGradients learning_gradients(const model::LptModel& model, const model::ModelParams& params,
                                     std::span<const data::TokenSequence> xs, const Tensor* y,
                                     const Tensor& z0) {
  const std::size_t B = z0.dim(0);
  auto p = model::param_vars(params, true);
  ad::Var z = model.prior_transform(ad::Var::constant(z0), p);
  LearningGradients out;
  ad::Var total;
  if (!xs.empty()) {
    ad::Var lp = model.seq_log_prob(z, xs, p);
    for (auto v : lp.value().data()) out.seq_log_prob_sum += v;
    for (const auto& x : xs) out.tokens += x.size();
    total = ad::sum(lp);
  }
  if (y) {
    ad::Var ly = model.property_log_density(ad::Var::constant(*y), z, p);
    for (auto v : ly.value().data()) out.property_log_density_sum += v;
    total = total.valid() ? ad::add(total, ad::sum(ly)) : ad::sum(ly);
  }
  if (!total.valid()) throw std::invalid_argument("learning_gradients: need x or y");
  out.delta = ad::grad(ad::scale(total, 1.0 / static_cast<double>(B)), p);
  return out;
}

namespace {

Tensor rows_tensor(std::span<const std::vector<double>> ys, std::span<const std::size_t> idx) {
  const std::size_t M = ys[idx[0]].size();
  Tensor t(Shape{idx.size(), M});
  auto d = t.mutable_data();
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < M; ++j) d[i * M + j] = static_cast<Scalar>(ys[idx[i]][j]);
  return t;
}

double group_norm(const model::LptModel& model, std::span<const Tensor> grads, ParamGroup g) {
  double s = 0;
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (model.layout()[i].group == g)
      for (auto v : grads[i].data()) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

TrainReport run(const char* stage, const model::LptModel& model,
                std::span<const data::TokenSequence> xs, std::span<const std::vector<double>> ys,
                model::ModelParams& params, OptimState& optim, const TrainConfig& cfg,
                RngBank& rngs, const EpochCallback& on_epoch) {
  cfg.validate();
  model.check_params(params);
  const bool with_y = !ys.empty();
  const std::size_t n = xs.size();
  if (n == 0) throw DataError(std::string(stage) + ": no training sequences");
  if (with_y && ys.size() != n) throw DataError(std::string(stage) + ": every record needs y");
  if (with_y)
    for (const auto& y : ys)
      if (y.size() != model.config().objectives())
        throw DataError(std::string(stage) + ": y dimension does not match the model");
  if (optim.first_moment.empty()) optim = OptimState::zeros_like(params.tensors);

  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  const LrSchedule schedule{cfg.lr_max, cfg.lr_min, std::max<std::uint64_t>(1, cfg.epochs * batches)};
  const auto mask = decay_mask(model);
  const std::size_t P = params.tensors.size();
  auto decay = std::make_unique<bool[]>(P);
  std::vector<double> scale(P);
  for (std::size_t i = 0; i < P; ++i) {
    decay[i] = mask[i];
    switch (model.layout()[i].group) {
      case ParamGroup::alpha: scale[i] = cfg.rates.alpha; break;
      case ParamGroup::beta: scale[i] = cfg.rates.beta; break;
      case ParamGroup::gamma: scale[i] = with_y ? cfg.rates.gamma : 0.0; break;
    }
  }

  TrainReport report{stage, {}};
  std::vector<std::size_t> order(n);
  std::uint64_t local_step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    auto& shuffle = rngs.stream(StreamId::shuffle);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    EpochReport er;
    er.epoch = epoch;
    double seq_lp = 0, prop_lp = 0;
    std::size_t tokens = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::span<const std::size_t> idx(order.data() + b * cfg.batch_size,
                                             std::min(cfg.batch_size, n - b * cfg.batch_size));
      std::vector<data::TokenSequence> xb;
      for (auto i : idx) xb.push_back(xs[i]);
      Tensor yb;
      if (with_y) yb = rows_tensor(ys, idx);
      const std::string where = std::string(stage) + " epoch " + std::to_string(epoch) + " batch " +
                                std::to_string(b) + ": ";
      try {
        auto pc = model::param_vars(params, false);
        Tensor init = sampler::fresh_init(idx.size(), model.config().latent_dim(),
                                          rngs.stream(StreamId::init));
        std::span<RngStream> noise(&rngs.stream(StreamId::langevin), 1);
        auto post = sampler::sample_posterior(
            init, sampler::posterior_target(model, pc, xb, with_y ? &yb : nullptr), cfg.langevin, noise);
        if (post.failed_count() > 0) throw NumericError(post.failures.front());

        auto lg = learning_gradients(model, params, xb, with_y ? &yb : nullptr, post.state.z0);
        seq_lp += lg.seq_log_prob_sum;
        prop_lp += lg.property_log_density_sum;
        tokens += lg.tokens;
        std::vector<Tensor> grads;
        grads.reserve(P);
        for (auto& g : lg.delta) {
          for (auto& v : g.mutable_data()) v = -v;
          grads.push_back(std::move(g));
        }
        er.grad_norm_alpha += group_norm(model, grads, ParamGroup::alpha) / batches;
        er.grad_norm_beta += group_norm(model, grads, ParamGroup::beta) / batches;
        er.grad_norm_gamma += group_norm(model, grads, ParamGroup::gamma) / batches;
        if (cfg.clip_norm > 0) clip_global_norm(grads, cfg.clip_norm);

        const double lr = cosine_lr(local_step, schedule);
        std::vector<double> lrs(P);
        for (std::size_t i = 0; i < P; ++i) lrs[i] = lr * scale[i];
        adamw_step(params.tensors, grads, optim, lrs, std::span<const bool>(decay.get(), P), cfg.adam);
        ++local_step;
        er.lr = lr;
      } catch (const NumericError& e) {
        throw NumericError(where + e.what());
      }
    }
    for (const auto& t : params.tensors)
      if (!t.all_finite()) throw NumericError(std::string(stage) + " epoch " + std::to_string(epoch) +
                                              ": parameters became non-finite");
    er.step = optim.step;
    er.seq_nll_per_token = tokens ? -seq_lp / static_cast<double>(tokens) : 0.0;
    er.property_nll = with_y ? -prop_lp / static_cast<double>(n) : 0.0;
    er.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.epochs.push_back(er);
    if (on_epoch && !on_epoch(er)) break;
  }
  return report;
}

}  // namespace

TrainReport pretrain(const model::LptModel& model, std::span<const data::TokenSequence> xs,
                     model::ModelParams& params, OptimState& optim, const TrainConfig& cfg,
                     RngBank& rngs, const EpochCallback& on_epoch) {
  return run("pretrain", model, xs, {}, params, optim, cfg, rngs, on_epoch);
}

TrainReport finetune(const model::LptModel& model, std::span<const data::TokenSequence> xs,
                     std::span<const std::vector<double>> ys, model::ModelParams& params,
                     OptimState& optim, const TrainConfig& cfg, RngBank& rngs,
                     const EpochCallback& on_epoch) {
  if (ys.empty()) throw DataError("finetune: records carry no properties");
  return run("finetune", model, xs, ys, params, optim, cfg, rngs, on_epoch);
}

}  // namespace lpt::train
