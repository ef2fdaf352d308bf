#include "lpt/sampler/langevin.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lpt/errors.hpp"

namespace lpt::sampler {

namespace {

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
  const std::size_t width = t.numel() / t.dim(0);
  Shape shape = t.shape();
  shape[0] = rows.size();
  Tensor out(shape);
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(t.data().begin() + rows[i] * width, width, o.begin() + i * width);
  return out;
}

struct Evaluation {
  Tensor value;
  Tensor gradient;
};

Evaluation evaluate(const Tensor& z0, const LogDensityFn& target,
                    std::span<const std::size_t> rows) {
  ad::Var leaf = ad::Var::leaf(z0);
  ad::Var lp = target(leaf, rows);
  if (lp.shape() != Shape{z0.dim(0)})
    throw ShapeError("Langevin target must return one log-density per chain, got " +
                     shape_str(lp.shape()));
  std::vector<ad::Var> in{leaf};
  auto g = ad::grad(ad::sum(lp), in);
  return {lp.value(), std::move(g[0])};
}

// z0 + s*grad + sqrt(2s)*noise, rowwise over the rows of `z0`.
Tensor update(const Tensor& z0, const Tensor& gradient, double s, const Tensor& noise) {
  Tensor out(z0.shape());
  auto o = out.mutable_data();
  const Scalar noise_scale = static_cast<Scalar>(std::sqrt(2.0 * s));
  const Scalar ss = static_cast<Scalar>(s);
  for (std::size_t i = 0; i < z0.numel(); ++i) o[i] = z0[i] + ss * gradient[i] + noise_scale * noise[i];
  return out;
}

}  // namespace

ChainState langevin_step(const ChainState& state, const LogDensityFn& target, double step_size,
                         const Tensor& noise) {
  if (noise.shape() != state.z0.shape()) throw ShapeError("langevin_step: noise shape mismatch");
  if (!(step_size >= 0)) throw ConfigError("Langevin step size must be >= 0");
  std::vector<std::size_t> rows(state.z0.dim(0));
  std::iota(rows.begin(), rows.end(), 0);
  Evaluation ev;
  try {
    ev = evaluate(state.z0, target, rows);
  } catch (const NumericError& e) {
    throw ChainDivergedError(static_cast<int>(state.step), e.what());
  }
  ChainState next{update(state.z0, ev.gradient, step_size, noise), ev.value, state.step + 1};
  if (!next.z0.all_finite())
    throw ChainDivergedError(static_cast<int>(state.step), "non-finite latent after update");
  return next;
}

std::size_t PosteriorSample::failed_count() const {
  return static_cast<std::size_t>(std::count(failed.begin(), failed.end(), 1));
}

Tensor fresh_init(std::size_t chains, std::size_t dim, RngStream& rng) {
  Tensor z(Shape{chains, dim});
  for (auto& v : z.mutable_data()) v = static_cast<Scalar>(rng.normal());
  return z;
}

PosteriorSample sample_posterior(const Tensor& init, const LogDensityFn& target,
                                 const LangevinConfig& cfg, std::span<RngStream> noise) {
  if (init.rank() != 2) throw ShapeError("sample_posterior: init must be [B, d]");
  if (!(cfg.step_size >= 0)) throw ConfigError("Langevin step size must be >= 0");
  const std::size_t B = init.dim(0), d = init.dim(1);
  if (noise.size() != 1 && noise.size() != B)
    throw ShapeError("sample_posterior: need one noise stream or one per chain");

  PosteriorSample out{{init, Tensor(Shape{B}), 0}, std::vector<char>(B, 0), {}};
  auto z = out.state.z0.mutable_data();
  auto ld = out.state.log_density.mutable_data();
  std::vector<std::size_t> active(B);
  std::iota(active.begin(), active.end(), 0);
  Tensor eps(Shape{B, d});

  for (std::size_t step = 0; step < cfg.steps && !active.empty(); ++step) {
    // Noise is drawn for every chain, failed or not, so surviving chains see
    // the same noise whatever happens to their neighbours.
    auto e = eps.mutable_data();
    if (noise.size() == 1) {
      for (auto& v : e) v = static_cast<Scalar>(noise[0].normal());
    } else {
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t j = 0; j < d; ++j) e[b * d + j] = static_cast<Scalar>(noise[b].normal());
    }

    auto advance = [&](std::span<const std::size_t> rows) {
      Tensor zr = gather_rows(out.state.z0, rows);
      Evaluation ev = evaluate(zr, target, rows);
      Tensor next = update(zr, ev.gradient, cfg.step_size, gather_rows(eps, rows));
      if (!next.all_finite()) throw NumericError("non-finite latent after update");
      for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(next.data().begin() + i * d, d, z.begin() + rows[i] * d);
        ld[rows[i]] = ev.value[i];
      }
    };

    try {
      advance(active);
    } catch (const NumericError&) {
      // Retry chain by chain to isolate the offenders.
      std::vector<std::size_t> still;
      for (auto b : active) {
        const std::size_t one[1] = {b};
        try {
          advance(one);
          still.push_back(b);
        } catch (const NumericError& err) {
          out.failed[b] = 1;
          out.failures.push_back("chain " + std::to_string(b) + ": " +
                                 ChainDivergedError(static_cast<int>(step), err.what()).what());
        }
      }
      active = std::move(still);
    }
    out.state.step = step + 1;
  }
  return out;
}

LogDensityFn posterior_target(const model::LptModel& model, std::span<const ad::Var> params,
                              std::span<const data::TokenSequence> xs, const Tensor* y) {
  return [&model, params, xs, y](const ad::Var& z0, std::span<const std::size_t> rows) {
    std::vector<data::TokenSequence> xr;
    if (!xs.empty())
      for (auto r : rows) xr.push_back(xs[r]);
    Tensor yr;
    if (y) yr = gather_rows(*y, rows);
    return model.posterior_log_density(z0, xr, y ? &yr : nullptr, params);
  };
}

}  // namespace lpt::sampler
