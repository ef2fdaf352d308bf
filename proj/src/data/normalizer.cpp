#include "lpt/data/normalizer.hpp"

#include <cmath>

#include "lpt/errors.hpp"

namespace lpt::data {

Normalizer Normalizer::fit(std::span<const std::vector<double>> ys) {
  if (ys.empty()) throw DataError("cannot fit property normalisation on no records");
  const std::size_t m = ys[0].size();
  Normalizer n{std::vector<double>(m, 0.0), std::vector<double>(m, 0.0)};
  for (const auto& y : ys) {
    if (y.size() != m) throw DataError("inconsistent property dimension");
    for (std::size_t j = 0; j < m; ++j) n.mean[j] += y[j];
  }
  for (auto& v : n.mean) v /= static_cast<double>(ys.size());
  for (const auto& y : ys)
    for (std::size_t j = 0; j < m; ++j) n.std[j] += (y[j] - n.mean[j]) * (y[j] - n.mean[j]);
  for (auto& v : n.std) {
    v = std::sqrt(v / static_cast<double>(ys.size()));
    if (!(v > 1e-12)) v = 1.0;
  }
  return n;
}

Normalizer Normalizer::identity(std::size_t objectives) {
  return {std::vector<double>(objectives, 0.0), std::vector<double>(objectives, 1.0)};
}

std::vector<double> Normalizer::normalize(std::span<const double> y) const {
  if (y.size() != mean.size()) throw DataError("property dimension mismatch");
  std::vector<double> out(y.size());
  for (std::size_t j = 0; j < y.size(); ++j) out[j] = (y[j] - mean[j]) / std[j];
  return out;
}

std::vector<double> Normalizer::denormalize(std::span<const double> y) const {
  if (y.size() != mean.size()) throw DataError("property dimension mismatch");
  std::vector<double> out(y.size());
  for (std::size_t j = 0; j < y.size(); ++j) out[j] = y[j] * std[j] + mean[j];
  return out;
}

}  // namespace lpt::data
