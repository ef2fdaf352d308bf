#pragma once

#include <span>
#include <vector>

namespace lpt::data {

/// Per-objective affine standardisation of property values.
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> std;

  /// Zero mean and unit variance over `ys`; constant objectives get std 1.
  static Normalizer fit(std::span<const std::vector<double>> ys);
  static Normalizer identity(std::size_t objectives);

  std::size_t objectives() const { return mean.size(); }
  std::vector<double> normalize(std::span<const double> y) const;
  std::vector<double> denormalize(std::span<const double> y) const;
};

}  // namespace lpt::data
