#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

#include "mcdu/error.hpp"

namespace mcdu {

struct KdeCurve {
  std::vector<double> grid;
  std::vector<double> density;
  double bandwidth = 0.0;
  double sample_mean = 0.0;
  double sample_std = 0.0;  // population std of the samples

  // Trapezoid rule over the grid.
  double integral() const {
    double s = 0.0;
    for (std::size_t i = 1; i < grid.size(); ++i) s += 0.5 * (density[i] + density[i - 1]) * (grid[i] - grid[i - 1]);
    return s;
  }
};

/// Gaussian KDE with Scott's bandwidth h = s * n^(-1/5), s the unbiased
/// sample standard deviation, evaluated on grid_size uniform points spanning
/// [min - 3h, max + 3h]. No boundary correction.
inline KdeCurve kde(std::span<const double> samples, int grid_size = 256) {
  const auto n = samples.size();
  if (n < 2) throw DataError("kde: need at least two samples");
  if (grid_size < 2) throw std::invalid_argument("kde: grid_size must be >= 2");
  const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double x : samples) ss += (x - mean) * (x - mean);
  if (!(ss > 0.0)) throw DataError("kde: samples have zero variance");

  KdeCurve c;
  c.sample_mean = mean;
  c.sample_std = std::sqrt(ss / static_cast<double>(n));
  const double s = std::sqrt(ss / static_cast<double>(n - 1));
  c.bandwidth = s * std::pow(static_cast<double>(n), -0.2);

  const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
  const double lo = *lo_it - 3.0 * c.bandwidth;
  const double hi = *hi_it + 3.0 * c.bandwidth;
  c.grid.resize(static_cast<std::size_t>(grid_size));
  c.density.assign(c.grid.size(), 0.0);
  const double step = (hi - lo) / (grid_size - 1);
  for (int i = 0; i < grid_size; ++i) c.grid[i] = lo + step * i;
  c.grid.back() = hi;

  const double norm = 1.0 / (static_cast<double>(n) * c.bandwidth * std::sqrt(2.0 * std::numbers::pi));
  for (std::size_t g = 0; g < c.grid.size(); ++g) {
    double acc = 0.0;
    for (double x : samples) {
      const double u = (c.grid[g] - x) / c.bandwidth;
      acc += std::exp(-0.5 * u * u);
    }
    c.density[g] = acc * norm;
  }
  return c;
}

}  // namespace mcdu
