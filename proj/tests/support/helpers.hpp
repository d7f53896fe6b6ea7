#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "asc/random.hpp"
#include "asc/tensor.hpp"

namespace asc::test {

inline Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
  std::vector<float> v(static_cast<std::size_t>(numel(shape)));
  rng.fill_normal(v, 0.0, stddev);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline Tensor uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false) {
  std::vector<float> v(static_cast<std::size_t>(numel(shape)));
  rng.fill_uniform(v, lo, hi);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0.0;
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(static_cast<double>(x[i]) - y[i]));
  return m;
}

inline double max_abs_diff(const Tensor& a, const std::vector<double>& b) {
  if (static_cast<std::size_t>(a.numel()) != b.size()) return INFINITY;
  double m = 0.0;
  const auto x = a.data();
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - b[i]));
  return m;
}

/// max |a - b| / max(1, max |b|).
inline double relative_deviation(const Tensor& a, const Tensor& b) {
  double scale = 1.0;
  for (const float v : b.data()) scale = std::max(scale, std::abs(static_cast<double>(v)));
  return max_abs_diff(a, b) / scale;
}

}  // namespace asc::test
