#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace asc::pipeline {

struct PropertyResult {
  std::string name;
  int trials = 0;
  /// max |lhs - rhs| / max(1, max |rhs|) over all trials.
  double max_deviation = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct EquivarianceReport {
  std::string target;
  std::vector<PropertyResult> properties;

  bool passed() const;
};

struct EquivarianceOptions {
  int trials = 0;          // 0: the target's default
  double tolerance = 0.0;  // 0: 1e-5 for layers, 1e-4 for whole models
  std::uint64_t seed = 0;
  /// Negative control: transform outputs with g^-1 instead of g, as a
  /// mixed-up rotation convention would. Invariance properties are unaffected.
  bool broken_convention = false;
};

/// Layer targets; every name from known_variants() is accepted as well.
std::vector<std::string> equivariance_layer_targets();

/// Runs every symmetry property of the target on random torus-padded
/// instances. Raises UnknownTarget.
EquivarianceReport check_equivariance(const std::string& target, const EquivarianceOptions& options = {});

}  // namespace asc::pipeline
