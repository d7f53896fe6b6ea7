#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "asc/tensor.hpp"

namespace asc {

struct GradcheckOptions {
  double eps = 1e-3;
  double tolerance = 1e-3;
  std::uint64_t seed = 0;
  /// Upper bound on perturbed entries per input; larger inputs are sampled.
  std::int64_t max_entries = 400;
};

struct GradcheckEntry {
  std::string name;
  double error = 0.0;  // max |analytic - numeric| / max(max |analytic|, max |numeric|)
  std::int64_t checked = 0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> inputs;
  double max_error = 0.0;
  bool passed = false;
};

/// Compares reverse-mode gradients of the scalar sum(w * fn()) (w ~ N(0, 1),
/// fixed by the seed) with central differences for every named input.
/// Inputs must be leaves with requires_grad set.
GradcheckReport gradcheck(const std::function<Tensor()>& fn,
                          const std::vector<std::pair<std::string, Tensor>>& inputs,
                          const GradcheckOptions& options = {});

}  // namespace asc
