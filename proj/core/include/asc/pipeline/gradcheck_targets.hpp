#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "asc/gradcheck.hpp"

namespace asc::pipeline {

/// One small instance per layer type, checked with central differences.
std::vector<std::string> gradcheck_targets();

/// Raises UnknownTarget.
GradcheckReport run_gradcheck(const std::string& target, const GradcheckOptions& options = {});

}  // namespace asc::pipeline
