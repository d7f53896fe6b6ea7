#pragma once

// Hooks that let tests pin the attention weights. Only available in builds
// configured with ASC_ENABLE_TEST_HOOKS.
#ifndef ASC_TEST_HOOKS
#error "asc/testing.hpp needs a build configured with ASC_ENABLE_TEST_HOOKS=ON"
#endif

namespace asc::testing {

enum class ScoreOverride {
  None,     // softmax of the scores
  Ones,     // every weight is 1
  Uniform,  // every weight is 1 / (k*k)
};

ScoreOverride score_override();

/// Replaces the softmax weights of every attention op on this thread while alive.
class ScopedScoreOverride {
 public:
  explicit ScopedScoreOverride(ScoreOverride mode);
  ~ScopedScoreOverride();
  ScopedScoreOverride(const ScopedScoreOverride&) = delete;
  ScopedScoreOverride& operator=(const ScopedScoreOverride&) = delete;

 private:
  ScoreOverride previous_;
};

}  // namespace asc::testing
