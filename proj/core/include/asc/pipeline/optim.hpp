#pragma once

#include <cstdint>
#include <vector>

#include "asc/models.hpp"

namespace asc::pipeline {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 128;
  double base_lr = 0.1;
  int warmup_epochs = 10;
  std::vector<int> milestones{50, 75};
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::int64_t val_split = 5000;
  std::uint64_t seed = 0;
  /// Train on the first n images of the shuffled training split (0: all).
  std::int64_t train_subset = 0;
  /// Validate on the first n images of the validation split (0: all).
  std::int64_t val_subset = 0;

  /// Raises InvalidConfig unless the fields are consistent.
  void validate() const;
};

/// {50, 75} for 29-layer networks, {100, 150} for 83-layer ones.
std::vector<int> default_milestones(int depth);

/// Linear warmup base_lr * (e + 1) / warmup_epochs, then base_lr divided by 10
/// at every milestone reached.
double lr_at(int epoch, const TrainConfig& cfg);

struct SgdState {
  std::vector<std::vector<double>> velocity;

  static SgdState create(const std::vector<Parameter>& params);
};

/// Nesterov momentum with weight decay folded into the gradient:
/// d = g + wd * theta, v = mu * v + d, theta -= lr * (d + mu * v).
/// Parameters marked decay == false skip the wd term; parameters without a
/// gradient are treated as having a zero gradient.
void sgd_nesterov_step(const std::vector<Parameter>& params, SgdState& state, double lr, const TrainConfig& cfg);

}  // namespace asc::pipeline
