#include "asc/pipeline/optim.hpp"

#include <cmath>
#include <string>

#include "asc/error.hpp"

namespace asc::pipeline {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorKind::InvalidConfig, what);
}

}  // namespace

void TrainConfig::validate() const {
  require(epochs >= 0, "epochs must be non-negative");
  require(batch_size >= 2, "batch_size must be at least 2 (batchnorm needs two samples)");
  require(base_lr > 0.0 && std::isfinite(base_lr), "base_lr must be positive");
  require(warmup_epochs >= 0, "warmup_epochs must be non-negative");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
  require(weight_decay >= 0.0 && std::isfinite(weight_decay), "weight_decay must be non-negative");
  require(val_split >= 0, "val_split must be non-negative");
  require(train_subset >= 0 && val_subset >= 0, "subset sizes must be non-negative");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    require(milestones[i] > 0, "milestones must be positive");
    require(milestones[i] < epochs, "milestone " + std::to_string(milestones[i]) + " is not below epochs " +
                                        std::to_string(epochs));
    require(i == 0 || milestones[i] > milestones[i - 1], "milestones must be strictly increasing");
  }
}

std::vector<int> default_milestones(int depth) {
  if (depth == 83) return {100, 150};
  return {50, 75};
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs) {
    throw Error(ErrorKind::InvalidConfig, "epoch " + std::to_string(epoch) + " outside [0, " +
                                              std::to_string(cfg.epochs) + ")");
  }
  if (epoch < cfg.warmup_epochs) return cfg.base_lr * (epoch + 1) / cfg.warmup_epochs;
  double lr = cfg.base_lr;
  for (const int m : cfg.milestones)
    if (epoch >= m) lr /= 10.0;
  return lr;
}

SgdState SgdState::create(const std::vector<Parameter>& params) {
  SgdState s;
  s.velocity.reserve(params.size());
  for (const auto& p : params) s.velocity.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
  return s;
}

void sgd_nesterov_step(const std::vector<Parameter>& params, SgdState& state, double lr, const TrainConfig& cfg) {
  if (state.velocity.size() != params.size()) {
    throw Error(ErrorKind::ShapeMismatch, "optimiser state was created for a different parameter list");
  }
  // Check everything first so a bad gradient leaves the model untouched.
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = params[i].tensor;
    if (state.velocity[i].size() != static_cast<std::size_t>(t.numel())) {
      throw Error(ErrorKind::ShapeMismatch, "optimiser state does not match parameter " + params[i].name);
    }
    if (!t.has_grad()) continue;
    for (const float g : t.grad()) {
      if (!std::isfinite(g)) throw Error(ErrorKind::NonFinite, "gradient of parameter " + params[i].name);
    }
  }
  const double mu = cfg.momentum;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto t = params[i].tensor;
    const double wd = params[i].decay ? cfg.weight_decay : 0.0;
    auto theta = t.mutable_data();
    const auto grad = t.has_grad() ? t.grad() : std::span<const float>{};
    auto& v = state.velocity[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double g = grad.empty() ? 0.0 : grad[j];
      const double d = g + wd * theta[j];
      v[j] = mu * v[j] + d;
      const double next = theta[j] - lr * (d + mu * v[j]);
      if (!std::isfinite(next)) throw Error(ErrorKind::NonFinite, "update of parameter " + params[i].name);
      theta[j] = static_cast<float>(next);
    }
  }
}

}  // namespace asc::pipeline
