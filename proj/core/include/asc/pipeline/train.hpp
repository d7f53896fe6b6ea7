#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "asc/models.hpp"
#include "asc/pipeline/data.hpp"
#include "asc/pipeline/optim.hpp"

namespace asc::pipeline {

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;  // NaN without a validation set
  double val_acc = 0.0;
  double wall_seconds = 0.0;
};

struct Evaluation {
  double accuracy = 0.0;
  double loss = 0.0;  // mean cross-entropy
  std::int64_t count = 0;
};

/// Top-1 accuracy (first maximum wins ties) and mean cross-entropy of
/// [N, classes] logits.
Evaluation score_logits(const Tensor& logits, std::span<const int> labels);

/// Eval-mode pass over the whole dataset. Raises EmptyDataset.
Evaluation evaluate(Model& model, const Dataset& data, const Normalization& norm, int batch_size = 128);

struct TrainData {
  Dataset train;
  Dataset val;
  Normalization normalization;
};

/// Applies the subset sizes of cfg to loaded splits.
TrainData prepare(const CifarSplits& splits, const TrainConfig& cfg);

struct TrainHooks {
  std::function<void(const EpochMetrics&)> on_epoch;
  std::function<void(int epoch, std::int64_t step, std::int64_t steps, double loss)> on_step;
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  std::filesystem::path metrics;
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;
  double best_val_accuracy = 0.0;
};

inline constexpr const char* kMetricsHeader = "epoch,lr,train_loss,train_acc,val_loss,val_acc,wall_seconds";

/// Trains from scratch and writes into out_dir: metrics.csv (one row per
/// epoch), final.asck, best.asck (highest validation accuracy; the final
/// weights when there is no validation set) and model.json. With zero
/// epochs the log has only its header and both checkpoints hold the
/// initial weights.
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg, const TrainData& data,
                  const std::filesystem::path& out_dir, const TrainHooks& hooks = {});

}  // namespace asc::pipeline
