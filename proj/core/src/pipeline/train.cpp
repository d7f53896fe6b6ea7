#include "asc/pipeline/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "asc/checkpoint.hpp"
#include "asc/error.hpp"
#include "asc/ops.hpp"
#include "asc/pipeline/config.hpp"

namespace asc::pipeline {

namespace fs = std::filesystem;

namespace {

std::string format_row(const EpochMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.3f", m.epoch, m.lr, m.train_loss, m.train_acc,
                m.val_loss, m.val_acc, m.wall_seconds);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << text;
}

}  // namespace

Evaluation score_logits(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<std::int64_t>(labels.size())) {
    throw Error(ErrorKind::ShapeMismatch, "logits " + to_string(logits.shape()) + " against " +
                                              std::to_string(labels.size()) + " labels");
  }
  const auto N = logits.dim(0), K = logits.dim(1);
  if (N == 0) throw Error(ErrorKind::EmptyDataset, "no samples to score");
  const auto v = logits.data();
  Evaluation e;
  e.count = N;
  std::int64_t correct = 0;
  double loss = 0.0;
  for (std::int64_t i = 0; i < N; ++i) {
    const float* row = v.data() + i * K;
    const auto best = std::max_element(row, row + K) - row;
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= K) throw Error(ErrorKind::LabelOutOfRange, "label " + std::to_string(label));
    correct += best == label;
    double z = 0.0;
    for (std::int64_t k = 0; k < K; ++k) z += std::exp(static_cast<double>(row[k]) - row[best]);
    loss += std::log(z) + row[best] - row[label];
  }
  e.accuracy = static_cast<double>(correct) / static_cast<double>(N);
  e.loss = loss / static_cast<double>(N);
  return e;
}

Evaluation evaluate(Model& model, const Dataset& data, const Normalization& norm, int batch_size) {
  if (data.size() == 0) throw Error(ErrorKind::EmptyDataset, "evaluation set is empty");
  if (batch_size < 1) throw Error(ErrorKind::InvalidConfig, "batch_size must be positive");
  NoGradGuard no_grad;
  Evaluation total;
  double correct = 0.0, loss = 0.0;
  std::vector<std::int64_t> idx;
  for (std::int64_t start = 0; start < data.size(); start += batch_size) {
    const auto end = std::min(data.size(), start + batch_size);
    idx.resize(static_cast<std::size_t>(end - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto batch = make_batch(data, idx, norm);
    const auto e = score_logits(model.forward(batch.images, Mode::Eval), batch.labels);
    correct += e.accuracy * static_cast<double>(e.count);
    loss += e.loss * static_cast<double>(e.count);
    total.count += e.count;
  }
  total.accuracy = correct / static_cast<double>(total.count);
  total.loss = loss / static_cast<double>(total.count);
  return total;
}

TrainData prepare(const CifarSplits& splits, const TrainConfig& cfg) {
  return {head(splits.train, cfg.train_subset), head(splits.val, cfg.val_subset), splits.normalization};
}

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg, const TrainData& data, const fs::path& out_dir,
                  const TrainHooks& hooks) {
  cfg.validate();
  if (cfg.epochs > 0 && data.train.size() < 2) {
    throw Error(ErrorKind::EmptyDataset, "training needs at least two images");
  }
  if (model_cfg.num_classes != data.train.num_classes) {
    throw Error(ErrorKind::InvalidConfig, "model has " + std::to_string(model_cfg.num_classes) +
                                              " classes but the data has " + std::to_string(data.train.num_classes));
  }
  fs::create_directories(out_dir);

  TrainResult result;
  result.metrics = out_dir / "metrics.csv";
  result.final_checkpoint = out_dir / "final.asck";
  result.best_checkpoint = out_dir / "best.asck";
  result.best_val_accuracy = -1.0;

  Model model = build_model(model_cfg);
  write_text(out_dir / "model.json", to_json(ModelCard{model.config(), data.normalization, cfg.seed, cfg.val_split}) + "\n");

  std::ofstream log(result.metrics);
  if (!log) throw Error(ErrorKind::Io, "cannot write " + result.metrics.string());
  log << kMetricsHeader << '\n' << std::flush;

  Rng master(cfg.seed);
  Rng order_rng = master.split();
  Rng augment_rng = master.split();
  auto state = SgdState::create(model.parameters());

  std::vector<std::int64_t> order(static_cast<std::size_t>(data.train.size()));
  std::iota(order.begin(), order.end(), 0);
  const auto n = data.train.size();
  const std::int64_t steps = n / cfg.batch_size + (n % cfg.batch_size >= 2 ? 1 : 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr_at(epoch, cfg);
    shuffle(std::span(order), order_rng);

    double loss_sum = 0.0, correct = 0.0;
    std::int64_t seen = 0;
    for (std::int64_t step = 0; step < steps; ++step) {
      const auto begin = step * cfg.batch_size;
      const auto end = std::min(n, begin + cfg.batch_size);
      const std::span<const std::int64_t> idx(order.data() + begin, static_cast<std::size_t>(end - begin));
      const auto batch = make_batch(data.train, idx, data.normalization, &augment_rng);

      const Tensor logits = model.forward(batch.images, Mode::Train);
      const Tensor loss = cross_entropy(logits, batch.labels);
      backward(loss);
      sgd_nesterov_step(model.parameters(), state, m.lr, cfg);
      for (const auto& p : model.parameters()) {
        auto t = p.tensor;
        t.zero_grad();
      }

      const auto e = score_logits(logits, batch.labels);
      const auto b = static_cast<double>(e.count);
      loss_sum += static_cast<double>(loss.item()) * b;
      correct += e.accuracy * b;
      seen += e.count;
      if (hooks.on_step) hooks.on_step(epoch, step, steps, loss.item());
    }
    m.train_loss = loss_sum / static_cast<double>(seen);
    m.train_acc = correct / static_cast<double>(seen);

    if (data.val.size() > 0) {
      const auto v = evaluate(model, data.val, data.normalization, cfg.batch_size);
      m.val_loss = v.loss;
      m.val_acc = v.accuracy;
    } else {
      m.val_loss = m.val_acc = std::numeric_limits<double>::quiet_NaN();
    }
    m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    const bool improved = data.val.size() == 0 || m.val_acc > result.best_val_accuracy;
    if (improved) {
      result.best_val_accuracy = data.val.size() == 0 ? m.train_acc : m.val_acc;
      write_checkpoint(result.best_checkpoint, model.state());
    }
    log << format_row(m) << '\n' << std::flush;
    result.epochs.push_back(m);
    if (hooks.on_epoch) hooks.on_epoch(m);
  }

  write_checkpoint(result.final_checkpoint, model.state());
  if (cfg.epochs == 0) write_checkpoint(result.best_checkpoint, model.state());
  return result;
}

}  // namespace asc::pipeline
