#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <set>
#include <string>

#include "asc/checkpoint.hpp"
#include "asc/error.hpp"
#include "asc/models.hpp"
#include "asc/pipeline/config.hpp"
#include "asc/pipeline/data.hpp"
#include "asc/pipeline/equivariance.hpp"
#include "asc/pipeline/gradcheck_targets.hpp"
#include "asc/pipeline/optim.hpp"
#include "asc/pipeline/train.hpp"
#include "helpers.hpp"

using namespace asc;
using namespace asc::pipeline;
namespace fs = std::filesystem;

namespace {

template <typename Fn>
ErrorKind kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::Io;
}

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("asc_test_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

// Record r carries its global index in its first two pixel bytes and label r % classes.
std::vector<std::uint8_t> synthetic_records(CifarKind kind, std::int64_t first, std::int64_t count, int classes) {
  const auto len = record_length(kind);
  const int off = kind == CifarKind::Cifar100 ? 2 : 1;
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(len * count), 0);
  for (std::int64_t r = 0; r < count; ++r) {
    auto* rec = bytes.data() + r * len;
    const auto index = first + r;
    if (kind == CifarKind::Cifar100) rec[0] = static_cast<std::uint8_t>((index % classes) / 5);
    rec[off - 1] = static_cast<std::uint8_t>(index % classes);
    rec[off] = static_cast<std::uint8_t>(index >> 8);
    rec[off + 1] = static_cast<std::uint8_t>(index & 0xff);
    for (std::int64_t p = 2; p < kImageBytes; ++p) rec[off + p] = static_cast<std::uint8_t>((index * 7 + p) % 251);
  }
  return bytes;
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int record_index(const Dataset& d, std::int64_t i) {
  const auto img = d.image(i);
  return img[0] * 256 + img[1];
}

// Images whose colour depends on the label, with a little per-image noise.
Dataset colour_coded(std::int64_t count, int classes_used, std::uint64_t seed) {
  Dataset d;
  d.num_classes = 10;
  Rng rng(seed);
  for (std::int64_t i = 0; i < count; ++i) {
    const int label = static_cast<int>(i % classes_used);
    d.labels.push_back(label);
    const int level[3] = {40 + 50 * label, 220 - 50 * label, label % 2 ? 200 : 50};
    for (int c = 0; c < 3; ++c)
      for (std::int64_t p = 0; p < kImageSide * kImageSide; ++p) {
        const int v = level[c] + static_cast<int>(rng.below(31)) - 15;
        d.pixels.push_back(static_cast<std::uint8_t>(std::clamp(v, 0, 255)));
      }
  }
  return d;
}

}  // namespace

TEST(Decode, LayoutAndLabels) {
  const auto bytes = synthetic_records(CifarKind::Cifar10, 0, 3, 10);
  const auto d = decode_cifar(bytes, CifarKind::Cifar10, 3);
  ASSERT_EQ(d.size(), 3);
  EXPECT_EQ(d.labels, (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(d.pixels.size(), 3u * 3072u);
  EXPECT_EQ(record_index(d, 2), 2);
  EXPECT_EQ(d.image(1)[100], bytes[3073 + 1 + 100]);
}

TEST(Decode, RecordLengths) {
  EXPECT_EQ(record_length(CifarKind::Cifar10), 3073);
  EXPECT_EQ(record_length(CifarKind::Cifar100), 3074);
  EXPECT_EQ(record_length(CifarKind::Cifar10) * 10000, 30730000);
}

TEST(Decode, Cifar100UsesFineLabel) {
  const auto bytes = synthetic_records(CifarKind::Cifar100, 0, 4, 100);
  auto copy = bytes;
  copy[3074 * 3 + 1] = 87;
  const auto d = decode_cifar(copy, CifarKind::Cifar100, 4);
  EXPECT_EQ(d.num_classes, 100);
  EXPECT_EQ(d.labels, (std::vector<int>{0, 1, 2, 87}));
}

TEST(Decode, TruncatedOrOversizedFile) {
  auto bytes = synthetic_records(CifarKind::Cifar10, 0, 2, 10);
  bytes.pop_back();
  EXPECT_EQ(kind_of([&] { decode_cifar(bytes, CifarKind::Cifar10, 2); }), ErrorKind::FileTruncated);
  bytes.push_back(0);
  bytes.push_back(0);
  EXPECT_EQ(kind_of([&] { decode_cifar(bytes, CifarKind::Cifar10, 2); }), ErrorKind::FileTruncated);
}

TEST(Decode, LabelOutOfRange) {
  auto bytes = synthetic_records(CifarKind::Cifar10, 0, 2, 10);
  bytes[3073] = 255;
  EXPECT_EQ(kind_of([&] { decode_cifar(bytes, CifarKind::Cifar10, 2); }), ErrorKind::LabelOutOfRange);
}

TEST(Subsets, SelectAndHead) {
  const auto d = decode_cifar(synthetic_records(CifarKind::Cifar10, 0, 5, 10), CifarKind::Cifar10, 5);
  const std::vector<std::int64_t> idx{4, 1};
  const auto s = select(d, idx);
  EXPECT_EQ(s.labels, (std::vector<int>{4, 1}));
  EXPECT_EQ(record_index(s, 0), 4);
  EXPECT_EQ(head(d, 2).size(), 2);
  EXPECT_EQ(head(d, 0).size(), 5);
  EXPECT_EQ(head(d, 99).size(), 5);
}

TEST(LoadCifar, SplitsAreDisjointAndSeeded) {
  TempDir dir("load10");
  const fs::path sub = dir.path() / "cifar-10-batches-bin";
  fs::create_directories(sub);
  for (int b = 0; b < 5; ++b)
    write_bytes(sub / ("data_batch_" + std::to_string(b + 1) + ".bin"),
                synthetic_records(CifarKind::Cifar10, b * 10000, 10000, 10));
  write_bytes(sub / "test_batch.bin", synthetic_records(CifarKind::Cifar10, 50000 % 65536, 10000, 10));

  EXPECT_EQ(detect_cifar(dir.path()), CifarKind::Cifar10);
  const auto a = load_cifar(dir.path(), 3);
  EXPECT_EQ(a.train.size(), 45000);
  EXPECT_EQ(a.val.size(), 5000);
  EXPECT_EQ(a.test.size(), 10000);

  std::set<int> seen;
  for (std::int64_t i = 0; i < a.train.size(); ++i) seen.insert(record_index(a.train, i));
  for (std::int64_t i = 0; i < a.val.size(); ++i) seen.insert(record_index(a.val, i));
  EXPECT_EQ(seen.size(), 50000u);
  for (std::int64_t i = 0; i < a.train.size(); i += 997) EXPECT_EQ(a.train.labels[i], record_index(a.train, i) % 10);

  const auto b = load_cifar(dir.path(), 3);
  EXPECT_EQ(a.val.pixels, b.val.pixels);
  const auto c = load_cifar(dir.path(), 4);
  EXPECT_NE(a.val.pixels, c.val.pixels);

  const auto val_only = load_cifar(dir.path(), Split::Val, 3);
  EXPECT_EQ(val_only.pixels, a.val.pixels);
  EXPECT_EQ(load_cifar(dir.path(), 3, 1000).val.size(), 1000);
}

TEST(LoadCifar, MissingFiles) {
  TempDir dir("missing");
  EXPECT_EQ(kind_of([&] { load_cifar(dir.path(), 0); }), ErrorKind::Io);
  write_bytes(dir.path() / "train.bin", synthetic_records(CifarKind::Cifar100, 0, 10, 100));
  write_bytes(dir.path() / "test.bin", synthetic_records(CifarKind::Cifar100, 0, 10, 100));
  EXPECT_EQ(detect_cifar(dir.path()), CifarKind::Cifar100);
  EXPECT_EQ(kind_of([&] { load_cifar(dir.path(), 0); }), ErrorKind::FileTruncated);
}

TEST(Normalization, MatchesDirectStatistics) {
  const auto d = colour_coded(12, 4, 1);
  const auto n = Normalization::fit(d);
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0, sq = 0.0, count = 0.0;
    for (std::int64_t i = 0; i < d.size(); ++i)
      for (std::int64_t p = 0; p < 1024; ++p) {
        const double v = d.image(i)[c * 1024 + p] / 255.0;
        sum += v;
        sq += v * v;
        count += 1;
      }
    const double mean = sum / count;
    EXPECT_NEAR(n.mean[c], mean, 1e-6);
    EXPECT_NEAR(n.stddev[c], std::sqrt(sq / count - mean * mean), 1e-5);
  }
}

TEST(Augment, CentreCropIsIdentityAndFlipIsInvolution) {
  const auto d = colour_coded(1, 1, 2);
  const auto img = to_unit(d.image(0));
  EXPECT_EQ(augment(img, CropFlip{2, 2, false}), img);
  const auto flipped = augment(img, CropFlip{2, 2, true});
  EXPECT_NE(flipped, img);
  EXPECT_EQ(augment(flipped, CropFlip{2, 2, true}), img);
}

TEST(Augment, CornerCropMatchesIndexOracle) {
  std::vector<float> img(static_cast<std::size_t>(kImageBytes));
  std::iota(img.begin(), img.end(), 1.0f);
  for (const auto draw : {CropFlip{0, 0, false}, CropFlip{4, 1, true}, CropFlip{3, 4, false}}) {
    const auto out = augment(img, draw);
    ASSERT_EQ(out.size(), img.size());
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 32; ++i)
        for (int j = 0; j < 32; ++j) {
          const int jj = draw.flip ? 31 - j : j;
          const int si = draw.row + i - 2, sj = draw.col + jj - 2;
          const float want = si < 0 || si >= 32 || sj < 0 || sj >= 32 ? 0.0f : img[(c * 32 + si) * 32 + sj];
          ASSERT_EQ(out[(c * 32 + i) * 32 + j], want) << c << " " << i << " " << j;
        }
  }
}

TEST(Augment, DrawsCoverEveryOffset) {
  Rng rng(5);
  std::set<std::tuple<int, int, bool>> seen;
  for (int t = 0; t < 2000; ++t) {
    const auto d = draw_crop_flip(rng);
    ASSERT_GE(d.row, 0);
    ASSERT_LE(d.row, 4);
    ASSERT_GE(d.col, 0);
    ASSERT_LE(d.col, 4);
    seen.insert({d.row, d.col, d.flip});
  }
  EXPECT_EQ(seen.size(), 50u);
}

TEST(MakeBatch, NormalisesPerChannel) {
  const auto d = colour_coded(6, 3, 3);
  const auto norm = Normalization::fit(d);
  const std::vector<std::int64_t> idx{5, 0, 2};
  const auto batch = make_batch(d, idx, norm);
  ASSERT_EQ(batch.images.shape(), (Shape{3, 3, 32, 32}));
  EXPECT_EQ(batch.labels, (std::vector<int>{2, 0, 2}));
  for (int b = 0; b < 3; ++b)
    for (int c = 0; c < 3; ++c) {
      const double raw = d.image(idx[b])[c * 1024 + 77] / 255.0;
      EXPECT_NEAR(batch.images.at({b, c, 2, 13}), (raw - norm.mean[c]) / norm.stddev[c], 1e-5);
    }
  Rng rng(1);
  const auto augmented = make_batch(d, idx, norm, &rng);
  EXPECT_EQ(augmented.images.shape(), batch.images.shape());
  EXPECT_EQ(augmented.labels, batch.labels);
}

TEST(Schedule, WarmupThenSteps) {
  TrainConfig cfg;
  EXPECT_NEAR(lr_at(0, cfg), 0.01, 1e-12);
  EXPECT_NEAR(lr_at(9, cfg), 0.1, 1e-12);
  EXPECT_NEAR(lr_at(10, cfg), 0.1, 1e-12);
  EXPECT_NEAR(lr_at(49, cfg), 0.1, 1e-12);
  EXPECT_NEAR(lr_at(50, cfg), 0.01, 1e-12);
  EXPECT_NEAR(lr_at(75, cfg), 0.001, 1e-12);
  EXPECT_NEAR(lr_at(99, cfg), 0.001, 1e-12);
  for (int e = cfg.warmup_epochs; e + 1 < cfg.epochs; ++e) EXPECT_GE(lr_at(e, cfg), lr_at(e + 1, cfg));
  EXPECT_EQ(kind_of([&] { lr_at(100, cfg); }), ErrorKind::InvalidConfig);
  EXPECT_EQ(kind_of([&] { lr_at(-1, cfg); }), ErrorKind::InvalidConfig);
  EXPECT_EQ(default_milestones(83), (std::vector<int>{100, 150}));
  EXPECT_EQ(default_milestones(29), (std::vector<int>{50, 75}));
  cfg.warmup_epochs = 0;
  EXPECT_NEAR(lr_at(0, cfg), 0.1, 1e-12);
}

TEST(Schedule, ValidateRejectsInconsistentFields) {
  const auto bad = [](auto edit) {
    TrainConfig cfg;
    edit(cfg);
    return kind_of([&] { cfg.validate(); });
  };
  EXPECT_EQ(bad([](TrainConfig& c) { c.batch_size = 1; }), ErrorKind::InvalidConfig);
  EXPECT_EQ(bad([](TrainConfig& c) { c.momentum = 1.0; }), ErrorKind::InvalidConfig);
  EXPECT_EQ(bad([](TrainConfig& c) { c.milestones = {75, 50}; }), ErrorKind::InvalidConfig);
  EXPECT_EQ(bad([](TrainConfig& c) { c.milestones = {50, 100}; }), ErrorKind::InvalidConfig);
  EXPECT_EQ(bad([](TrainConfig& c) { c.epochs = -1; }), ErrorKind::InvalidConfig);
  EXPECT_NO_THROW(TrainConfig{}.validate());
}

TEST(Sgd, PlainStepWithoutMomentumOrDecay) {
  Tensor w = Tensor::from({3}, {1.0f, 2.0f, 3.0f}, true);
  const std::vector<Parameter> params{{"w", w, true}};
  auto g = w.mutable_grad();
  g[0] = 1.0f, g[1] = -2.0f, g[2] = 0.5f;
  TrainConfig cfg;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  auto state = SgdState::create(params);
  sgd_nesterov_step(params, state, 0.1, cfg);
  EXPECT_NEAR(w.data()[0], 0.9, 1e-6);
  EXPECT_NEAR(w.data()[1], 2.2, 1e-6);
  EXPECT_NEAR(w.data()[2], 2.95, 1e-6);
}

TEST(Sgd, ZeroGradientLeavesWeightsAlone) {
  Tensor w = Tensor::from({2}, {1.5f, -0.5f}, true);
  Tensor b = Tensor::from({1}, {4.0f}, true);
  const std::vector<Parameter> params{{"w", w, false}, {"b", b, true}};
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  auto state = SgdState::create(params);
  for (int step = 0; step < 3; ++step) sgd_nesterov_step(params, state, 0.1, cfg);
  EXPECT_EQ(w.data()[0], 1.5f);
  EXPECT_EQ(w.data()[1], -0.5f);
  EXPECT_EQ(b.data()[0], 4.0f);
}

TEST(Sgd, NesterovMatchesScalarRecurrence) {
  // Loss 0.5 * a * theta^2, so g = a * theta.
  const double a = 2.0, lr = 0.05, mu = 0.9, wd = 0.01;
  for (const bool decay : {true, false}) {
    Tensor w = Tensor::from({1}, {1.0f}, true);
    const std::vector<Parameter> params{{"w", w, decay}};
    TrainConfig cfg;
    cfg.momentum = mu;
    cfg.weight_decay = wd;
    auto state = SgdState::create(params);
    double theta = 1.0, v = 0.0;
    for (int step = 0; step < 5; ++step) {
      w.zero_grad();
      w.mutable_grad()[0] = static_cast<float>(a * w.data()[0]);
      sgd_nesterov_step(params, state, lr, cfg);
      const double d = a * theta + (decay ? wd : 0.0) * theta;
      v = mu * v + d;
      theta -= lr * (d + mu * v);
      EXPECT_NEAR(w.data()[0], theta, 1e-6) << step;
    }
  }
}

TEST(Sgd, NonFiniteGradientNamesParameterAndChangesNothing) {
  Tensor w = Tensor::from({2}, {1.0f, 2.0f}, true);
  Tensor v = Tensor::from({1}, {3.0f}, true);
  const std::vector<Parameter> params{{"first", w, true}, {"stage2.conv.weight", v, true}};
  w.mutable_grad()[0] = 1.0f;
  v.mutable_grad()[0] = std::numeric_limits<float>::quiet_NaN();
  auto state = SgdState::create(params);
  try {
    sgd_nesterov_step(params, state, 0.1, TrainConfig{});
    FAIL() << "no error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFinite);
    EXPECT_NE(std::string(e.what()).find("stage2.conv.weight"), std::string::npos);
  }
  EXPECT_EQ(w.data()[0], 1.0f);
  EXPECT_EQ(v.data()[0], 3.0f);
}

TEST(Config, ParsesAndFillsDefaults) {
  const auto cfg = parse_run_config(R"({"model": {"variant": "p4resnet29_asc", "seed": 7},
                                       "train": {"epochs": 60, "batch_size": 64, "train_subset": 5000}})");
  EXPECT_EQ(cfg.model.variant, "p4resnet29_asc");
  EXPECT_EQ(cfg.model.seed, 7u);
  EXPECT_EQ(cfg.model.num_classes, 10);
  EXPECT_EQ(cfg.train.epochs, 60);
  EXPECT_EQ(cfg.train.batch_size, 64);
  EXPECT_EQ(cfg.train.train_subset, 5000);
  EXPECT_EQ(cfg.train.milestones, (std::vector<int>{50}));
  EXPECT_DOUBLE_EQ(cfg.train.base_lr, 0.1);

  EXPECT_EQ(parse_run_config(R"({"model": {"variant": "resnet83"}, "train": {"epochs": 200}})").train.milestones,
            (std::vector<int>{100, 150}));
  EXPECT_EQ(parse_run_config("{}").train.milestones, (std::vector<int>{50, 75}));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  for (const char* text : {R"({"modle": {}})", R"({"train": {"lr": 0.1}})", R"({"model": {"depth": 29}})",
                           R"({"train": {"epochs": "ten"}})", R"({"train": {"batch_size": 1}})",
                           R"({"train": {"milestones": [80, 40]}})", "[1, 2]", "{not json"}) {
    EXPECT_EQ(kind_of([&] { parse_run_config(text); }), ErrorKind::InvalidConfig) << text;
  }
  EXPECT_EQ(kind_of([] { parse_run_config(R"({"model": {"variant": "resnet30"}})"); }), ErrorKind::UnknownVariant);
}

TEST(Config, RoundTrips) {
  auto cfg = parse_run_config(R"({"model": {"variant": "resnet29_asc_se", "num_classes": 100},
                                  "train": {"epochs": 3, "warmup_epochs": 0, "milestones": [1, 2], "seed": 9}})");
  const auto back = parse_run_config(to_json(cfg));
  EXPECT_EQ(back.model.variant, cfg.model.variant);
  EXPECT_EQ(back.model.num_classes, 100);
  EXPECT_EQ(back.train.milestones, cfg.train.milestones);
  EXPECT_EQ(back.train.seed, 9u);
  EXPECT_EQ(to_json(back), to_json(cfg));

  ModelCard card{{"p4resnet29", 10, 3, 4}, {}, 11, 2000};
  card.normalization.mean = {0.25f, 0.5f, 0.75f};
  card.normalization.stddev = {0.1f, 0.2f, 0.3f};
  const auto card2 = parse_model_card(to_json(card));
  EXPECT_EQ(card2.model.variant, "p4resnet29");
  EXPECT_EQ(card2.model.n, 3);
  EXPECT_EQ(card2.model.seed, 4u);
  EXPECT_EQ(card2.normalization.mean, card.normalization.mean);
  EXPECT_EQ(card2.normalization.stddev, card.normalization.stddev);
  EXPECT_EQ(card2.split_seed, 11u);
  EXPECT_EQ(card2.val_split, 2000);
  EXPECT_EQ(kind_of([] { parse_model_card(R"({"model": {}})"); }), ErrorKind::InvalidConfig);
}

TEST(Scoring, AccuracyAndCrossEntropyMatchLoops) {
  Rng rng(8);
  const Tensor logits = test::randn({7, 4}, rng, 2.0);
  const std::vector<int> labels{0, 1, 2, 3, 3, 2, 1};
  const auto e = score_logits(logits, labels);
  double correct = 0.0, loss = 0.0;
  for (int i = 0; i < 7; ++i) {
    int best = 0;
    double z = 0.0;
    for (int k = 0; k < 4; ++k) {
      if (logits.at({i, k}) > logits.at({i, best})) best = k;
      z += std::exp(static_cast<double>(logits.at({i, k})));
    }
    correct += best == labels[i];
    loss += std::log(z) - logits.at({i, labels[i]});
  }
  EXPECT_EQ(e.count, 7);
  EXPECT_NEAR(e.accuracy, correct / 7.0, 1e-12);
  EXPECT_NEAR(e.loss, loss / 7.0, 1e-6);

  const Tensor perfect = Tensor::from({2, 3}, {9, 0, 0, 0, 0, 9});
  EXPECT_EQ(score_logits(perfect, std::vector<int>{0, 2}).accuracy, 1.0);
  const Tensor tie = Tensor::from({1, 3}, {1, 1, 1});
  EXPECT_EQ(score_logits(tie, std::vector<int>{0}).accuracy, 1.0);
  EXPECT_EQ(score_logits(tie, std::vector<int>{1}).accuracy, 0.0);
  EXPECT_NEAR(score_logits(tie, std::vector<int>{1}).loss, std::log(3.0), 1e-6);
  EXPECT_EQ(kind_of([&] { score_logits(perfect, std::vector<int>{0}); }), ErrorKind::ShapeMismatch);
  EXPECT_EQ(kind_of([&] { score_logits(perfect, std::vector<int>{0, 3}); }), ErrorKind::LabelOutOfRange);
}

TEST(Evaluate, EmptySetAndBatchSizeIndependence) {
  Model model = build_model({"resnet29", 10, 0, 1});
  const Dataset empty;
  EXPECT_EQ(kind_of([&] { evaluate(model, empty, Normalization{}); }), ErrorKind::EmptyDataset);

  const auto d = colour_coded(20, 10, 4);
  const auto norm = Normalization::fit(d);
  const auto a = evaluate(model, d, norm, 20);
  const auto b = evaluate(model, d, norm, 7);
  EXPECT_EQ(a.count, 20);
  EXPECT_DOUBLE_EQ(a.accuracy, b.accuracy);
  EXPECT_NEAR(a.loss, b.loss, 1e-5);
  EXPECT_TRUE(std::isfinite(a.loss));
}

TEST(Train, ZeroEpochsWritesHeaderAndInitialWeights) {
  TempDir dir("zero_epochs");
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.milestones = {};
  const auto d = colour_coded(4, 2, 5);
  const TrainData data{d, {}, Normalization::fit(d)};
  const ModelConfig mc{"resnet29", 10, 0, 3};
  const auto result = train(mc, cfg, data, dir.path());
  EXPECT_TRUE(result.epochs.empty());
  std::ifstream log(result.metrics);
  std::string line;
  std::getline(log, line);
  EXPECT_EQ(line, kMetricsHeader);
  EXPECT_FALSE(std::getline(log, line));

  const auto initial = build_model(mc).state();
  for (const auto& path : {result.final_checkpoint, result.best_checkpoint}) {
    const auto saved = read_checkpoint(path);
    ASSERT_EQ(saved.size(), initial.size());
    for (std::size_t i = 0; i < saved.size(); ++i) EXPECT_EQ(test::max_abs_diff(saved[i].tensor, initial[i].tensor), 0.0);
  }
  const auto card = load_model_card(dir.path() / "model.json");
  EXPECT_EQ(card.model.variant, "resnet29");
  EXPECT_EQ(card.model.seed, 3u);
}

TEST(Train, RejectsClassMismatchAndTinyData) {
  TempDir dir("mismatch");
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.milestones = {};
  const auto d = colour_coded(4, 2, 5);
  EXPECT_EQ(kind_of([&] { train({"resnet29", 100, 0, 0}, cfg, {d, {}, Normalization::fit(d)}, dir.path()); }),
            ErrorKind::InvalidConfig);
  const auto one = head(d, 1);
  EXPECT_EQ(kind_of([&] { train({"resnet29", 10, 0, 0}, cfg, {one, {}, Normalization::fit(d)}, dir.path()); }),
            ErrorKind::EmptyDataset);
}

TEST(Train, SyntheticLossDecreases) {
  TempDir dir("smoke");
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.warmup_epochs = 0;
  cfg.base_lr = 0.05;
  cfg.milestones = {};
  cfg.seed = 1;
  const auto d = colour_coded(48, 4, 6);
  const TrainData data{d, colour_coded(16, 4, 7), Normalization::fit(d)};
  int steps_seen = 0;
  TrainHooks hooks;
  hooks.on_step = [&](int, std::int64_t, std::int64_t, double loss) {
    ++steps_seen;
    EXPECT_TRUE(std::isfinite(loss));
  };
  const auto result = train({"resnet29_asc", 10, 0, 1}, cfg, data, dir.path(), hooks);
  ASSERT_EQ(result.epochs.size(), 3u);
  EXPECT_EQ(steps_seen, 9);
  for (std::size_t e = 1; e < result.epochs.size(); ++e)
    EXPECT_LT(result.epochs[e].train_loss, result.epochs[e - 1].train_loss) << e;
  EXPECT_GT(result.epochs.back().train_acc, 0.25);
  EXPECT_TRUE(fs::exists(result.best_checkpoint));
  EXPECT_GE(result.best_val_accuracy, 0.0);

  std::ifstream log(result.metrics);
  std::string line;
  int rows = 0;
  while (std::getline(log, line)) ++rows;
  EXPECT_EQ(rows, 4);
}

TEST(Train, SameSeedGivesIdenticalRuns) {
  TempDir a("det_a"), b("det_b");
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  cfg.warmup_epochs = 0;
  cfg.milestones = {};
  cfg.seed = 5;
  const auto d = colour_coded(17, 4, 8);
  const TrainData data{d, {}, Normalization::fit(d)};
  const ModelConfig mc{"p4resnet29", 10, 0, 2};
  const auto ra = train(mc, cfg, data, a.path());
  const auto rb = train(mc, cfg, data, b.path());
  EXPECT_EQ(ra.epochs[0].train_loss, rb.epochs[0].train_loss);
  EXPECT_EQ(read_bytes(ra.final_checkpoint), read_bytes(rb.final_checkpoint));
  EXPECT_FALSE(read_bytes(ra.final_checkpoint).empty());

  TempDir c("det_c");
  cfg.seed = 6;
  const auto rc = train(mc, cfg, data, c.path());
  EXPECT_NE(read_bytes(ra.final_checkpoint), read_bytes(rc.final_checkpoint));
}

TEST(Equivariance, EveryLayerTargetPasses) {
  for (const auto& target : equivariance_layer_targets()) {
    const auto report = check_equivariance(target, {5, 0.0, 1, false});
    EXPECT_TRUE(report.passed()) << target;
    EXPECT_FALSE(report.properties.empty()) << target;
    for (const auto& p : report.properties) {
      EXPECT_GE(p.trials, 5) << target << " " << p.name;
      EXPECT_EQ(p.tolerance, 1e-5);
    }
  }
}

TEST(Equivariance, BrokenConventionIsCaught) {
  for (const char* target : {"lifting_conv", "group_conv", "p4_simple_asc", "p4_asc"}) {
    const auto report = check_equivariance(target, {5, 0.0, 0, true});
    EXPECT_FALSE(report.passed()) << target;
  }
  EXPECT_EQ(kind_of([] { check_equivariance("not_a_layer"); }), ErrorKind::UnknownTarget);
}

TEST(Gradcheck, EveryTargetPasses) {
  const auto targets = gradcheck_targets();
  EXPECT_GE(targets.size(), 20u);
  for (const auto& target : targets) {
    const auto report = run_gradcheck(target);
    EXPECT_TRUE(report.passed) << target << " " << report.max_error;
    EXPECT_FALSE(report.inputs.empty()) << target;
  }
  EXPECT_EQ(kind_of([] { run_gradcheck("nope"); }), ErrorKind::UnknownTarget);
}
