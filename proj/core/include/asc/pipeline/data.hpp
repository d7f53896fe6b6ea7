#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "asc/random.hpp"
#include "asc/tensor.hpp"

namespace asc::pipeline {

inline constexpr std::int64_t kImageSide = 32;
inline constexpr std::int64_t kImageBytes = 3 * kImageSide * kImageSide;

enum class CifarKind { Cifar10, Cifar100 };
enum class Split { Train, Val, Test };

/// Raw CIFAR images: pixels holds size() records of 3072 bytes, channel-planar
/// R, G, B with each plane row-major.
struct Dataset {
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;
  int num_classes = 10;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
  std::span<const std::uint8_t> image(std::int64_t index) const;
};

std::int64_t record_length(CifarKind kind);

/// Decodes one binary batch file. The byte count must be exactly
/// record_length(kind) * expected_records.
Dataset decode_cifar(std::span<const std::uint8_t> bytes, CifarKind kind, std::int64_t expected_records);

/// Copies the listed records, in order.
Dataset select(const Dataset& data, std::span<const std::int64_t> indices);
/// The first n records (all of them when n <= 0 or n >= size).
Dataset head(const Dataset& data, std::int64_t n);

/// Per-channel statistics of pixel values scaled to [0, 1].
struct Normalization {
  std::array<float, 3> mean{0.0f, 0.0f, 0.0f};
  std::array<float, 3> stddev{1.0f, 1.0f, 1.0f};

  static Normalization fit(const Dataset& data);
};

struct CifarSplits {
  CifarKind kind = CifarKind::Cifar10;
  Dataset train, val, test;
  Normalization normalization;  // fitted on train
};

/// Looks for the CIFAR-10 (data_batch_1..5.bin, test_batch.bin) or CIFAR-100
/// (train.bin, test.bin) files in dir or its usual extracted subdirectory.
CifarKind detect_cifar(const std::filesystem::path& dir);

/// Reads the training and test files and splits the training set into train and
/// validation parts by a shuffle seeded with split_seed.
CifarSplits load_cifar(const std::filesystem::path& dir, std::uint64_t split_seed, std::int64_t val_size = 5000);
Dataset load_cifar(const std::filesystem::path& dir, Split split, std::uint64_t split_seed,
                   std::int64_t val_size = 5000);

/// One image [3, 32, 32] as floats in [0, 1].
std::vector<float> to_unit(std::span<const std::uint8_t> image);

struct CropFlip {
  int row = 2;
  int col = 2;
  bool flip = false;
};

CropFlip draw_crop_flip(Rng& rng);

/// Zero-pads a [3, 32, 32] image to 36 x 36, crops 32 x 32 at (row, col) and
/// optionally mirrors it left to right.
std::vector<float> augment(std::span<const float> image, const CropFlip& draw);
std::vector<float> augment(std::span<const float> image, Rng& rng);

struct Batch {
  Tensor images;  // [B, 3, 32, 32], normalised
  std::vector<int> labels;
};

/// Gathers records into a normalised batch. With an rng, every image is
/// augmented (in [0, 1] pixel space) before normalisation.
Batch make_batch(const Dataset& data, std::span<const std::int64_t> indices, const Normalization& norm,
                 Rng* augment_rng = nullptr);

}  // namespace asc::pipeline
