#include "asc/pipeline/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>

#include "asc/error.hpp"

namespace asc::pipeline {

namespace fs = std::filesystem;

namespace {

constexpr std::int64_t kPlane = kImageSide * kImageSide;

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

void append(Dataset& into, Dataset&& part) {
  into.pixels.insert(into.pixels.end(), part.pixels.begin(), part.pixels.end());
  into.labels.insert(into.labels.end(), part.labels.begin(), part.labels.end());
  into.num_classes = part.num_classes;
}

fs::path resolve_dir(const fs::path& dir) {
  for (const auto& candidate : {dir, dir / "cifar-10-batches-bin", dir / "cifar-100-binary"}) {
    if (fs::exists(candidate / "data_batch_1.bin") || fs::exists(candidate / "train.bin")) return candidate;
  }
  throw Error(ErrorKind::Io, "no CIFAR-10 or CIFAR-100 binary files under " + dir.string());
}

Dataset read_batch(const fs::path& path, CifarKind kind, std::int64_t records) {
  const auto bytes = read_file(path);
  try {
    return decode_cifar(bytes, kind, records);
  } catch (const Error& e) {
    const std::string detail = e.what();
    throw Error(e.kind(), path.filename().string() + ": " + detail.substr(detail.find(": ") + 2));
  }
}

}  // namespace

std::span<const std::uint8_t> Dataset::image(std::int64_t index) const {
  if (index < 0 || index >= size()) throw Error(ErrorKind::ShapeMismatch, "image index out of range");
  return {pixels.data() + index * kImageBytes, static_cast<std::size_t>(kImageBytes)};
}

std::int64_t record_length(CifarKind kind) { return kind == CifarKind::Cifar10 ? kImageBytes + 1 : kImageBytes + 2; }

Dataset decode_cifar(std::span<const std::uint8_t> bytes, CifarKind kind, std::int64_t expected_records) {
  const auto len = record_length(kind);
  const auto expected = len * expected_records;
  if (static_cast<std::int64_t>(bytes.size()) != expected) {
    throw Error(ErrorKind::FileTruncated, "expected " + std::to_string(expected) + " bytes (" +
                                              std::to_string(expected_records) + " records of " + std::to_string(len) +
                                              "), found " + std::to_string(bytes.size()));
  }
  Dataset out;
  out.num_classes = kind == CifarKind::Cifar10 ? 10 : 100;
  out.labels.reserve(static_cast<std::size_t>(expected_records));
  out.pixels.resize(static_cast<std::size_t>(expected_records * kImageBytes));
  const std::int64_t label_at = kind == CifarKind::Cifar10 ? 0 : 1;  // CIFAR-100: coarse, then fine
  for (std::int64_t r = 0; r < expected_records; ++r) {
    const auto* rec = bytes.data() + r * len;
    const int label = rec[label_at];
    if (label >= out.num_classes) {
      throw Error(ErrorKind::LabelOutOfRange, "record " + std::to_string(r) + " has label " + std::to_string(label));
    }
    out.labels.push_back(label);
    std::copy_n(rec + len - kImageBytes, kImageBytes, out.pixels.begin() + r * kImageBytes);
  }
  return out;
}

Dataset select(const Dataset& data, std::span<const std::int64_t> indices) {
  Dataset out;
  out.num_classes = data.num_classes;
  out.labels.reserve(indices.size());
  out.pixels.reserve(indices.size() * kImageBytes);
  for (const auto i : indices) {
    const auto img = data.image(i);
    out.pixels.insert(out.pixels.end(), img.begin(), img.end());
    out.labels.push_back(data.labels[static_cast<std::size_t>(i)]);
  }
  return out;
}

Dataset head(const Dataset& data, std::int64_t n) {
  if (n <= 0 || n >= data.size()) return data;
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  return select(data, idx);
}

Normalization Normalization::fit(const Dataset& data) {
  if (data.size() == 0) throw Error(ErrorKind::EmptyDataset, "cannot fit normalisation on an empty dataset");
  Normalization n;
  const double count = static_cast<double>(data.size() * kPlane);
  for (int c = 0; c < 3; ++c) {
    double s = 0.0, s2 = 0.0;
    for (std::int64_t i = 0; i < data.size(); ++i) {
      const auto* p = data.pixels.data() + i * kImageBytes + c * kPlane;
      for (std::int64_t j = 0; j < kPlane; ++j) {
        const double v = p[j] / 255.0;
        s += v;
        s2 += v * v;
      }
    }
    const double mean = s / count;
    const double var = std::max(s2 / count - mean * mean, 0.0);
    n.mean[c] = static_cast<float>(mean);
    n.stddev[c] = static_cast<float>(std::max(std::sqrt(var), 1e-6));
  }
  return n;
}

CifarKind detect_cifar(const fs::path& dir) {
  return fs::exists(resolve_dir(dir) / "data_batch_1.bin") ? CifarKind::Cifar10 : CifarKind::Cifar100;
}

CifarSplits load_cifar(const fs::path& dir, std::uint64_t split_seed, std::int64_t val_size) {
  const auto root = resolve_dir(dir);
  CifarSplits out;
  out.kind = fs::exists(root / "data_batch_1.bin") ? CifarKind::Cifar10 : CifarKind::Cifar100;
  Dataset full;
  if (out.kind == CifarKind::Cifar10) {
    for (int i = 1; i <= 5; ++i)
      append(full, read_batch(root / ("data_batch_" + std::to_string(i) + ".bin"), out.kind, 10000));
    out.test = read_batch(root / "test_batch.bin", out.kind, 10000);
  } else {
    full = read_batch(root / "train.bin", out.kind, 50000);
    out.test = read_batch(root / "test.bin", out.kind, 10000);
  }
  if (val_size < 0 || val_size >= full.size()) {
    throw Error(ErrorKind::InvalidConfig, "validation split of " + std::to_string(val_size) + " images out of " +
                                              std::to_string(full.size()));
  }
  std::vector<std::int64_t> order(static_cast<std::size_t>(full.size()));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(split_seed);
  shuffle(std::span(order), rng);
  const auto cut = order.begin() + val_size;
  out.val = select(full, std::span<const std::int64_t>(&*order.begin(), static_cast<std::size_t>(val_size)));
  out.train = select(full, std::span<const std::int64_t>(&*cut, order.size() - static_cast<std::size_t>(val_size)));
  out.normalization = Normalization::fit(out.train);
  return out;
}

Dataset load_cifar(const fs::path& dir, Split split, std::uint64_t split_seed, std::int64_t val_size) {
  auto all = load_cifar(dir, split_seed, val_size);
  switch (split) {
    case Split::Train: return std::move(all.train);
    case Split::Val: return std::move(all.val);
    case Split::Test: break;
  }
  return std::move(all.test);
}

std::vector<float> to_unit(std::span<const std::uint8_t> image) {
  std::vector<float> out(image.size());
  std::transform(image.begin(), image.end(), out.begin(), [](std::uint8_t v) { return v / 255.0f; });
  return out;
}

CropFlip draw_crop_flip(Rng& rng) {
  CropFlip d;
  d.row = static_cast<int>(rng.below(5));
  d.col = static_cast<int>(rng.below(5));
  d.flip = rng.bernoulli(0.5);
  return d;
}

std::vector<float> augment(std::span<const float> image, const CropFlip& draw) {
  if (static_cast<std::int64_t>(image.size()) != kImageBytes) {
    throw Error(ErrorKind::ShapeMismatch, "augment expects a 3x32x32 image");
  }
  if (draw.row < 0 || draw.row > 4 || draw.col < 0 || draw.col > 4) {
    throw Error(ErrorKind::InvalidConfig, "crop offset outside [0, 4]");
  }
  std::vector<float> out(image.size(), 0.0f);
  for (std::int64_t c = 0; c < 3; ++c) {
    for (std::int64_t i = 0; i < kImageSide; ++i) {
      // Padded row draw.row + i holds source row draw.row + i - 2.
      const auto src_i = draw.row + i - 2;
      if (src_i < 0 || src_i >= kImageSide) continue;
      for (std::int64_t j = 0; j < kImageSide; ++j) {
        const auto src_j = draw.col + j - 2;
        if (src_j < 0 || src_j >= kImageSide) continue;
        const auto dst_j = draw.flip ? kImageSide - 1 - j : j;
        out[c * kPlane + i * kImageSide + dst_j] = image[c * kPlane + src_i * kImageSide + src_j];
      }
    }
  }
  return out;
}

std::vector<float> augment(std::span<const float> image, Rng& rng) { return augment(image, draw_crop_flip(rng)); }

Batch make_batch(const Dataset& data, std::span<const std::int64_t> indices, const Normalization& norm,
                 Rng* augment_rng) {
  const auto B = static_cast<std::int64_t>(indices.size());
  std::vector<float> values(static_cast<std::size_t>(B * kImageBytes));
  Batch batch;
  batch.labels.reserve(indices.size());
  for (std::int64_t b = 0; b < B; ++b) {
    const auto idx = indices[static_cast<std::size_t>(b)];
    auto img = to_unit(data.image(idx));
    if (augment_rng) img = augment(img, *augment_rng);
    float* dst = values.data() + b * kImageBytes;
    for (int c = 0; c < 3; ++c)
      for (std::int64_t j = 0; j < kPlane; ++j)
        dst[c * kPlane + j] = (img[c * kPlane + j] - norm.mean[c]) / norm.stddev[c];
    batch.labels.push_back(data.labels[static_cast<std::size_t>(idx)]);
  }
  batch.images = Tensor::from({B, 3, kImageSide, kImageSide}, std::move(values));
  return batch;
}

}  // namespace asc::pipeline
