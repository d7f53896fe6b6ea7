#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "asc/group.hpp"
#include "asc/nn.hpp"
#include "asc/tensor.hpp"

namespace asc {

enum class MidLayer { Conv, Sasa, SimpleAsc, Asc };

/// What a variant name decodes to. Names are "<p4>resnet<depth>[_se|_sasa|
/// _simple_asc|_asc|_asc_se]" with depth 29 or 83.
struct VariantInfo {
  bool p4 = false;
  MidLayer mid = MidLayer::Conv;
  bool se = false;
  int n = 3;
};

VariantInfo parse_variant(const std::string& name);
std::vector<std::string> known_variants();

struct ModelConfig {
  std::string variant = "resnet29";
  int num_classes = 10;
  int n = 0;  // 0 means "as implied by the variant"; otherwise it must agree
  std::uint64_t seed = 0;
};

struct ParamAudit {
  std::vector<std::pair<std::string, std::int64_t>> layers;
  std::int64_t total = 0;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct Parameter {
  std::string name;
  Tensor tensor;
  bool decay = true;
};

struct BlockInfo {
  std::string name;
  std::int64_t in_channels = 0, planes = 0, out_channels = 0;
  int stride = 1;
  bool projection = false;
};

class Model {
 public:
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;
  ~Model();

  const ModelConfig& config() const;
  const VariantInfo& info() const;

  /// images [B, 3, H, W] -> logits [B, classes].
  Tensor forward(const Tensor& images, Mode mode);

  std::size_t num_blocks() const;
  BlockInfo block(std::size_t index) const;
  /// One pre-activation bottleneck: BN-ReLU-1x1, BN-ReLU-mid, BN-ReLU-1x1 (then
  /// SE when configured) plus the identity or projection shortcut.
  Tensor block_forward(std::size_t index, const Tensor& f, Mode mode);

  /// Trainable tensors in a fixed order; the handles share storage with the model.
  const std::vector<Parameter>& parameters() const;
  /// Parameters followed by batchnorm running statistics.
  std::vector<NamedTensor> state() const;
  /// Copies values by name; every entry of state() must be present with the same shape.
  void load_state(const std::vector<NamedTensor>& values);

  void set_padding(Padding padding);
  Padding padding() const;
  /// Running-statistics update rate for every batchnorm layer; 1 makes the
  /// next train-mode pass overwrite them with that batch's statistics.
  void set_batchnorm_momentum(float momentum);

  struct Impl;

 private:
  explicit Model(std::unique_ptr<Impl> impl);
  friend Model build_model(const ModelConfig& cfg);
  std::unique_ptr<Impl> impl_;
};

Model build_model(const ModelConfig& cfg);

/// Groups parameters by layer path (the name up to its last dot).
ParamAudit audit_parameters(const std::vector<Parameter>& params);
ParamAudit count_params(const Model& model);

}  // namespace asc
