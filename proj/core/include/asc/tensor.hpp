#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "asc/error.hpp"

namespace asc {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tensor;

namespace detail {

struct Node;

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  bool requires_grad = false;
  std::vector<float> grad;  // empty until a backward pass reaches this leaf
  std::shared_ptr<Node> creator;
};

// grad_in[i] is empty when input i does not need a gradient.
using BackwardFn =
    std::function<void(std::span<const float> grad_out, std::span<const std::span<float>> grad_in)>;

// One recorded operation. seq increases monotonically with creation, and an
// operation's inputs always exist before it does, so sorting by seq is a
// topological order of the graph.
struct Node {
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  TensorImpl* output = nullptr;
  BackwardFn backward;
};

}  // namespace detail

/// Dense row-major float32 tensor. Handles are cheap to copy and share the
/// underlying storage; every operation produces a fresh tensor.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::int64_t dim(int axis) const;
  std::int64_t numel() const;

  // Spans borrow the storage, so they are unavailable on temporaries.
  std::span<const float> data() const&;
  std::span<const float> data() const&& = delete;
  std::vector<float> to_vector() const;
  float item() const;
  float at(std::initializer_list<std::int64_t> index) const;

  bool requires_grad() const;
  /// Marks a leaf as trainable (or not). Only valid on tensors without a creator.
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const float> grad() const&;
  std::span<const float> grad() const&& = delete;
  Tensor grad_tensor() const;
  void zero_grad();

  /// In-place access for optimizers and initializers, between steps only.
  std::span<float> mutable_data();
  std::span<float> mutable_grad();

  /// A new leaf holding a copy of the values, disconnected from any graph.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

  // Internal: used by operation implementations.
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  const std::shared_ptr<detail::TensorImpl>& impl() const noexcept { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Runs reverse-mode accumulation from a rank-0 loss. Leaf gradients accumulate
/// across calls until zero_grad.
void backward(const Tensor& loss);

bool grad_enabled() noexcept;

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

/// Wraps freshly computed values as an operation result. Rejects non-finite
/// values and records a graph node when any input requires a gradient.
Tensor make_result(Shape shape, std::vector<float> values, std::initializer_list<Tensor> inputs,
                   BackwardFn backward, const char* op_name);
Tensor make_result(Shape shape, std::vector<float> values, const std::vector<Tensor>& inputs,
                   BackwardFn backward, const char* op_name);

void check_finite(std::span<const float> values, const char* op_name);

}  // namespace detail

}  // namespace asc
