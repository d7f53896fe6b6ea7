#include "asc/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace asc {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::InvalidAxis: return "InvalidAxis";
    case ErrorKind::NotScalar: return "NotScalar";
    case ErrorKind::NonSquareRotation: return "NonSquareRotation";
    case ErrorKind::KernelLargerThanPaddedInput: return "KernelLargerThanPaddedInput";
    case ErrorKind::BatchTooSmall: return "BatchTooSmall";
    case ErrorKind::OddSpatialDim: return "OddSpatialDim";
    case ErrorKind::HeadDivisibility: return "HeadDivisibility";
    case ErrorKind::UnknownVariant: return "UnknownVariant";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::FileTruncated: return "FileTruncated";
    case ErrorKind::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::UnknownTarget: return "UnknownTarget";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

thread_local bool g_grad_enabled = true;
std::atomic<std::uint64_t> g_node_seq{0};

void validate_shape(const Shape& shape) {
  for (auto d : shape) {
    if (d <= 0) throw Error(ErrorKind::ShapeMismatch, "dimensions must be positive, got " + to_string(shape));
  }
}

std::shared_ptr<detail::TensorImpl> new_impl(Shape shape, std::vector<float> values, bool requires_grad) {
  validate_shape(shape);
  if (static_cast<std::int64_t>(values.size()) != numel(shape)) {
    throw Error(ErrorKind::ShapeMismatch, "payload of " + std::to_string(values.size()) +
                                              " values does not match shape " + to_string(shape));
  }
  detail::check_finite(values, "construction");
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return impl;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0f, requires_grad); }
Tensor Tensor::ones(Shape shape, bool requires_grad) { return full(std::move(shape), 1.0f, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  const auto n = asc::numel(shape);
  validate_shape(shape);
  return Tensor(new_impl(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), value), requires_grad));
}

Tensor Tensor::scalar(float value, bool requires_grad) { return from({}, {value}, requires_grad); }

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  return Tensor(new_impl(std::move(shape), std::move(values), requires_grad));
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::int64_t Tensor::dim(int axis) const {
  const int r = static_cast<int>(rank());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw Error(ErrorKind::InvalidAxis, "axis out of range for " + to_string(shape()));
  return impl_->shape[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(impl_->data.size()); }
std::span<const float> Tensor::data() const& { return impl_->data; }
std::vector<float> Tensor::to_vector() const { return impl_->data; }

float Tensor::item() const {
  if (impl_->data.size() != 1) throw Error(ErrorKind::NotScalar, "item() on " + to_string(shape()));
  return impl_->data[0];
}

float Tensor::at(std::initializer_list<std::int64_t> index) const {
  if (index.size() != rank()) throw Error(ErrorKind::ShapeMismatch, "index rank mismatch");
  std::int64_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    const auto d = impl_->shape[axis++];
    if (i < 0 || i >= d) throw Error(ErrorKind::ShapeMismatch, "index out of range");
    flat = flat * d + i;
  }
  return impl_->data[static_cast<std::size_t>(flat)];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (impl_->creator) throw Error(ErrorKind::InvalidConfig, "set_requires_grad on a non-leaf tensor");
  impl_->requires_grad = value;
}

bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const float> Tensor::grad() const& { return impl_->grad; }

Tensor Tensor::grad_tensor() const {
  if (!has_grad()) return Tensor::zeros(shape());
  return Tensor::from(shape(), impl_->grad);
}

void Tensor::zero_grad() { impl_->grad.clear(); }

std::span<float> Tensor::mutable_data() { return impl_->data; }

std::span<float> Tensor::mutable_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
  return impl_->grad;
}

Tensor Tensor::detach() const { return Tensor::from(shape(), impl_->data); }

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

void check_finite(std::span<const float> values, const char* op_name) {
  for (float v : values) {
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, std::string("non-finite value produced by ") + op_name);
  }
}

Tensor make_result(Shape shape, std::vector<float> values, const std::vector<Tensor>& inputs, BackwardFn backward,
                   const char* op_name) {
  check_finite(values, op_name);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  bool needs_grad = false;
  if (g_grad_enabled) {
    for (const auto& t : inputs) needs_grad = needs_grad || t.requires_grad();
  }
  if (needs_grad) {
    auto node = std::make_shared<Node>();
    node->seq = g_node_seq.fetch_add(1) + 1;
    node->inputs.reserve(inputs.size());
    for (const auto& t : inputs) node->inputs.push_back(t.impl());
    node->output = impl.get();
    node->backward = std::move(backward);
    impl->requires_grad = true;
    impl->creator = std::move(node);
  }
  return Tensor(std::move(impl));
}

Tensor make_result(Shape shape, std::vector<float> values, std::initializer_list<Tensor> inputs, BackwardFn backward,
                   const char* op_name) {
  return make_result(std::move(shape), std::move(values), std::vector<Tensor>(inputs), std::move(backward), op_name);
}

}  // namespace detail

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.rank() != 0) {
    throw Error(ErrorKind::NotScalar, "backward requires a rank-0 loss, got " +
                                          (loss.defined() ? to_string(loss.shape()) : std::string("undefined")));
  }
  auto* root = loss.impl().get();
  if (!root->requires_grad) return;
  if (!root->creator) {
    if (root->grad.empty()) root->grad.assign(1, 0.0f);
    root->grad[0] += 1.0f;
    return;
  }

  // Collect every node reachable from the loss.
  std::vector<detail::Node*> nodes;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{root->creator.get()};
  while (!stack.empty()) {
    auto* node = stack.back();
    stack.pop_back();
    if (!seen.insert(node).second) continue;
    nodes.push_back(node);
    for (const auto& in : node->inputs) {
      if (in->creator) stack.push_back(in->creator.get());
    }
  }
  std::sort(nodes.begin(), nodes.end(), [](auto* a, auto* b) { return a->seq > b->seq; });

  std::unordered_map<const detail::TensorImpl*, std::vector<float>> pending;
  pending[root] = {1.0f};

  for (auto* node : nodes) {
    auto it = pending.find(node->output);
    if (it == pending.end()) continue;
    const std::vector<float> grad_out = std::move(it->second);
    pending.erase(it);

    std::vector<std::vector<float>> buffers(node->inputs.size());
    std::vector<std::span<float>> slots(node->inputs.size());
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      const auto& in = node->inputs[i];
      if (!in->requires_grad) continue;
      buffers[i].assign(in->data.size(), 0.0f);
      slots[i] = buffers[i];
    }
    node->backward(grad_out, slots);

    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      if (buffers[i].empty()) continue;
      auto* in = node->inputs[i].get();
      std::vector<float>* target = nullptr;
      if (in->creator) {
        auto& slot = pending[in];
        if (slot.empty()) {
          slot = std::move(buffers[i]);
          continue;
        }
        target = &slot;
      } else {
        if (in->grad.empty()) in->grad.assign(in->data.size(), 0.0f);
        target = &in->grad;
      }
      auto& dst = *target;
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += buffers[i][j];
    }
  }
}

}  // namespace asc
