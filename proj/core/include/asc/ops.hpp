#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "asc/tensor.hpp"

namespace asc {

enum class Elementwise { Add, Sub, Mul, Sigmoid, Relu };

/// Binary ops broadcast over trailing dimensions (numpy rules); unary ops
/// ignore `b`.
Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b = {});

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::Add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::Sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::Mul, a, b); }
inline Tensor sigmoid(const Tensor& a) { return elementwise(Elementwise::Sigmoid, a); }
inline Tensor relu(const Tensor& a) { return elementwise(Elementwise::Relu, a); }

Tensor scale(const Tensor& a, float factor);
Shape broadcast_shape(const Shape& a, const Shape& b);

/// Rank-2 matrix product.
Tensor matmul(const Tensor& a, const Tensor& b);
/// Rank-2 transpose.
Tensor transpose(const Tensor& a);

/// Numerically stable softmax along `axis` (negative axes count from the end).
Tensor softmax(const Tensor& a, int axis);

enum class Reduction { Sum, Mean, Max };

/// Reduces over `axes` and drops them from the shape. An empty axis set is a
/// no-op that returns a copy.
Tensor reduce(Reduction op, const Tensor& a, std::vector<int> axes);
inline Tensor sum(const Tensor& a, std::vector<int> axes) { return reduce(Reduction::Sum, a, std::move(axes)); }
inline Tensor mean(const Tensor& a, std::vector<int> axes) { return reduce(Reduction::Mean, a, std::move(axes)); }
inline Tensor max(const Tensor& a, std::vector<int> axes) { return reduce(Reduction::Max, a, std::move(axes)); }
Tensor sum_all(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);

/// out.flat[i] = a.flat[indices[i]]. Gradients scatter-add back, so repeated
/// indices are allowed.
Tensor take(const Tensor& a, std::vector<std::int64_t> indices, Shape shape);

Tensor concat(const std::vector<Tensor>& parts, int axis);
/// Stacks equally-shaped tensors along a new axis.
Tensor stack(const std::vector<Tensor>& parts, int axis);

/// Mean softmax cross-entropy of [batch, classes] logits.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace asc
