#pragma once

#include "asc/group.hpp"
#include "asc/tensor.hpp"

namespace asc {

enum class Mode { Train, Eval };

/// Planar filter psi [out, in, k, k] (k odd) with optional bias [out]. The
/// output keeps the input size ("same" padding of (k-1)/2); a stride > 1
/// subsamples the full-resolution result.
struct ConvFilter {
  Tensor weight;
  Tensor bias;
  int stride = 1;
  Padding padding = Padding::Zero;
};

/// Filter on p4: psi [out, in, 4, k, k], the third axis indexing rotations.
struct GroupConvFilter {
  Tensor weight;
  Tensor bias;
  int stride = 1;
  Padding padding = Padding::Zero;
};

/// out(x) = sum_y f(y) psi(y - x) on [B, in, H, W].
Tensor conv2d(const Tensor& f, const ConvFilter& filter);

/// Planar input to a group feature map [B, out, 4, H, W]: orientation slice P
/// is the planar convolution with psi rotated by P.
Tensor lifting_conv(const Tensor& f, const ConvFilter& filter);

/// out(P, x) = sum_{(R, y)} f(R, y) psi(P^-1 R, P^-1 (y - x)) on [B, in, 4, H, W].
Tensor group_conv(const Tensor& f, const GroupConvFilter& filter);

/// The planar filter bank [out*4, in, k, k] realising a lifting convolution.
Tensor lifting_filter_bank(const Tensor& weight);
/// The planar filter bank [out*4, in*4, k, k] realising a group convolution.
Tensor group_filter_bank(const Tensor& weight);

/// Channel mixing w [out, in] applied identically at every site of a
/// [B, in, ...] map.
Tensor pointwise(const Tensor& f, const Tensor& w);

struct BatchNormState {
  Tensor gamma;         // [C], trainable
  Tensor beta;          // [C], trainable
  Tensor running_mean;  // [C], buffer
  Tensor running_var;   // [C], buffer
  float momentum = 0.1f;
  float eps = 1e-5f;

  static BatchNormState create(std::int64_t channels);
};

/// Per-channel normalisation of [B, C, ...]. Statistics pool every axis but
/// the channel axis, so on p4 maps they pool over orientations too. Train mode
/// updates the running statistics in place.
Tensor batchnorm(const Tensor& f, BatchNormState& state, Mode mode);

/// 2x2 mean pooling with stride 2 over the trailing two axes.
Tensor avgpool2(const Tensor& f);

/// Mean over every site (and orientation), then logits = mean * w^T + b with
/// w [classes, C] and b [classes].
Tensor global_pool_and_linear(const Tensor& f, const Tensor& w, const Tensor& b);

}  // namespace asc
