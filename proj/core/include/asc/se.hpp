#pragma once

#include "asc/tensor.hpp"

namespace asc {

/// Squeeze-and-excitation weights: w1 [d, d/r] and w2 [d/r, d], no biases.
struct SeParams {
  Tensor w1;
  Tensor w2;
};

/// gate = sigmoid(w1 relu(w2 mean(f))) per batch element, where the mean runs
/// over every site (and orientation) of f [B, d, ...]. Returns [B, d].
Tensor squeeze(const Tensor& f, const SeParams& p);

/// f * gate broadcast over every site: f [B, d, ...], gate [B, d].
Tensor excite(const Tensor& f, const Tensor& gate);

}  // namespace asc
