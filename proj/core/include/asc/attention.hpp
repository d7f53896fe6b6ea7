#pragma once

#include <cstdint>

#include "asc/group.hpp"
#include "asc/tensor.hpp"

namespace asc {

enum class AffineRole { Center, Neighbor };

/// Depthwise affine map f(y) * psi(y - x) + beta(y - x).
/// Planar neighbor role: psi, beta [C, k, k]. Center role: psi, beta [C].
/// On p4 (neighbor role): psi [C, 4, k, k], beta [C, k, k]; center role:
/// psi [C, 4], beta [C].
struct AffineParams {
  Tensor psi;
  Tensor beta;
};

/// One ASC layer. On the plane wq/wk/wv are [d, d_in] channel maps and wo (if
/// defined) is [d, d]. On p4 they are 1x1 group filters [d, d_in, 4, 1, 1].
struct AscParams {
  Tensor wq, wk, wv;
  AffineParams aq, ak, av;
  Tensor wo;
  int heads = 1;
};

/// Local QKV self-attention with SASA-style additive key embeddings, factorised
/// into a row half [heads, d/heads/2, k] and a column half of the same shape.
struct SasaParams {
  Tensor wq, wk, wv;
  Tensor beta_row, beta_col;
  Tensor wo;
  int heads = 1;
};

/// Simple ASC as a multi-channel layer: one embedding w [d, d_in] shared by the
/// query, key and value roles, one depthwise affine map (psi, beta [d, k, k])
/// and an optional output map wo [d, d].
struct SimpleAscParams {
  Tensor w;
  AffineParams a;
  Tensor wo;
  int heads = 1;
};

/// [..., H, W] -> [..., H, W, k*k]; entry j is the value at offset j of the
/// k x k window centred on each site (row-major offsets, centre at (k*k-1)/2).
Tensor neighborhood_gather(const Tensor& f, int k, Padding padding);

/// out(x) = sum_y softmax_y(f(x) f(y)) f(y) on single-channel maps [B, 1, H, W].
Tensor simple_self_attention(const Tensor& f, int k, Padding padding);

/// Neighbor role: window [B, C, H, W, k*k] -> window * psi + beta.
/// Center role: f [B, C, H, W] -> f * psi + beta with per-channel scalars.
Tensor affine_map_apply(const Tensor& input, const AffineParams& a, AffineRole role);

/// Single-channel simple ASC on [B, 1, H, W] with psi, beta [1, k, k].
Tensor simple_asc(const Tensor& f, const AffineParams& a, int k, Padding padding);

Tensor sasa_self_attention(const Tensor& f, const SasaParams& p, int k, Padding padding);
Tensor simple_asc_forward(const Tensor& f, const SimpleAscParams& p, int k, Padding padding);
Tensor asc_forward(const Tensor& f, const AscParams& p, int k, Padding padding);
/// Attention weights [B, heads, H, W, k*k] of asc_forward.
Tensor asc_scores(const Tensor& f, const AscParams& p, int k, Padding padding);

/// The orientation-summed p4 affine map at orientation P:
/// sum_R f(R, y) psi(P^-1 R, P^-1 (y - x)) + beta(P^-1 (y - x)).
/// Neighbor role: window [B, C, 4, H, W, k*k] -> [B, C, H, W, k*k].
/// Center role: f [B, C, 4, H, W] -> [B, C, H, W].
Tensor p4_affine_map_apply(const Tensor& input, const AffineParams& a, int orientation, AffineRole role);

/// softmax_y of the per-head dot product (scaled by 1 / (C / heads)) between
/// centre features [B, C, H, W] and window features [B, C, H, W, k*k].
/// Returns [B, heads, H, W, k*k].
Tensor p4_score(const Tensor& center, const Tensor& window, int heads);

/// Single-channel simple ASC on [B, 1, 4, H, W] with psi [1, 4, k, k] and beta [1, k, k].
Tensor p4_simple_asc(const Tensor& f, const AffineParams& a, int k, Padding padding);

Tensor p4_asc_forward(const Tensor& f, const AscParams& p, int k, Padding padding);
/// Attention weights [B, heads, 4, H, W, k*k] of p4_asc_forward.
Tensor p4_asc_scores(const Tensor& f, const AscParams& p, int k, Padding padding);

}  // namespace asc
