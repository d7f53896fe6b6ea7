#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "asc/tensor.hpp"

namespace asc {

/// Integer translation. `row` grows downward and `col` to the right; a
/// positive quarter-turn maps (row, col) -> (-col, row), which is a
/// counter-clockwise rotation of the displayed image.
struct Offset {
  std::int64_t row = 0;
  std::int64_t col = 0;
  friend bool operator==(const Offset&, const Offset&) = default;
};

Offset rotate(int quarter_turns, Offset v);

/// Element (r, t) of the roto-translation group p4: rotate by r quarter-turns,
/// then translate by t. Composition is the semidirect product
/// (r1, t1)(r2, t2) = (r1 + r2, R^r1 t2 + t1).
struct P4Element {
  int r = 0;
  Offset t{};

  static P4Element identity() { return {}; }
  static P4Element rotation(int quarter_turns) { return {((quarter_turns % 4) + 4) % 4, {}}; }
  static P4Element translation(std::int64_t row, std::int64_t col) { return {0, {row, col}}; }

  friend bool operator==(const P4Element&, const P4Element&) = default;
};

P4Element compose(const P4Element& g, const P4Element& h);
P4Element inverse(const P4Element& g);
std::string to_string(const P4Element& g);

enum class Padding { Zero, Circular };

/// L_g on planar feature maps [..., H, W] on the H x W torus:
/// out(y) = f(g^-1 y). Rotation is about the image centre, so one
/// quarter-turn is out[i][j] = f[j][H-1-i]; odd turns need H == W.
Tensor act_planar(const P4Element& g, const Tensor& f);

/// L_g on group feature maps [..., 4, H, W]:
/// out(R, y) = f(P^-1 R, P^-1 (y - x)), i.e. the orientation axis is cycled by
/// r and every orientation slice is transformed like a planar map.
Tensor act_group(const P4Element& g, const Tensor& f);

/// Rotating about the image centre is the conjugate of rotating about the
/// origin of the torus. This returns the element that acts the same way under
/// the origin-centred formula out(y) = f(R^-1 (y - t)) on an H x W grid.
P4Element origin_frame(const P4Element& g, std::int64_t height, std::int64_t width);

/// Rotates a k x k grid index (kernel offsets, centre at (k-1)/2) by `r`
/// quarter-turns: the value at the returned index of the rotated grid equals
/// the value at (row, col) of the original.
std::array<std::int64_t, 2> rotate_index(int quarter_turns, std::int64_t row, std::int64_t col, std::int64_t size);

inline int mod4(int v) { return ((v % 4) + 4) % 4; }

inline std::int64_t wrap(std::int64_t v, std::int64_t n) {
  const auto m = v % n;
  return m < 0 ? m + n : m;
}

}  // namespace asc
