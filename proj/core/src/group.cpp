#include "asc/group.hpp"

#include <vector>

#include "asc/ops.hpp"

namespace asc {

Offset rotate(int quarter_turns, Offset v) {
  for (int i = 0; i < mod4(quarter_turns); ++i) v = {-v.col, v.row};
  return v;
}

P4Element compose(const P4Element& g, const P4Element& h) {
  const Offset rt = rotate(g.r, h.t);
  return {mod4(g.r + h.r), {rt.row + g.t.row, rt.col + g.t.col}};
}

P4Element inverse(const P4Element& g) {
  const Offset back = rotate(-g.r, g.t);
  return {mod4(-g.r), {-back.row, -back.col}};
}

std::string to_string(const P4Element& g) {
  return "(" + std::to_string(g.r) + ",(" + std::to_string(g.t.row) + "," + std::to_string(g.t.col) + "))";
}

std::array<std::int64_t, 2> rotate_index(int quarter_turns, std::int64_t row, std::int64_t col, std::int64_t size) {
  for (int i = 0; i < mod4(quarter_turns); ++i) {
    const auto r = size - 1 - col;
    col = row;
    row = r;
  }
  return {row, col};
}

P4Element origin_frame(const P4Element& g, std::int64_t height, std::int64_t width) {
  // Work in doubled coordinates so the half-integer centre stays exact.
  const Offset twice_centre{height - 1, width - 1};
  const Offset rotated = rotate(g.r, twice_centre);
  const Offset shift{(twice_centre.row - rotated.row) / 2, (twice_centre.col - rotated.col) / 2};
  return {g.r, {g.t.row + shift.row, g.t.col + shift.col}};
}

namespace {

// Source pixel of output pixel (i, j) for the rotation part (about the centre).
std::array<std::int64_t, 2> rotation_source(int r, std::int64_t i, std::int64_t j, std::int64_t h, std::int64_t w) {
  switch (r) {
    case 1: return {j, h - 1 - i};
    case 2: return {h - 1 - i, w - 1 - j};
    case 3: return {w - 1 - j, i};
    default: return {i, j};
  }
}

std::vector<std::int64_t> spatial_sources(const P4Element& g, std::int64_t h, std::int64_t w) {
  if (g.r % 2 == 1 && h != w) {
    throw Error(ErrorKind::NonSquareRotation, "odd quarter-turn on a " + std::to_string(h) + "x" + std::to_string(w) + " map");
  }
  std::vector<std::int64_t> src(static_cast<std::size_t>(h * w));
  for (std::int64_t i = 0; i < h; ++i) {
    for (std::int64_t j = 0; j < w; ++j) {
      const auto [si, sj] = rotation_source(g.r, wrap(i - g.t.row, h), wrap(j - g.t.col, w), h, w);
      src[i * w + j] = si * w + sj;
    }
  }
  return src;
}

}  // namespace

Tensor act_planar(const P4Element& g, const Tensor& f) {
  if (f.rank() < 2) throw Error(ErrorKind::ShapeMismatch, "act_planar needs [..., H, W], got " + to_string(f.shape()));
  const auto h = f.dim(-2), w = f.dim(-1);
  const auto src = spatial_sources(g, h, w);
  const auto planes = f.numel() / (h * w);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(f.numel()));
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t k = 0; k < h * w; ++k) idx[p * h * w + k] = p * h * w + src[k];
  return take(f, std::move(idx), f.shape());
}

Tensor act_group(const P4Element& g, const Tensor& f) {
  if (f.rank() < 3 || f.dim(-3) != 4) {
    throw Error(ErrorKind::ShapeMismatch, "act_group needs [..., 4, H, W], got " + to_string(f.shape()));
  }
  const auto h = f.dim(-2), w = f.dim(-1);
  const auto hw = h * w;
  const auto src = spatial_sources(g, h, w);
  const auto stacks = f.numel() / (4 * hw);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(f.numel()));
  for (std::int64_t s = 0; s < stacks; ++s) {
    for (int r = 0; r < 4; ++r) {
      // Output orientation r reads input orientation P^-1 R.
      const int src_r = mod4(r - g.r);
      for (std::int64_t k = 0; k < hw; ++k) idx[(s * 4 + r) * hw + k] = (s * 4 + src_r) * hw + src[k];
    }
  }
  return take(f, std::move(idx), f.shape());
}

}  // namespace asc
