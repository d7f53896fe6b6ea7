#include "asc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gemm.hpp"

namespace asc {
namespace {

int normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw Error(ErrorKind::InvalidAxis, "axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return a;
}

std::vector<std::int64_t> strides_of(const Shape& shape) {
  std::vector<std::int64_t> strides(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) strides[i] = strides[i + 1] * shape[i + 1];
  return strides;
}

// For each flat index of `out`, the flat index into a tensor of shape `in`
// broadcast against it (trailing alignment).
std::vector<std::int64_t> broadcast_map(const Shape& out, const Shape& in) {
  const auto n = numel(out);
  std::vector<std::int64_t> map(static_cast<std::size_t>(n));
  if (out == in) {
    std::iota(map.begin(), map.end(), 0);
    return map;
  }
  const std::size_t r = out.size();
  const std::size_t offset = r - in.size();
  const auto in_strides = strides_of(in);
  std::vector<std::int64_t> stride(r, 0);
  for (std::size_t i = 0; i < in.size(); ++i) stride[offset + i] = in[i] == 1 ? 0 : in_strides[i];
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t src = 0;
  for (std::int64_t flat = 0; flat < n; ++flat) {
    map[static_cast<std::size_t>(flat)] = src;
    for (int d = static_cast<int>(r) - 1; d >= 0; --d) {
      if (++idx[d] < out[d]) {
        src += stride[d];
        break;
      }
      src -= stride[d] * (out[d] - 1);
      idx[d] = 0;
    }
  }
  return map;
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw Error(ErrorKind::ShapeMismatch, std::string(what) + " expects rank " + std::to_string(rank) + ", got " + to_string(t.shape()));
  }
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw Error(ErrorKind::ShapeMismatch, "cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b) {
  if (op == Elementwise::Sigmoid || op == Elementwise::Relu) {
    const auto x = a.data();
    std::vector<float> out(x.size());
    if (op == Elementwise::Relu) {
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
      return detail::make_result(a.shape(), std::move(out), {a}, [a](auto gout, auto gin) {
        const auto x = a.data();
        for (std::size_t i = 0; i < x.size(); ++i) gin[0][i] = x[i] >= 0.0f ? gout[i] : 0.0f;
      }, "relu");
    }
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(x[i]))));
    auto saved = out;
    return detail::make_result(a.shape(), std::move(out), {a}, [saved = std::move(saved)](auto gout, auto gin) {
      for (std::size_t i = 0; i < saved.size(); ++i) gin[0][i] = gout[i] * saved[i] * (1.0f - saved[i]);
    }, "sigmoid");
  }

  if (!b.defined()) throw Error(ErrorKind::ShapeMismatch, "binary elementwise op needs two operands");
  const Shape shape = broadcast_shape(a.shape(), b.shape());
  auto amap = broadcast_map(shape, a.shape());
  auto bmap = broadcast_map(shape, b.shape());
  const auto x = a.data();
  const auto y = b.data();
  std::vector<float> out(amap.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float u = x[amap[i]], v = y[bmap[i]];
    out[i] = op == Elementwise::Add ? u + v : op == Elementwise::Sub ? u - v : u * v;
  }
  const char* name = op == Elementwise::Add ? "add" : op == Elementwise::Sub ? "sub" : "mul";
  return detail::make_result(shape, std::move(out), {a, b},
                             [op, a, b, amap = std::move(amap), bmap = std::move(bmap)](auto gout, auto gin) {
    const auto x = a.data();
    const auto y = b.data();
    // Double accumulators: broadcast reductions can sum many terms.
    std::vector<double> ga(gin[0].empty() ? 0 : gin[0].size()), gb(gin[1].empty() ? 0 : gin[1].size());
    for (std::size_t i = 0; i < gout.size(); ++i) {
      const double g = gout[i];
      if (!ga.empty()) ga[amap[i]] += op == Elementwise::Mul ? g * y[bmap[i]] : g;
      if (!gb.empty()) gb[bmap[i]] += op == Elementwise::Mul ? g * x[amap[i]] : op == Elementwise::Sub ? -g : g;
    }
    for (std::size_t i = 0; i < ga.size(); ++i) gin[0][i] = static_cast<float>(ga[i]);
    for (std::size_t i = 0; i < gb.size(); ++i) gin[1][i] = static_cast<float>(gb[i]);
  }, name);
}

Tensor scale(const Tensor& a, float factor) {
  const auto x = a.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * factor;
  return detail::make_result(a.shape(), std::move(out), {a}, [factor](auto gout, auto gin) {
    for (std::size_t i = 0; i < gout.size(); ++i) gin[0][i] = gout[i] * factor;
  }, "scale");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw Error(ErrorKind::ShapeMismatch, "matmul inner dimensions differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  std::vector<float> out(static_cast<std::size_t>(m * n));
  detail::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data(), false);
  return detail::make_result({m, n}, std::move(out), {a, b}, [a, b, m, k, n](auto gout, auto gin) {
    if (!gin[0].empty()) detail::gemm_nt(m, k, n, gout.data(), b.data().data(), gin[0].data(), false);
    if (!gin[1].empty()) detail::gemm_tn(k, n, m, a.data().data(), gout.data(), gin[1].data(), false);
  }, "matmul");
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const auto r = a.dim(0), c = a.dim(1);
  const auto x = a.data();
  std::vector<float> out(x.size());
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return detail::make_result({c, r}, std::move(out), {a}, [r, c](auto gout, auto gin) {
    for (std::int64_t i = 0; i < r; ++i)
      for (std::int64_t j = 0; j < c; ++j) gin[0][i * c + j] = gout[j * r + i];
  }, "transpose");
}

Tensor softmax(const Tensor& a, int axis) {
  const int ax = normalize_axis(axis, a.rank());
  const auto& s = a.shape();
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::int64_t len = s[ax];
  const auto x = a.data();
  std::vector<float> out(x.size());
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t j = 0; j < len; ++j) mx = std::max(mx, static_cast<double>(x[base + j * inner]));
      double total = 0.0;
      for (std::int64_t j = 0; j < len; ++j) total += std::exp(x[base + j * inner] - mx);
      for (std::int64_t j = 0; j < len; ++j) out[base + j * inner] = static_cast<float>(std::exp(x[base + j * inner] - mx) / total);
    }
  }
  auto saved = out;
  return detail::make_result(s, std::move(out), {a}, [saved = std::move(saved), outer, inner, len](auto gout, auto gin) {
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t in = 0; in < inner; ++in) {
        const std::int64_t base = o * len * inner + in;
        double dotp = 0.0;
        for (std::int64_t j = 0; j < len; ++j) dotp += static_cast<double>(gout[base + j * inner]) * saved[base + j * inner];
        for (std::int64_t j = 0; j < len; ++j) {
          const auto idx = base + j * inner;
          gin[0][idx] = static_cast<float>(saved[idx] * (gout[idx] - dotp));
        }
      }
    }
  }, "softmax");
}

Tensor reduce(Reduction op, const Tensor& a, std::vector<int> axes) {
  const auto& s = a.shape();
  std::vector<bool> reduced(s.size(), false);
  for (int& ax : axes) {
    ax = normalize_axis(ax, s.size());
    if (reduced[ax]) throw Error(ErrorKind::InvalidAxis, "duplicate reduction axis " + std::to_string(ax));
    reduced[ax] = true;
  }
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (!reduced[i]) out_shape.push_back(s[i]);

  // Map every input element to its output slot.
  const auto n = a.numel();
  std::vector<std::int64_t> slot(static_cast<std::size_t>(n));
  {
    const auto out_strides = strides_of(out_shape);
    std::vector<std::int64_t> step(s.size(), 0);
    for (std::size_t i = 0, o = 0; i < s.size(); ++i)
      if (!reduced[i]) step[i] = out_strides[o++];
    std::vector<std::int64_t> idx(s.size(), 0);
    std::int64_t dst = 0;
    for (std::int64_t flat = 0; flat < n; ++flat) {
      slot[static_cast<std::size_t>(flat)] = dst;
      for (int d = static_cast<int>(s.size()) - 1; d >= 0; --d) {
        if (++idx[d] < s[d]) {
          dst += step[d];
          break;
        }
        dst -= step[d] * (s[d] - 1);
        idx[d] = 0;
      }
    }
  }
  const auto out_n = numel(out_shape);
  const std::int64_t count = out_n == 0 ? 1 : n / out_n;
  const auto x = a.data();
  std::vector<float> out(static_cast<std::size_t>(out_n));

  if (op == Reduction::Max) {
    std::vector<std::int64_t> arg(out.size(), -1);
    for (std::int64_t i = 0; i < n; ++i) {
      auto& best = arg[slot[i]];
      if (best < 0 || x[i] > x[best]) best = i;
    }
    for (std::size_t o = 0; o < out.size(); ++o) out[o] = x[arg[o]];
    return detail::make_result(out_shape, std::move(out), {a}, [arg = std::move(arg)](auto gout, auto gin) {
      for (std::size_t o = 0; o < arg.size(); ++o) gin[0][arg[o]] += gout[o];
    }, "reduce_max");
  }

  std::vector<double> acc(out.size(), 0.0);
  for (std::int64_t i = 0; i < n; ++i) acc[slot[i]] += x[i];
  const double div = op == Reduction::Mean ? static_cast<double>(count) : 1.0;
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = static_cast<float>(acc[o] / div);
  return detail::make_result(out_shape, std::move(out), {a}, [slot = std::move(slot), div](auto gout, auto gin) {
    for (std::size_t i = 0; i < slot.size(); ++i) gin[0][i] = static_cast<float>(gout[slot[i]] / div);
  }, op == Reduction::Mean ? "reduce_mean" : "reduce_sum");
}

Tensor sum_all(const Tensor& a) {
  std::vector<int> axes(a.rank());
  std::iota(axes.begin(), axes.end(), 0);
  return sum(a, std::move(axes));
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw Error(ErrorKind::ShapeMismatch, "cannot reshape " + to_string(a.shape()) + " to " + to_string(shape));
  }
  for (auto d : shape)
    if (d <= 0) throw Error(ErrorKind::ShapeMismatch, "reshape target must have positive dims");
  return detail::make_result(std::move(shape), a.to_vector(), {a}, [](auto gout, auto gin) {
    std::copy(gout.begin(), gout.end(), gin[0].begin());
  }, "reshape");
}

Tensor take(const Tensor& a, std::vector<std::int64_t> indices, Shape shape) {
  if (numel(shape) != static_cast<std::int64_t>(indices.size())) {
    throw Error(ErrorKind::ShapeMismatch, "take: index count does not match " + to_string(shape));
  }
  const auto x = a.data();
  std::vector<float> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto j = indices[i];
    if (j < 0 || j >= a.numel()) throw Error(ErrorKind::ShapeMismatch, "take: index out of range");
    out[i] = x[j];
  }
  return detail::make_result(std::move(shape), std::move(out), {a}, [indices = std::move(indices)](auto gout, auto gin) {
    for (std::size_t i = 0; i < indices.size(); ++i) gin[0][indices[i]] += gout[i];
  }, "take");
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw Error(ErrorKind::ShapeMismatch, "concat of nothing");
  const auto& first = parts.front().shape();
  const int ax = normalize_axis(axis, first.size());
  Shape shape = first;
  shape[ax] = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = static_cast<int>(i) == ax || s[i] == first[i];
    if (!ok) throw Error(ErrorKind::ShapeMismatch, "concat: incompatible part " + to_string(s));
    shape[ax] += s[ax];
  }
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= first[i];
  for (std::size_t i = ax + 1; i < first.size(); ++i) inner *= first[i];
  std::vector<float> out(static_cast<std::size_t>(numel(shape)));
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const auto len = p.shape()[ax] * inner;
    const auto x = p.data();
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy_n(x.begin() + o * len, len, out.begin() + o * shape[ax] * inner + off);
    off += len;
  }
  std::vector<std::int64_t> lens;
  for (const auto& p : parts) lens.push_back(p.shape()[ax] * inner);
  const auto row = shape[ax] * inner;
  return detail::make_result(shape, std::move(out), parts, [offsets, lens, outer, row](auto gout, auto gin) {
    for (std::size_t k = 0; k < lens.size(); ++k) {
      if (gin[k].empty()) continue;
      for (std::int64_t o = 0; o < outer; ++o)
        std::copy_n(gout.begin() + o * row + offsets[k], lens[k], gin[k].begin() + o * lens[k]);
    }
  }, "concat");
}

Tensor stack(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw Error(ErrorKind::ShapeMismatch, "stack of nothing");
  const int ax = axis < 0 ? axis + static_cast<int>(parts.front().rank()) + 1 : axis;
  std::vector<Tensor> expanded;
  expanded.reserve(parts.size());
  for (const auto& p : parts) {
    if (p.shape() != parts.front().shape()) throw Error(ErrorKind::ShapeMismatch, "stack: parts differ in shape");
    Shape s = p.shape();
    if (ax < 0 || ax > static_cast<int>(s.size())) throw Error(ErrorKind::InvalidAxis, "stack axis out of range");
    s.insert(s.begin() + ax, 1);
    expanded.push_back(reshape(p, s));
  }
  return concat(expanded, ax);
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy");
  const auto b = logits.dim(0), c = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != b) throw Error(ErrorKind::ShapeMismatch, "cross_entropy: label count differs from batch");
  const auto x = logits.data();
  std::vector<float> probs(x.size());
  double loss = 0.0;
  for (std::int64_t i = 0; i < b; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= c) throw Error(ErrorKind::LabelOutOfRange, "label " + std::to_string(y));
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < c; ++j) mx = std::max(mx, static_cast<double>(x[i * c + j]));
    double total = 0.0;
    for (std::int64_t j = 0; j < c; ++j) total += std::exp(x[i * c + j] - mx);
    for (std::int64_t j = 0; j < c; ++j) probs[i * c + j] = static_cast<float>(std::exp(x[i * c + j] - mx) / total);
    loss += std::log(total) + mx - x[i * c + y];
  }
  std::vector<int> saved_labels(labels.begin(), labels.end());
  return detail::make_result({}, {static_cast<float>(loss / b)}, {logits},
                             [probs = std::move(probs), saved_labels = std::move(saved_labels), b, c](auto gout, auto gin) {
    const double g = gout[0] / static_cast<double>(b);
    for (std::int64_t i = 0; i < b; ++i)
      for (std::int64_t j = 0; j < c; ++j)
        gin[0][i * c + j] = static_cast<float>(g * (probs[i * c + j] - (j == saved_labels[i] ? 1.0 : 0.0)));
  }, "cross_entropy");
}

}  // namespace asc
