#include "asc/nn.hpp"

#include <cmath>
#include <numeric>
#include <vector>

#include "asc/ops.hpp"
#include "gemm.hpp"

namespace asc {
namespace {

struct ConvGeometry {
  std::int64_t batch, in_ch, out_ch, height, width, k, stride;
  Padding padding;

  std::int64_t out_h() const { return (height + stride - 1) / stride; }
  std::int64_t out_w() const { return (width + stride - 1) / stride; }
  std::int64_t hw() const { return height * width; }
  std::int64_t patch() const { return in_ch * k * k; }
};

void im2col(const float* x, const ConvGeometry& g, float* cols) {
  const auto pad = g.k / 2;
  for (std::int64_t c = 0; c < g.in_ch; ++c) {
    const float* plane = x + c * g.hw();
    for (std::int64_t kh = 0; kh < g.k; ++kh) {
      for (std::int64_t kw = 0; kw < g.k; ++kw) {
        float* row = cols + ((c * g.k + kh) * g.k + kw) * g.hw();
        for (std::int64_t i = 0; i < g.height; ++i) {
          std::int64_t si = i + kh - pad;
          const bool row_in = si >= 0 && si < g.height;
          if (!row_in) {
            if (g.padding == Padding::Zero) {
              std::fill_n(row + i * g.width, g.width, 0.0f);
              continue;
            }
            si = wrap(si, g.height);
          }
          for (std::int64_t j = 0; j < g.width; ++j) {
            std::int64_t sj = j + kw - pad;
            if (sj < 0 || sj >= g.width) {
              if (g.padding == Padding::Zero) {
                row[i * g.width + j] = 0.0f;
                continue;
              }
              sj = wrap(sj, g.width);
            }
            row[i * g.width + j] = plane[si * g.width + sj];
          }
        }
      }
    }
  }
}

void col2im(const float* cols, const ConvGeometry& g, double* dx) {
  const auto pad = g.k / 2;
  for (std::int64_t c = 0; c < g.in_ch; ++c) {
    double* plane = dx + c * g.hw();
    for (std::int64_t kh = 0; kh < g.k; ++kh) {
      for (std::int64_t kw = 0; kw < g.k; ++kw) {
        const float* row = cols + ((c * g.k + kh) * g.k + kw) * g.hw();
        for (std::int64_t i = 0; i < g.height; ++i) {
          std::int64_t si = i + kh - pad;
          if (si < 0 || si >= g.height) {
            if (g.padding == Padding::Zero) continue;
            si = wrap(si, g.height);
          }
          for (std::int64_t j = 0; j < g.width; ++j) {
            std::int64_t sj = j + kw - pad;
            if (sj < 0 || sj >= g.width) {
              if (g.padding == Padding::Zero) continue;
              sj = wrap(sj, g.width);
            }
            plane[si * g.width + sj] += row[i * g.width + j];
          }
        }
      }
    }
  }
}

// Shared convolution kernel. `x` is viewed as [B, in_ch, H, W] and `w` as
// [out_ch, in_ch * k * k]; the result is created with `out_shape`.
Tensor conv_core(const Tensor& x, const Tensor& w, const Tensor& bias, ConvGeometry g, Shape out_shape) {
  if (g.k % 2 == 0) throw Error(ErrorKind::ShapeMismatch, "kernel size must be odd");
  if (g.padding == Padding::Circular && (g.k > g.height || g.k > g.width)) {
    throw Error(ErrorKind::KernelLargerThanPaddedInput, "circular " + std::to_string(g.k) + "x" + std::to_string(g.k) +
                                                            " kernel on " + std::to_string(g.height) + "x" + std::to_string(g.width));
  }
  if (g.stride < 1) throw Error(ErrorKind::InvalidConfig, "stride must be positive");
  const bool direct = g.k == 1;
  const auto hw = g.hw();
  const auto ohw = g.out_h() * g.out_w();
  std::vector<float> out(static_cast<std::size_t>(g.batch * g.out_ch * ohw));
  std::vector<float> cols(direct ? 0 : static_cast<std::size_t>(g.patch() * hw));
  std::vector<float> full(g.stride == 1 ? 0 : static_cast<std::size_t>(g.out_ch * hw));
  const float* xd = x.data().data();
  const float* wd = w.data().data();
  for (std::int64_t b = 0; b < g.batch; ++b) {
    const float* src = xd + b * g.in_ch * hw;
    if (!direct) {
      im2col(src, g, cols.data());
      src = cols.data();
    }
    float* dst = g.stride == 1 ? out.data() + b * g.out_ch * hw : full.data();
    detail::gemm_nn(g.out_ch, hw, g.patch(), wd, src, dst, false);
    if (bias.defined()) {
      const auto bd = bias.data();
      for (std::int64_t o = 0; o < g.out_ch; ++o)
        for (std::int64_t p = 0; p < hw; ++p) dst[o * hw + p] += bd[o];
    }
    if (g.stride != 1) {
      float* o_ptr = out.data() + b * g.out_ch * ohw;
      for (std::int64_t o = 0; o < g.out_ch; ++o)
        for (std::int64_t i = 0; i < g.out_h(); ++i)
          for (std::int64_t j = 0; j < g.out_w(); ++j)
            o_ptr[(o * g.out_h() + i) * g.out_w() + j] = full[o * hw + i * g.stride * g.width + j * g.stride];
    }
  }

  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return detail::make_result(std::move(out_shape), std::move(out), inputs, [x, w, g, direct](auto gout, auto gin) {
    const auto hw = g.hw();
    const auto ohw = g.out_h() * g.out_w();
    const bool want_x = !gin[0].empty(), want_w = !gin[1].empty(), want_b = gin.size() > 2 && !gin[2].empty();
    std::vector<float> cols(direct ? 0 : static_cast<std::size_t>(g.patch() * hw));
    std::vector<float> dcols(static_cast<std::size_t>(g.patch() * hw));
    std::vector<float> gfull(g.stride == 1 ? 0 : static_cast<std::size_t>(g.out_ch * hw));
    std::vector<float> dw_b(want_w ? static_cast<std::size_t>(g.out_ch * g.patch()) : 0);
    std::vector<double> dw(dw_b.size(), 0.0), db(want_b ? g.out_ch : 0, 0.0);
    std::vector<double> dx(want_x ? static_cast<std::size_t>(g.in_ch * hw) : 0);
    const float* xd = x.data().data();
    const float* wd = w.data().data();
    for (std::int64_t b = 0; b < g.batch; ++b) {
      const float* go = gout.data() + b * g.out_ch * ohw;
      if (g.stride != 1) {
        std::fill(gfull.begin(), gfull.end(), 0.0f);
        for (std::int64_t o = 0; o < g.out_ch; ++o)
          for (std::int64_t i = 0; i < g.out_h(); ++i)
            for (std::int64_t j = 0; j < g.out_w(); ++j)
              gfull[o * hw + i * g.stride * g.width + j * g.stride] = go[(o * g.out_h() + i) * g.out_w() + j];
        go = gfull.data();
      }
      if (want_b) {
        for (std::int64_t o = 0; o < g.out_ch; ++o)
          for (std::int64_t p = 0; p < hw; ++p) db[o] += go[o * hw + p];
      }
      const float* src = xd + b * g.in_ch * hw;
      if (want_w) {
        if (!direct) {
          im2col(src, g, cols.data());
          src = cols.data();
        }
        detail::gemm_nt(g.out_ch, g.patch(), hw, go, src, dw_b.data(), false);
        for (std::size_t i = 0; i < dw.size(); ++i) dw[i] += dw_b[i];
      }
      if (want_x) {
        if (direct) {
          detail::gemm_tn(g.in_ch, hw, g.out_ch, wd, go, gin[0].data() + b * g.in_ch * hw, false);
        } else {
          detail::gemm_tn(g.patch(), hw, g.out_ch, wd, go, dcols.data(), false);
          std::fill(dx.begin(), dx.end(), 0.0);
          col2im(dcols.data(), g, dx.data());
          float* target = gin[0].data() + b * g.in_ch * hw;
          for (std::size_t i = 0; i < dx.size(); ++i) target[i] = static_cast<float>(dx[i]);
        }
      }
    }
    for (std::size_t i = 0; i < dw.size(); ++i) gin[1][i] = static_cast<float>(dw[i]);
    for (std::size_t i = 0; i < db.size(); ++i) gin[2][i] = static_cast<float>(db[i]);
  }, "conv2d");
}

void require(bool ok, const std::string& message) {
  if (!ok) throw Error(ErrorKind::ShapeMismatch, message);
}

Tensor expand_bias(const Tensor& bias) {
  if (!bias.defined()) return {};
  std::vector<std::int64_t> idx;
  for (std::int64_t o = 0; o < bias.numel(); ++o)
    for (int r = 0; r < 4; ++r) idx.push_back(o);
  return take(bias, idx, {bias.numel() * 4});
}

}  // namespace

Tensor conv2d(const Tensor& f, const ConvFilter& filter) {
  const auto& w = filter.weight;
  require(f.rank() == 4, "conv2d expects [B, C, H, W], got " + to_string(f.shape()));
  require(w.rank() == 4 && w.dim(2) == w.dim(3), "conv2d filter must be [out, in, k, k], got " + to_string(w.shape()));
  require(w.dim(1) == f.dim(1), "conv2d channel mismatch: input " + to_string(f.shape()) + ", filter " + to_string(w.shape()));
  if (filter.bias.defined()) require(filter.bias.rank() == 1 && filter.bias.dim(0) == w.dim(0), "conv2d bias shape");
  ConvGeometry g{f.dim(0), f.dim(1), w.dim(0), f.dim(2), f.dim(3), w.dim(2), filter.stride, filter.padding};
  return conv_core(f, w, filter.bias, g, {g.batch, g.out_ch, g.out_h(), g.out_w()});
}

Tensor lifting_filter_bank(const Tensor& weight) {
  require(weight.rank() == 4 && weight.dim(2) == weight.dim(3), "lifting filter must be [out, in, k, k]");
  const auto out = weight.dim(0), in = weight.dim(1), k = weight.dim(2);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(out * 4 * in * k * k));
  for (std::int64_t o = 0; o < out; ++o)
    for (int p = 0; p < 4; ++p)
      for (std::int64_t i = 0; i < in; ++i)
        for (std::int64_t a = 0; a < k; ++a)
          for (std::int64_t b = 0; b < k; ++b) {
            const auto [ra, rb] = rotate_index(p, a, b, k);
            idx[(((o * 4 + p) * in + i) * k + ra) * k + rb] = ((o * in + i) * k + a) * k + b;
          }
  return take(weight, std::move(idx), {out * 4, in, k, k});
}

Tensor group_filter_bank(const Tensor& weight) {
  require(weight.rank() == 5 && weight.dim(2) == 4 && weight.dim(3) == weight.dim(4),
          "group filter must be [out, in, 4, k, k], got " + to_string(weight.shape()));
  const auto out = weight.dim(0), in = weight.dim(1), k = weight.dim(3);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(out * 4 * in * 4 * k * k));
  for (std::int64_t o = 0; o < out; ++o)
    for (int p = 0; p < 4; ++p)
      for (std::int64_t i = 0; i < in; ++i)
        for (int r = 0; r < 4; ++r)
          for (std::int64_t a = 0; a < k; ++a)
            for (std::int64_t b = 0; b < k; ++b) {
              const auto [ra, rb] = rotate_index(p, a, b, k);
              const auto dst = ((((o * 4 + p) * in + i) * 4 + r) * k + ra) * k + rb;
              idx[dst] = (((o * in + i) * 4 + mod4(r - p)) * k + a) * k + b;
            }
  return take(weight, std::move(idx), {out * 4, in * 4, k, k});
}

Tensor lifting_conv(const Tensor& f, const ConvFilter& filter) {
  require(f.rank() == 4, "lifting_conv expects [B, C, H, W], got " + to_string(f.shape()));
  const auto& w = filter.weight;
  require(w.rank() == 4 && w.dim(1) == f.dim(1), "lifting_conv channel mismatch");
  const Tensor bank = lifting_filter_bank(w);
  ConvGeometry g{f.dim(0), f.dim(1), bank.dim(0), f.dim(2), f.dim(3), w.dim(2), filter.stride, filter.padding};
  return conv_core(f, reshape(bank, {bank.dim(0), bank.numel() / bank.dim(0)}), expand_bias(filter.bias), g,
                   {g.batch, w.dim(0), 4, g.out_h(), g.out_w()});
}

Tensor group_conv(const Tensor& f, const GroupConvFilter& filter) {
  require(f.rank() == 5 && f.dim(2) == 4, "group_conv expects [B, C, 4, H, W], got " + to_string(f.shape()));
  const auto& w = filter.weight;
  require(w.rank() == 5 && w.dim(1) == f.dim(1),
          "group_conv channel mismatch: input " + to_string(f.shape()) + ", filter " + to_string(w.shape()));
  const Tensor bank = group_filter_bank(w);
  ConvGeometry g{f.dim(0), f.dim(1) * 4, bank.dim(0), f.dim(3), f.dim(4), w.dim(3), filter.stride, filter.padding};
  return conv_core(f, reshape(bank, {bank.dim(0), bank.numel() / bank.dim(0)}), expand_bias(filter.bias), g,
                   {g.batch, w.dim(0), 4, g.out_h(), g.out_w()});
}

Tensor pointwise(const Tensor& f, const Tensor& w) {
  require(f.rank() >= 2, "pointwise expects [B, C, ...]");
  require(w.rank() == 2 && w.dim(1) == f.dim(1),
          "pointwise channel mismatch: input " + to_string(f.shape()) + ", weights " + to_string(w.shape()));
  const auto sites = f.numel() / (f.dim(0) * f.dim(1));
  Shape out_shape = f.shape();
  out_shape[1] = w.dim(0);
  ConvGeometry g{f.dim(0), f.dim(1), w.dim(0), 1, sites, 1, 1, Padding::Zero};
  return conv_core(f, w, {}, g, std::move(out_shape));
}

BatchNormState BatchNormState::create(std::int64_t channels) {
  BatchNormState s;
  s.gamma = Tensor::ones({channels}, true);
  s.beta = Tensor::zeros({channels}, true);
  s.running_mean = Tensor::zeros({channels});
  s.running_var = Tensor::ones({channels});
  return s;
}

Tensor batchnorm(const Tensor& f, BatchNormState& state, Mode mode) {
  require(f.rank() >= 2, "batchnorm expects [B, C, ...]");
  const auto batch = f.dim(0), channels = f.dim(1);
  require(state.gamma.numel() == channels && state.beta.numel() == channels, "batchnorm parameter size mismatch");
  const auto sites = f.numel() / (batch * channels);
  const auto count = batch * sites;
  const auto x = f.data();
  std::vector<double> mu(channels), inv_std(channels);

  if (mode == Mode::Train) {
    if (batch < 2) throw Error(ErrorKind::BatchTooSmall, "train-mode batchnorm needs batch >= 2");
    auto rm = state.running_mean.mutable_data();
    auto rv = state.running_var.mutable_data();
    for (std::int64_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::int64_t b = 0; b < batch; ++b) {
        const float* p = x.data() + (b * channels + c) * sites;
        for (std::int64_t i = 0; i < sites; ++i) s += p[i];
      }
      const double m = s / count;
      double v = 0.0;
      for (std::int64_t b = 0; b < batch; ++b) {
        const float* p = x.data() + (b * channels + c) * sites;
        for (std::int64_t i = 0; i < sites; ++i) v += (p[i] - m) * (p[i] - m);
      }
      const double var = v / count;
      mu[c] = m;
      inv_std[c] = 1.0 / std::sqrt(var + state.eps);
      const double unbiased = count > 1 ? v / (count - 1) : var;
      rm[c] = static_cast<float>((1.0 - state.momentum) * rm[c] + state.momentum * m);
      rv[c] = static_cast<float>((1.0 - state.momentum) * rv[c] + state.momentum * unbiased);
    }
  } else {
    const auto rm = state.running_mean.data();
    const auto rv = state.running_var.data();
    for (std::int64_t c = 0; c < channels; ++c) {
      mu[c] = rm[c];
      inv_std[c] = 1.0 / std::sqrt(static_cast<double>(rv[c]) + state.eps);
    }
  }

  const auto gamma = state.gamma.data();
  const auto beta = state.beta.data();
  std::vector<float> out(x.size());
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t c = 0; c < channels; ++c) {
      const auto base = (b * channels + c) * sites;
      const double scale = gamma[c] * inv_std[c];
      for (std::int64_t i = 0; i < sites; ++i) out[base + i] = static_cast<float>((x[base + i] - mu[c]) * scale + beta[c]);
    }

  const bool train = mode == Mode::Train;
  return detail::make_result(f.shape(), std::move(out), {f, state.gamma, state.beta},
                             [f, gamma_t = state.gamma, mu, inv_std, batch, channels, sites, count, train](auto gout, auto gin) {
    const auto x = f.data();
    const auto gamma = gamma_t.data();
    for (std::int64_t c = 0; c < channels; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::int64_t b = 0; b < batch; ++b) {
        const auto base = (b * channels + c) * sites;
        for (std::int64_t i = 0; i < sites; ++i) {
          const double xhat = (x[base + i] - mu[c]) * inv_std[c];
          sum_g += gout[base + i];
          sum_gx += gout[base + i] * xhat;
        }
      }
      if (!gin[1].empty()) gin[1][c] = static_cast<float>(sum_gx);
      if (!gin[2].empty()) gin[2][c] = static_cast<float>(sum_g);
      if (gin[0].empty()) continue;
      const double k = gamma[c] * inv_std[c];
      for (std::int64_t b = 0; b < batch; ++b) {
        const auto base = (b * channels + c) * sites;
        for (std::int64_t i = 0; i < sites; ++i) {
          if (!train) {
            gin[0][base + i] = static_cast<float>(gout[base + i] * k);
            continue;
          }
          const double xhat = (x[base + i] - mu[c]) * inv_std[c];
          gin[0][base + i] = static_cast<float>(k * (gout[base + i] - sum_g / count - xhat * sum_gx / count));
        }
      }
    }
  }, "batchnorm");
}

Tensor avgpool2(const Tensor& f) {
  require(f.rank() >= 2, "avgpool2 expects [..., H, W]");
  const auto h = f.dim(-2), w = f.dim(-1);
  if (h % 2 != 0 || w % 2 != 0) {
    throw Error(ErrorKind::OddSpatialDim, "avgpool2 on " + std::to_string(h) + "x" + std::to_string(w));
  }
  const auto planes = f.numel() / (h * w);
  const auto oh = h / 2, ow = w / 2;
  const auto x = f.data();
  std::vector<float> out(static_cast<std::size_t>(planes * oh * ow));
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t i = 0; i < oh; ++i)
      for (std::int64_t j = 0; j < ow; ++j) {
        const float* src = x.data() + p * h * w + 2 * i * w + 2 * j;
        const double s = static_cast<double>(src[0]) + src[1] + src[w] + src[w + 1];
        out[(p * oh + i) * ow + j] = static_cast<float>(s / 4.0);
      }
  Shape shape = f.shape();
  shape[shape.size() - 2] = oh;
  shape[shape.size() - 1] = ow;
  return detail::make_result(std::move(shape), std::move(out), {f}, [planes, h, w, oh, ow](auto gout, auto gin) {
    for (std::int64_t p = 0; p < planes; ++p)
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j) {
          const float g = gout[(p * oh + i) * ow + j] * 0.25f;
          float* dst = gin[0].data() + p * h * w + 2 * i * w + 2 * j;
          dst[0] += g;
          dst[1] += g;
          dst[w] += g;
          dst[w + 1] += g;
        }
  }, "avgpool2");
}

Tensor global_pool_and_linear(const Tensor& f, const Tensor& w, const Tensor& b) {
  require(f.rank() >= 3, "global_pool_and_linear expects [B, C, ...]");
  require(w.rank() == 2 && w.dim(1) == f.dim(1), "head weight must be [classes, C], got " + to_string(w.shape()));
  require(b.rank() == 1 && b.dim(0) == w.dim(0), "head bias must be [classes]");
  std::vector<int> axes(f.rank() - 2);
  std::iota(axes.begin(), axes.end(), 2);
  const Tensor pooled = mean(f, axes);
  return add(matmul(pooled, transpose(w)), b);
}

}  // namespace asc
