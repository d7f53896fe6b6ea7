#include "asc/attention.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "asc/nn.hpp"
#include "asc/ops.hpp"

#ifdef ASC_TEST_HOOKS
#include "asc/testing.hpp"
#endif

namespace asc {

namespace {

enum class Weights { Softmax, Ones, Uniform };

Weights weight_mode() {
#ifdef ASC_TEST_HOOKS
  switch (testing::score_override()) {
    case testing::ScoreOverride::Ones: return Weights::Ones;
    case testing::ScoreOverride::Uniform: return Weights::Uniform;
    case testing::ScoreOverride::None: break;
  }
#endif
  return Weights::Softmax;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw Error(ErrorKind::ShapeMismatch, message);
}

void require_heads(std::int64_t channels, int heads) {
  if (heads < 1 || channels % heads != 0) {
    throw Error(ErrorKind::HeadDivisibility,
                std::to_string(channels) + " channels cannot be split into " + std::to_string(heads) + " heads");
  }
}

void require_odd(int k) {
  if (k < 1 || k % 2 == 0) throw Error(ErrorKind::ShapeMismatch, "window size must be odd, got " + std::to_string(k));
}

// Grid index inside a k x k kernel of the offset R^-P u, for every window slot j
// (slots enumerate offsets u row-major).
std::vector<int> rotated_slots(int orientations, int k) {
  const int kk = k * k;
  const int c = k / 2;
  std::vector<int> slots(static_cast<std::size_t>(orientations * kk));
  for (int p = 0; p < orientations; ++p)
    for (int j = 0; j < kk; ++j) {
      const Offset u = rotate(-p, Offset{j / k - c, j % k - c});
      slots[p * kk + j] = static_cast<int>((u.row + c) * k + (u.col + c));
    }
  return slots;
}

Tensor attention_weights(const Tensor& scores) {
  switch (weight_mode()) {
    case Weights::Ones: return Tensor::ones(scores.shape());
    case Weights::Uniform: return Tensor::full(scores.shape(), 1.0f / static_cast<float>(scores.dim(-1)));
    case Weights::Softmax: break;
  }
  return softmax(scores, -1);
}

// Picks slot j of the trailing window axis: [..., kk] -> [...].
Tensor window_slot(const Tensor& window, int j) {
  const auto kk = window.dim(-1);
  Shape shape(window.shape().begin(), window.shape().end() - 1);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(window.numel() / kk));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::int64_t>(i) * kk + j;
  return take(window, std::move(idx), std::move(shape));
}

Shape with_trailing(Shape s, std::int64_t extra) {
  s.push_back(extra);
  return s;
}

// Sums with eight independent double accumulators, so the loops vectorise
// while the summation order stays fixed.
double lane_dot(const float* a, const float* b, std::int64_t n) {
  double acc[8] = {};
  std::int64_t t = 0;
  for (; t + 8 <= n; t += 8)
    for (int l = 0; l < 8; ++l) acc[l] += static_cast<double>(a[t + l]) * b[t + l];
  double s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; t < n; ++t) s += static_cast<double>(a[t]) * b[t];
  return s;
}

double lane_sum(const float* a, std::int64_t n) {
  double acc[8] = {};
  std::int64_t t = 0;
  for (; t + 8 <= n; t += 8)
    for (int l = 0; l < 8; ++l) acc[l] += a[t + l];
  double s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; t < n; ++t) s += a[t];
  return s;
}

// Fused local attention over [B, D, O, H, W] embeddings, O = 1 on the plane and
// O = 4 on p4. For output orientation P and site x, head h:
//   q_c   = sum_R Q_c(R, x) psi_q[c, R - P] + beta_q[c]
//   k_c,j = sum_R K_c(R, y_j) psi_k[c, R - P, rot_P(j)] + beta_k[c, rot_P(j)]
//   alpha = softmax_j(scale * sum_c q_c k_c,j)
//   out_c = sum_j alpha_j (sum_R V_c(R, y_j) psi_v[c, R - P, rot_P(j)] + beta_v[c, rot_P(j)])
// K and V are copied once per image into planes padded by k/2 (zeros or
// wrapped values). Per-site buffers use the padded row stride, so the window
// slot j is a constant offset into the padded plane and each slot is a single
// contiguous loop; the extra columns hold zero queries and zero output
// gradients and are dropped on the way out. Nothing is cached between forward
// and backward; the backward pass recomputes the scores.
class FusedAttention {
 public:
  struct Inputs {
    Tensor q, k, v;
    Tensor psi_q, beta_q, psi_k, beta_k, psi_v, beta_v;
  };

  FusedAttention(const Inputs& in, std::int64_t orientations, int ksize, int heads, Padding padding)
      : batch_(in.q.dim(0)), dk_(in.q.dim(1)), dv_(in.v.dim(1)), orient_(orientations),
        height_(in.q.dim(-2)), width_(in.q.dim(-1)), ksize_(ksize), kk_(ksize * ksize), heads_(heads),
        padding_(padding), mode_(weight_mode()) {
    require_odd(ksize);
    require_heads(dk_, heads);
    require_heads(dv_, heads);
    const auto matches = [&](const Tensor& t, std::int64_t d) {
      return t.numel() == batch_ * d * orient_ * height_ * width_ && t.dim(0) == batch_ && t.dim(1) == d &&
             t.dim(-2) == height_ && t.dim(-1) == width_;
    };
    require(matches(in.q, dk_) && matches(in.k, dk_) && matches(in.v, dv_),
            "attention embeddings disagree: q " + to_string(in.q.shape()) + ", k " + to_string(in.k.shape()) +
                ", v " + to_string(in.v.shape()));
    require(in.psi_q.numel() == dk_ * orient_ && in.beta_q.numel() == dk_, "query affine parameters have the wrong size");
    require(in.psi_k.numel() == dk_ * orient_ * kk_ && in.beta_k.numel() == dk_ * kk_,
            "key affine parameters do not match a " + std::to_string(ksize) + "x" + std::to_string(ksize) + " window");
    require(in.psi_v.numel() == dv_ * orient_ * kk_ && in.beta_v.numel() == dv_ * kk_,
            "value affine parameters do not match a " + std::to_string(ksize) + "x" + std::to_string(ksize) + " window");
    if (padding == Padding::Circular && (ksize > height_ || ksize > width_)) {
      throw Error(ErrorKind::KernelLargerThanPaddedInput, "circular window larger than the feature map");
    }
    dhk_ = dk_ / heads;
    dhv_ = dv_ / heads;
    scale_ = 1.0 / static_cast<double>(dhk_);
    pad_ = ksize / 2;
    hp_ = height_ + 2 * pad_;
    wp_ = width_ + 2 * pad_;
    sp_ = height_ * wp_;
    slots_ = rotated_slots(static_cast<int>(orient_), ksize);
    for (std::int64_t p = 0; p < orient_; ++p)
      for (std::int64_t r = 0; r < orient_; ++r) shifts_.push_back(static_cast<int>((r - p + orient_) % orient_));
  }

  Tensor forward(const Inputs& in) const {
    const Shape out_shape = in.q.rank() == 4 ? Shape{batch_, dv_, height_, width_}
                                             : Shape{batch_, dv_, orient_, height_, width_};
    std::vector<float> out(static_cast<std::size_t>(batch_ * dv_ * orient_ * hw()));
    Raw raw(in);
    Work w(*this);
    std::vector<double> val(static_cast<std::size_t>(sp_)), acc(static_cast<std::size_t>(sp_));
    for (std::int64_t b = 0; b < batch_; ++b) {
      load_image(raw, b, w);
      for (std::int64_t p = 0; p < orient_; ++p) {
        scores(raw, b, p, w);
        const int* slot = slots_.data() + p * kk_;
        for (std::int64_t c = 0; c < dv_; ++c) {
          const double* alpha = w.alpha.data() + (c / dhv_) * kk_ * sp_;
          std::fill(acc.begin(), acc.end(), 0.0);
          for (int j = 0; j < kk_; ++j) {
            mapped_plane(w.vpad.data(), raw.psi_v, raw.beta_v, c, p, slot[j], j, val.data());
            const double* a = alpha + j * sp_;
            for (std::int64_t t = 0; t < sp_; ++t) acc[t] += a[t] * val[t];
          }
          unstride(acc.data(), out.data() + index(b, c, dv_, p, 0));
        }
      }
    }
    const FusedAttention self = *this;
    return detail::make_result(
        out_shape, std::move(out),
        {in.q, in.k, in.v, in.psi_q, in.beta_q, in.psi_k, in.beta_k, in.psi_v, in.beta_v},
        [self, in](auto gout, auto gin) { self.backward(in, gout, gin); }, "attention");
  }

  Tensor weights(const Inputs& in) const {
    const Shape shape = in.q.rank() == 4 ? Shape{batch_, heads_, height_, width_, kk_}
                                         : Shape{batch_, heads_, orient_, height_, width_, kk_};
    std::vector<float> out(static_cast<std::size_t>(numel(shape)));
    Raw raw(in);
    Work w(*this);
    for (std::int64_t b = 0; b < batch_; ++b) {
      load_image(raw, b, w);
      for (std::int64_t p = 0; p < orient_; ++p) {
        scores(raw, b, p, w);
        for (int h = 0; h < heads_; ++h) {
          float* dst = out.data() + ((b * heads_ + h) * orient_ + p) * hw() * kk_;
          const double* a = w.alpha.data() + h * kk_ * sp_;
          for (int j = 0; j < kk_; ++j)
            for (std::int64_t i = 0; i < height_; ++i)
              for (std::int64_t x = 0; x < width_; ++x)
                dst[(i * width_ + x) * kk_ + j] = static_cast<float>(a[j * sp_ + i * wp_ + x]);
        }
      }
    }
    return Tensor::from(shape, std::move(out));
  }

 private:
  struct Raw {
    const float *q, *k, *v, *psi_q, *beta_q, *psi_k, *beta_k, *psi_v, *beta_v;
    explicit Raw(const Inputs& in)
        : q(in.q.data().data()), k(in.k.data().data()), v(in.v.data().data()), psi_q(in.psi_q.data().data()),
          beta_q(in.beta_q.data().data()), psi_k(in.psi_k.data().data()), beta_k(in.beta_k.data().data()),
          psi_v(in.psi_v.data().data()), beta_v(in.beta_v.data().data()) {}
  };

  // Buffers for one image: padded K and V planes [d, O, Hp, Wp] (plus slack
  // for the overhanging last row), mapped queries [dk, H*Wp] and weights
  // [heads, kk, H*Wp] for the current orientation.
  struct Work {
    std::vector<float> kpad, vpad;
    std::vector<double> qv, alpha;
    explicit Work(const FusedAttention& a)
        : kpad(a.padded_size(a.dk_)), vpad(a.padded_size(a.dv_)), qv(a.dk_ * a.sp_), alpha(a.heads_ * a.kk_ * a.sp_) {}
  };

  std::int64_t hw() const { return height_ * width_; }
  std::size_t padded_size(std::int64_t d) const { return static_cast<std::size_t>(d * orient_ * hp_ * wp_ + kk_); }

  // Flat offset into a [B, d, O, H, W] buffer.
  std::int64_t index(std::int64_t b, std::int64_t c, std::int64_t d, std::int64_t o, std::int64_t site) const {
    return ((b * d + c) * orient_ + o) * hw() + site;
  }

  // [H, W] -> [H, Wp] with zero extra columns, and back.
  template <typename From, typename To>
  void restride(const From* src, To* dst) const {
    for (std::int64_t i = 0; i < height_; ++i) {
      std::copy_n(src + i * width_, width_, dst + i * wp_);
      std::fill_n(dst + i * wp_ + width_, wp_ - width_, To{0});
    }
  }
  template <typename From, typename To>
  void unstride(const From* src, To* dst) const {
    for (std::int64_t i = 0; i < height_; ++i)
      for (std::int64_t x = 0; x < width_; ++x) dst[i * width_ + x] = static_cast<To>(src[i * wp_ + x]);
  }

  // Source coordinate of padded index t along an axis of length n, or -1 for a zero cell.
  std::int64_t source(std::int64_t t, std::int64_t n) const {
    const auto s = t - pad_;
    if (s >= 0 && s < n) return s;
    return padding_ == Padding::Zero ? -1 : wrap(s, n);
  }

  // planes [B, d, O, H, W] at image b -> padded [d, O, Hp, Wp].
  void pad_image(const float* planes, std::int64_t d, std::int64_t b, std::vector<float>& dst) const {
    const float* src = planes + b * d * orient_ * hw();
    for (std::int64_t m = 0; m < d * orient_; ++m) {
      float* out = dst.data() + m * hp_ * wp_;
      for (std::int64_t pi = 0; pi < hp_; ++pi) {
        const auto si = source(pi, height_);
        for (std::int64_t pj = 0; pj < wp_; ++pj) {
          const auto sj = source(pj, width_);
          out[pi * wp_ + pj] = (si < 0 || sj < 0) ? 0.0f : src[m * hw() + si * width_ + sj];
        }
      }
    }
  }

  // Adjoint of pad_image: folds padded gradients back onto [d, O, H, W] at image b.
  void fold_image(const std::vector<float>& padded, std::int64_t d, std::int64_t b, std::span<float> dst) const {
    float* out = dst.data() + b * d * orient_ * hw();
    for (std::int64_t m = 0; m < d * orient_; ++m) {
      const float* src = padded.data() + m * hp_ * wp_;
      for (std::int64_t pi = 0; pi < hp_; ++pi) {
        const auto si = source(pi, height_);
        if (si < 0) continue;
        for (std::int64_t pj = 0; pj < wp_; ++pj) {
          const auto sj = source(pj, width_);
          if (sj >= 0) out[m * hw() + si * width_ + sj] += src[pi * wp_ + pj];
        }
      }
    }
  }

  void load_image(const Raw& raw, std::int64_t b, Work& w) const {
    pad_image(raw.k, dk_, b, w.kpad);
    pad_image(raw.v, dv_, b, w.vpad);
  }

  // Offset of window slot j inside padded plane m, aligned with strided site 0.
  std::int64_t neighbour(std::int64_t m, int j) const { return m * hp_ * wp_ + (j / ksize_) * wp_ + j % ksize_; }

  // out[t] = beta[c, sl] + sum_R padded(c, R) shifted by slot j [t] * psi[c, R - P, sl].
  void mapped_plane(const float* padded, const float* psi, const float* beta, std::int64_t c, std::int64_t p, int sl,
                    int j, double* out) const {
    std::fill_n(out, sp_, static_cast<double>(beta[c * kk_ + sl]));
    const int* shift = shifts_.data() + p * orient_;
    for (std::int64_t r = 0; r < orient_; ++r) {
      const double wgt = psi[(c * orient_ + shift[r]) * kk_ + sl];
      const float* src = padded + neighbour(c * orient_ + r, j);
      for (std::int64_t t = 0; t < sp_; ++t) out[t] += wgt * src[t];
    }
  }

  // Adjoint of mapped_plane for the gradient g [H*Wp]: accumulates into the
  // padded embedding gradient and the psi / beta gradients (each may be null).
  void mapped_plane_backward(const float* padded, const float* psi, std::int64_t c, std::int64_t p, int sl, int j,
                             const float* g, float* d_pad, double* d_psi, double* d_beta) const {
    if (d_beta) d_beta[c * kk_ + sl] += lane_sum(g, sp_);
    const int* shift = shifts_.data() + p * orient_;
    for (std::int64_t r = 0; r < orient_; ++r) {
      const auto pi = (c * orient_ + shift[r]) * kk_ + sl;
      const auto off = neighbour(c * orient_ + r, j);
      if (d_psi) d_psi[pi] += lane_dot(g, padded + off, sp_);
      if (d_pad) {
        const float wgt = psi[pi];
        float* dst = d_pad + off;
        for (std::int64_t t = 0; t < sp_; ++t) dst[t] += g[t] * wgt;
      }
    }
  }

  void mapped_queries(const Raw& raw, std::int64_t b, std::int64_t p, std::vector<double>& qv) const {
    const int* shift = shifts_.data() + p * orient_;
    std::vector<double> plane(static_cast<std::size_t>(hw()), 0.0);
    for (std::int64_t c = 0; c < dk_; ++c) {
      std::fill(plane.begin(), plane.end(), static_cast<double>(raw.beta_q[c]));
      for (std::int64_t r = 0; r < orient_; ++r) {
        const double wgt = raw.psi_q[c * orient_ + shift[r]];
        const float* src = raw.q + index(b, c, dk_, r, 0);
        for (std::int64_t x = 0; x < hw(); ++x) plane[x] += wgt * src[x];
      }
      restride(plane.data(), qv.data() + c * sp_);
    }
  }

  // Fills w.qv and w.alpha for image b and output orientation p.
  void scores(const Raw& raw, std::int64_t b, std::int64_t p, Work& w) const {
    mapped_queries(raw, b, p, w.qv);
    std::fill(w.alpha.begin(), w.alpha.end(), 0.0);
    if (mode_ == Weights::Softmax) {
      const int* slot = slots_.data() + p * kk_;
      std::vector<double> key(static_cast<std::size_t>(sp_));
      for (std::int64_t c = 0; c < dk_; ++c) {
        double* dst = w.alpha.data() + (c / dhk_) * kk_ * sp_;
        const double* q = w.qv.data() + c * sp_;
        for (int j = 0; j < kk_; ++j) {
          mapped_plane(w.kpad.data(), raw.psi_k, raw.beta_k, c, p, slot[j], j, key.data());
          double* s = dst + j * sp_;
          for (std::int64_t t = 0; t < sp_; ++t) s[t] += q[t] * key[t];
        }
      }
    }
    for (int h = 0; h < heads_; ++h) normalize(w.alpha.data() + h * kk_ * sp_);
  }

  // Column-wise weights over the window axis of a [kk, H*Wp] block.
  void normalize(double* s) const {
    const auto n = sp_;
    if (mode_ == Weights::Ones || mode_ == Weights::Uniform) {
      std::fill_n(s, kk_ * n, mode_ == Weights::Ones ? 1.0 : 1.0 / kk_);
      return;
    }
    std::vector<double> m(s, s + n), z(static_cast<std::size_t>(n), 0.0);
    for (int j = 1; j < kk_; ++j)
      for (std::int64_t t = 0; t < n; ++t) m[t] = std::max(m[t], s[j * n + t]);
    for (int j = 0; j < kk_; ++j)
      for (std::int64_t t = 0; t < n; ++t) {
        // Clamped so that negligible weights skip the slow underflow path of exp.
        const double e = std::exp(std::max(scale_ * (s[j * n + t] - m[t]), -80.0));
        s[j * n + t] = e;
        z[t] += e;
      }
    for (std::int64_t t = 0; t < n; ++t) z[t] = 1.0 / z[t];
    for (int j = 0; j < kk_; ++j)
      for (std::int64_t t = 0; t < n; ++t) s[j * n + t] *= z[t];
  }

  void backward(const Inputs& in, std::span<const float> gout, std::span<const std::span<float>> gin) const {
    const auto acc = [&](std::size_t i) { return std::vector<double>(gin[i].size(), 0.0); };
    const auto ptr = [](std::vector<double>& v) { return v.empty() ? nullptr : v.data(); };
    std::vector<double> dpsi_q = acc(3), dbeta_q = acc(4), dpsi_k = acc(5), dbeta_k = acc(6), dpsi_v = acc(7),
                        dbeta_v = acc(8);
    const bool want_q = !gin[0].empty(), want_k = !gin[1].empty(), want_v = !gin[2].empty();
    const bool need_score = (want_q || want_k || !dpsi_q.empty() || !dbeta_q.empty() || !dpsi_k.empty() ||
                             !dbeta_k.empty()) && mode_ == Weights::Softmax;

    Raw raw(in);
    Work w(*this);
    std::vector<float> dkpad(want_k ? w.kpad.size() : 0), dvpad(want_v ? w.vpad.size() : 0);
    std::vector<double> dalpha(w.alpha.size()), dqv(w.qv.size()), val(static_cast<std::size_t>(sp_)),
        weighted(static_cast<std::size_t>(sp_)), plane(static_cast<std::size_t>(hw()));
    std::vector<float> g(static_cast<std::size_t>(sp_)), go(static_cast<std::size_t>(sp_));
    const auto n = sp_;
    for (std::int64_t b = 0; b < batch_; ++b) {
      load_image(raw, b, w);
      std::fill(dkpad.begin(), dkpad.end(), 0.0f);
      std::fill(dvpad.begin(), dvpad.end(), 0.0f);
      for (std::int64_t p = 0; p < orient_; ++p) {
        scores(raw, b, p, w);
        const int* slot = slots_.data() + p * kk_;
        std::fill(dalpha.begin(), dalpha.end(), 0.0);
        for (std::int64_t c = 0; c < dv_; ++c) {
          const double* alpha = w.alpha.data() + (c / dhv_) * kk_ * n;
          double* da = dalpha.data() + (c / dhv_) * kk_ * n;
          restride(gout.data() + index(b, c, dv_, p, 0), go.data());
          for (int j = 0; j < kk_; ++j) {
            mapped_plane(w.vpad.data(), raw.psi_v, raw.beta_v, c, p, slot[j], j, val.data());
            const double* a = alpha + j * n;
            double* daj = da + j * n;
            for (std::int64_t t = 0; t < n; ++t) {
              daj[t] += go[t] * val[t];
              g[t] = static_cast<float>(a[t] * go[t]);
            }
            mapped_plane_backward(w.vpad.data(), raw.psi_v, c, p, slot[j], j, g.data(), want_v ? dvpad.data() : nullptr,
                                  ptr(dpsi_v), ptr(dbeta_v));
          }
        }
        if (!need_score) continue;

        // dalpha becomes the gradient of the raw (pre-softmax) dot products.
        for (int h = 0; h < heads_; ++h) {
          const double* a = w.alpha.data() + h * kk_ * n;
          double* da = dalpha.data() + h * kk_ * n;
          std::fill(weighted.begin(), weighted.end(), 0.0);
          for (int j = 0; j < kk_; ++j)
            for (std::int64_t t = 0; t < n; ++t) weighted[t] += a[j * n + t] * da[j * n + t];
          for (int j = 0; j < kk_; ++j)
            for (std::int64_t t = 0; t < n; ++t) da[j * n + t] = scale_ * a[j * n + t] * (da[j * n + t] - weighted[t]);
        }

        std::fill(dqv.begin(), dqv.end(), 0.0);
        for (std::int64_t c = 0; c < dk_; ++c) {
          const double* ds = dalpha.data() + (c / dhk_) * kk_ * n;
          const double* q = w.qv.data() + c * n;
          double* dq = dqv.data() + c * n;
          for (int j = 0; j < kk_; ++j) {
            mapped_plane(w.kpad.data(), raw.psi_k, raw.beta_k, c, p, slot[j], j, val.data());
            const double* dsj = ds + j * n;
            for (std::int64_t t = 0; t < n; ++t) {
              dq[t] += dsj[t] * val[t];
              g[t] = static_cast<float>(dsj[t] * q[t]);
            }
            mapped_plane_backward(w.kpad.data(), raw.psi_k, c, p, slot[j], j, g.data(), want_k ? dkpad.data() : nullptr,
                                  ptr(dpsi_k), ptr(dbeta_k));
          }
        }

        const int* shift = shifts_.data() + p * orient_;
        for (std::int64_t c = 0; c < dk_; ++c) {
          unstride(dqv.data() + c * n, plane.data());
          if (!dbeta_q.empty()) dbeta_q[c] += std::accumulate(plane.begin(), plane.end(), 0.0);
          for (std::int64_t r = 0; r < orient_; ++r) {
            const auto pi = c * orient_ + shift[r];
            const auto base = index(b, c, dk_, r, 0);
            if (want_q) {
              const double wgt = raw.psi_q[pi];
              float* dst = gin[0].data() + base;
              for (std::int64_t x = 0; x < hw(); ++x) dst[x] = static_cast<float>(dst[x] + plane[x] * wgt);
            }
            if (!dpsi_q.empty()) dpsi_q[pi] += std::inner_product(plane.begin(), plane.end(), raw.q + base, 0.0);
          }
        }
      }
      if (want_k) fold_image(dkpad, dk_, b, gin[1]);
      if (want_v) fold_image(dvpad, dv_, b, gin[2]);
    }
    const auto store = [&](std::size_t i, const std::vector<double>& v) {
      for (std::size_t e = 0; e < v.size(); ++e) gin[i][e] = static_cast<float>(v[e]);
    };
    store(3, dpsi_q);
    store(4, dbeta_q);
    store(5, dpsi_k);
    store(6, dbeta_k);
    store(7, dpsi_v);
    store(8, dbeta_v);
  }

  std::int64_t batch_, dk_, dv_, orient_, height_, width_;
  int ksize_, kk_, heads_;
  Padding padding_;
  Weights mode_;
  std::int64_t dhk_ = 1, dhv_ = 1, pad_ = 0, hp_ = 0, wp_ = 0, sp_ = 0;
  double scale_ = 1.0;
  std::vector<int> slots_;
  std::vector<int> shifts_;  // (R - P) mod O at [P * O + R]
};

Tensor group_pointwise(const Tensor& f, const Tensor& w) {
  return group_conv(f, GroupConvFilter{w, {}, 1, Padding::Zero});
}

// Centre taps psi[c, centre] of a [C, (O,) k, k] parameter -> [C(, O)].
Tensor centre_taps(const Tensor& t, std::int64_t rows, int k) {
  const int kk = k * k;
  std::vector<std::int64_t> idx(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) idx[r] = r * kk + kk / 2;
  return take(t, std::move(idx), {rows});
}

FusedAttention::Inputs planar_inputs(const Tensor& q, const Tensor& k, const Tensor& v, const AscParams& p) {
  return {q, k, v, p.aq.psi, p.aq.beta, p.ak.psi, p.ak.beta, p.av.psi, p.av.beta};
}

void check_planar(const Tensor& f, const char* what) {
  require(f.rank() == 4, std::string(what) + " expects [B, C, H, W], got " + to_string(f.shape()));
}

void check_group(const Tensor& f, const char* what) {
  require(f.rank() == 5 && f.dim(2) == 4, std::string(what) + " expects [B, C, 4, H, W], got " + to_string(f.shape()));
}

}  // namespace

#ifdef ASC_TEST_HOOKS
namespace testing {
namespace {
thread_local ScoreOverride current_override = ScoreOverride::None;
}
ScoreOverride score_override() { return current_override; }
ScopedScoreOverride::ScopedScoreOverride(ScoreOverride mode) : previous_(current_override) { current_override = mode; }
ScopedScoreOverride::~ScopedScoreOverride() { current_override = previous_; }
}  // namespace testing
#endif

Tensor neighborhood_gather(const Tensor& f, int k, Padding padding) {
  require_odd(k);
  require(f.rank() >= 2, "neighborhood_gather expects [..., H, W]");
  const auto h = f.dim(-2), w = f.dim(-1);
  if (padding == Padding::Circular && (k > h || k > w)) {
    throw Error(ErrorKind::KernelLargerThanPaddedInput,
                "circular " + std::to_string(k) + "x" + std::to_string(k) + " window on " + std::to_string(h) + "x" +
                    std::to_string(w));
  }
  const int kk = k * k, c = k / 2;
  const auto hw = h * w;
  // Source offset within one plane, or -1 for zero padding.
  std::vector<std::int64_t> src(static_cast<std::size_t>(hw * kk));
  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < w; ++j)
      for (int t = 0; t < kk; ++t) {
        auto si = i + t / k - c, sj = j + t % k - c;
        auto& s = src[(i * w + j) * kk + t];
        if (si < 0 || si >= h || sj < 0 || sj >= w) {
          if (padding == Padding::Zero) {
            s = -1;
            continue;
          }
          si = wrap(si, h);
          sj = wrap(sj, w);
        }
        s = si * w + sj;
      }
  const auto planes = f.numel() / hw;
  const auto x = f.data();
  std::vector<float> out(static_cast<std::size_t>(planes * hw * kk));
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t n = 0; n < hw * kk; ++n) out[p * hw * kk + n] = src[n] < 0 ? 0.0f : x[p * hw + src[n]];
  return detail::make_result(with_trailing(f.shape(), kk), std::move(out), {f},
                             [src = std::move(src), planes, hw, kk](auto gout, auto gin) {
    for (std::int64_t p = 0; p < planes; ++p)
      for (std::int64_t n = 0; n < hw * kk; ++n)
        if (src[n] >= 0) gin[0][p * hw + src[n]] += gout[p * hw * kk + n];
  }, "neighborhood_gather");
}

Tensor simple_self_attention(const Tensor& f, int k, Padding padding) {
  check_planar(f, "simple_self_attention");
  require(f.dim(1) == 1, "simple_self_attention is single-channel");
  const Tensor window = neighborhood_gather(f, k, padding);
  const Tensor centre = reshape(f, with_trailing(f.shape(), 1));
  const Tensor alpha = attention_weights(mul(centre, window));
  return sum(mul(alpha, window), {4});
}

Tensor affine_map_apply(const Tensor& input, const AffineParams& a, AffineRole role) {
  if (role == AffineRole::Center) {
    require(input.rank() >= 2, "centre affine map expects [B, C, ...]");
    const auto c = input.dim(1);
    require(a.psi.numel() == c && a.beta.numel() == c, "centre affine parameters must be [C]");
    Shape shape(input.rank() - 1, 1);
    shape[0] = c;
    return add(mul(input, reshape(a.psi, shape)), reshape(a.beta, shape));
  }
  require(input.rank() == 5, "affine map expects a window [B, C, H, W, k*k], got " + to_string(input.shape()));
  const auto c = input.dim(1), kk = input.dim(4);
  require(a.psi.numel() == c * kk && a.beta.numel() == c * kk,
          "affine parameters " + to_string(a.psi.shape()) + " do not match window " + to_string(input.shape()));
  const Shape shape{c, 1, 1, kk};
  return add(mul(input, reshape(a.psi, shape)), reshape(a.beta, shape));
}

Tensor simple_asc(const Tensor& f, const AffineParams& a, int k, Padding padding) {
  check_planar(f, "simple_asc");
  require(f.dim(1) == 1, "simple_asc is single-channel");
  const Tensor mapped = affine_map_apply(neighborhood_gather(f, k, padding), a, AffineRole::Neighbor);
  const Tensor centre = reshape(window_slot(mapped, k * k / 2), with_trailing(f.shape(), 1));
  const Tensor alpha = attention_weights(mul(centre, mapped));
  return sum(mul(alpha, mapped), {4});
}

Tensor asc_forward(const Tensor& f, const AscParams& p, int k, Padding padding) {
  check_planar(f, "asc_forward");
  const Tensor q = pointwise(f, p.wq), key = pointwise(f, p.wk), v = pointwise(f, p.wv);
  const auto in = planar_inputs(q, key, v, p);
  Tensor out = FusedAttention(in, 1, k, p.heads, padding).forward(in);
  return p.wo.defined() ? pointwise(out, p.wo) : out;
}

Tensor asc_scores(const Tensor& f, const AscParams& p, int k, Padding padding) {
  check_planar(f, "asc_scores");
  NoGradGuard guard;
  const auto in = planar_inputs(pointwise(f, p.wq), pointwise(f, p.wk), pointwise(f, p.wv), p);
  return FusedAttention(in, 1, k, p.heads, padding).weights(in);
}

Tensor sasa_self_attention(const Tensor& f, const SasaParams& p, int k, Padding padding) {
  check_planar(f, "sasa_self_attention");
  require_odd(k);
  const Tensor q = pointwise(f, p.wq), key = pointwise(f, p.wk), v = pointwise(f, p.wv);
  const auto d = q.dim(1);
  require_heads(d, p.heads);
  const auto dh = d / p.heads;
  if (dh % 2 != 0) {
    throw Error(ErrorKind::HeadDivisibility, "per-head width " + std::to_string(dh) + " cannot be split into row and column halves");
  }
  const auto half = dh / 2;
  const Shape half_shape{p.heads, half, k};
  require(p.beta_row.shape() == half_shape && p.beta_col.shape() == half_shape,
          "SASA embeddings must be " + to_string(half_shape) + ", got " + to_string(p.beta_row.shape()) + " and " +
              to_string(p.beta_col.shape()));
  const auto n = p.heads * half * k;
  const Tensor both = concat({reshape(p.beta_row, {n}), reshape(p.beta_col, {n})}, 0);
  const int kk = k * k;
  std::vector<std::int64_t> idx(static_cast<std::size_t>(d * kk));
  for (std::int64_t c = 0; c < d; ++c) {
    const auto h = c / dh, e = c % dh;
    for (int t = 0; t < kk; ++t) {
      idx[c * kk + t] = e < half ? (h * half + e) * k + t / k : n + (h * half + e - half) * k + t % k;
    }
  }
  const Tensor beta_k = take(both, std::move(idx), {d, kk});
  const auto dv = v.dim(1);
  const FusedAttention::Inputs in{q, key, v, Tensor::ones({d}), Tensor::zeros({d}), Tensor::ones({d, kk}), beta_k,
                                  Tensor::ones({dv, kk}), Tensor::zeros({dv, kk})};
  Tensor out = FusedAttention(in, 1, k, p.heads, padding).forward(in);
  return p.wo.defined() ? pointwise(out, p.wo) : out;
}

Tensor simple_asc_forward(const Tensor& f, const SimpleAscParams& p, int k, Padding padding) {
  check_planar(f, "simple_asc_forward");
  require_odd(k);
  const Tensor e = pointwise(f, p.w);
  const auto d = e.dim(1);
  require(p.a.psi.numel() == d * k * k && p.a.beta.numel() == d * k * k, "simple ASC affine parameters must be [d, k, k]");
  const FusedAttention::Inputs in{e, e, e, centre_taps(p.a.psi, d, k), centre_taps(p.a.beta, d, k),
                                  p.a.psi, p.a.beta, p.a.psi, p.a.beta};
  Tensor out = FusedAttention(in, 1, k, p.heads, padding).forward(in);
  return p.wo.defined() ? pointwise(out, p.wo) : out;
}

Tensor p4_affine_map_apply(const Tensor& input, const AffineParams& a, int orientation, AffineRole role) {
  const int p = mod4(orientation);
  if (role == AffineRole::Center) {
    require(input.rank() == 5 && input.dim(2) == 4, "centre p4 affine map expects [B, C, 4, H, W]");
    const auto c = input.dim(1);
    require(a.psi.numel() == c * 4 && a.beta.numel() == c, "centre p4 affine parameters must be [C, 4] and [C]");
    std::vector<std::int64_t> idx(static_cast<std::size_t>(c * 4));
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (int r = 0; r < 4; ++r) idx[ch * 4 + r] = ch * 4 + mod4(r - p);
    const Tensor psi = take(a.psi, std::move(idx), {c, 4, 1, 1});
    return add(sum(mul(input, psi), {2}), reshape(a.beta, {c, 1, 1}));
  }
  require(input.rank() == 6 && input.dim(2) == 4, "p4 affine map expects a window [B, C, 4, H, W, k*k], got " + to_string(input.shape()));
  const auto c = input.dim(1), kk = input.dim(5);
  const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(kk))));
  require(k * k == kk && a.psi.numel() == c * 4 * kk && a.beta.numel() == c * kk,
          "p4 affine parameters " + to_string(a.psi.shape()) + " / " + to_string(a.beta.shape()) +
              " do not match window " + to_string(input.shape()));
  const auto slots = rotated_slots(4, k);
  std::vector<std::int64_t> psi_idx(static_cast<std::size_t>(c * 4 * kk)), beta_idx(static_cast<std::size_t>(c * kk));
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (int j = 0; j < kk; ++j) {
      const int s = slots[p * kk + j];
      beta_idx[ch * kk + j] = ch * kk + s;
      for (int r = 0; r < 4; ++r) psi_idx[(ch * 4 + r) * kk + j] = (ch * 4 + mod4(r - p)) * kk + s;
    }
  const Tensor psi = take(a.psi, std::move(psi_idx), {c, 4, 1, 1, kk});
  const Tensor beta = take(a.beta, std::move(beta_idx), {c, 1, 1, kk});
  return add(sum(mul(input, psi), {2}), beta);
}

Tensor p4_score(const Tensor& center, const Tensor& window, int heads) {
  require(center.rank() == 4 && window.rank() == 5, "p4_score expects [B, C, H, W] and [B, C, H, W, k*k]");
  require(Shape(window.shape().begin(), window.shape().end() - 1) == center.shape(),
          "p4_score centre " + to_string(center.shape()) + " does not match window " + to_string(window.shape()));
  const auto b = center.dim(0), c = center.dim(1), h = center.dim(2), w = center.dim(3), kk = window.dim(4);
  require_heads(c, heads);
  const auto dh = c / heads;
  const Tensor prod = mul(reshape(center, with_trailing(center.shape(), 1)), window);
  const Tensor scores = sum(reshape(prod, {b, heads, dh, h, w, kk}), {2});
  return attention_weights(scale(scores, 1.0f / static_cast<float>(dh)));
}

Tensor p4_simple_asc(const Tensor& f, const AffineParams& a, int k, Padding padding) {
  check_group(f, "p4_simple_asc");
  require(f.dim(1) == 1, "p4_simple_asc is single-channel");
  const Tensor window = neighborhood_gather(f, k, padding);
  std::vector<Tensor> slices;
  for (int p = 0; p < 4; ++p) {
    const Tensor mapped = p4_affine_map_apply(window, a, p, AffineRole::Neighbor);
    const Tensor alpha = p4_score(window_slot(mapped, k * k / 2), mapped, 1);
    slices.push_back(sum(mul(reshape(alpha, mapped.shape()), mapped), {4}));
  }
  return stack(slices, 2);
}

Tensor p4_asc_forward(const Tensor& f, const AscParams& p, int k, Padding padding) {
  check_group(f, "p4_asc_forward");
  const Tensor q = group_pointwise(f, p.wq), key = group_pointwise(f, p.wk), v = group_pointwise(f, p.wv);
  const auto in = planar_inputs(q, key, v, p);
  Tensor out = FusedAttention(in, 4, k, p.heads, padding).forward(in);
  return p.wo.defined() ? group_pointwise(out, p.wo) : out;
}

Tensor p4_asc_scores(const Tensor& f, const AscParams& p, int k, Padding padding) {
  check_group(f, "p4_asc_scores");
  NoGradGuard guard;
  const auto in = planar_inputs(group_pointwise(f, p.wq), group_pointwise(f, p.wk), group_pointwise(f, p.wv), p);
  return FusedAttention(in, 4, k, p.heads, padding).weights(in);
}

}  // namespace asc
