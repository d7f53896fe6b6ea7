#include "asc/pipeline/equivariance.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>

#include "asc/attention.hpp"
#include "asc/error.hpp"
#include "asc/group.hpp"
#include "asc/models.hpp"
#include "asc/nn.hpp"
#include "asc/ops.hpp"
#include "asc/random.hpp"
#include "asc/se.hpp"

namespace asc::pipeline {

namespace {

constexpr std::int64_t kSide = 8;
constexpr int kTaps = 3;
constexpr Padding kTorus = Padding::Circular;

Tensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
  std::vector<float> v(static_cast<std::size_t>(numel(shape)));
  rng.fill_normal(v, 0.0, stddev);
  return Tensor::from(std::move(shape), std::move(v));
}

double deviation(const Tensor& got, const Tensor& want) {
  if (got.shape() != want.shape()) return std::numeric_limits<double>::infinity();
  const auto a = got.data(), b = want.data();
  double diff = 0.0, scale = 1.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(a[i]) - b[i]));
    scale = std::max(scale, std::abs(static_cast<double>(b[i])));
  }
  return diff / scale;
}

// [..., H, W, K] -> [..., K, H, W], so window slots can be moved like planes.
Tensor window_planes(const Tensor& w) {
  const auto& s = w.shape();
  const auto r = s.size();
  const auto H = s[r - 3], W = s[r - 2], K = s[r - 1];
  const auto outer = w.numel() / (H * W * K);
  Shape shape(s.begin(), s.end() - 3);
  shape.insert(shape.end(), {K, H, W});
  const auto in = w.data();
  std::vector<float> out(in.size());
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t k = 0; k < K; ++k)
      for (std::int64_t p = 0; p < H * W; ++p) out[(o * K + k) * H * W + p] = in[(o * H * W + p) * K + k];
  return Tensor::from(std::move(shape), std::move(out));
}

// Moves window slot (row, col) of [..., k*k, H, W] to its quarter-turned position.
Tensor rotate_slots(const Tensor& planes, int quarter_turns) {
  const auto& s = planes.shape();
  const auto r = s.size();
  const auto K = s[r - 3], HW = s[r - 2] * s[r - 1];
  const auto k = static_cast<std::int64_t>(std::lround(std::sqrt(static_cast<double>(K))));
  const auto outer = planes.numel() / (K * HW);
  const auto in = planes.data();
  std::vector<float> out(in.size());
  for (std::int64_t slot = 0; slot < K; ++slot) {
    const auto [i, j] = rotate_index(quarter_turns, slot / k, slot % k, k);
    const auto dst = i * k + j;
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy_n(in.data() + (o * K + slot) * HW, HW, out.begin() + (o * K + dst) * HW);
  }
  return Tensor::from(s, std::move(out));
}

class Suite {
 public:
  Suite(const EquivarianceOptions& options, int default_trials, double default_tolerance)
      : trials(options.trials > 0 ? options.trials : default_trials),
        tolerance(options.tolerance > 0.0 ? options.tolerance : default_tolerance),
        rng(options.seed),
        broken_(options.broken_convention) {}

  int trials;
  double tolerance;
  Rng rng;

  void record(const std::string& name, double dev) {
    auto it = std::find_if(results_.begin(), results_.end(), [&](const auto& p) { return p.name == name; });
    if (it == results_.end()) {
      results_.push_back({name, 0, 0.0, tolerance, false});
      it = results_.end() - 1;
    }
    ++it->trials;
    it->max_deviation = std::max(it->max_deviation, std::isnan(dev) ? std::numeric_limits<double>::infinity() : dev);
  }

  std::vector<PropertyResult> finish() {
    for (auto& p : results_) p.passed = p.max_deviation <= p.tolerance;
    return std::move(results_);
  }

  // A translation whose inverse is a different translation on the 8 x 8 torus.
  P4Element shift() {
    return P4Element::translation(1 + static_cast<std::int64_t>(rng.below(3)),
                                  static_cast<std::int64_t>(rng.below(kSide)));
  }

  // A roto-translation; the rotation cycles through 1, 2, 3 quarter-turns.
  P4Element roto(int trial) {
    P4Element g = shift();
    g.r = 1 + trial % 3;
    return g;
  }

  // The element applied on the output side of an equivariance relation.
  P4Element out(const P4Element& g) const { return broken_ ? inverse(g) : g; }

 private:
  bool broken_;
  std::vector<PropertyResult> results_;
};

using Layer = std::function<Tensor(const Tensor&)>;

void translation_equivariance(Suite& s, const std::string& name, const Tensor& f, const Layer& layer) {
  const auto g = s.shift();
  s.record(name, deviation(layer(act_planar(g, f)), act_planar(s.out(g), layer(f))));
}

void p4_equivariance(Suite& s, int trial, const std::string& name, const Tensor& f, const Layer& layer) {
  const auto g = s.roto(trial);
  s.record(name, deviation(layer(act_group(g, f)), act_group(s.out(g), layer(f))));
}

AscParams planar_asc(Rng& rng, std::int64_t din, std::int64_t d, int heads) {
  AscParams p;
  p.wq = randn({d, din}, rng, 0.5);
  p.wk = randn({d, din}, rng, 0.5);
  p.wv = randn({d, din}, rng, 0.5);
  p.aq = {randn({d}, rng), randn({d}, rng)};
  p.ak = {randn({d, kTaps, kTaps}, rng), randn({d, kTaps, kTaps}, rng)};
  p.av = {randn({d, kTaps, kTaps}, rng), randn({d, kTaps, kTaps}, rng)};
  p.wo = randn({d, d}, rng, 0.5);
  p.heads = heads;
  return p;
}

AscParams group_asc(Rng& rng, std::int64_t din, std::int64_t d, int heads) {
  AscParams p;
  p.wq = randn({d, din, 4, 1, 1}, rng, 0.3);
  p.wk = randn({d, din, 4, 1, 1}, rng, 0.3);
  p.wv = randn({d, din, 4, 1, 1}, rng, 0.3);
  p.aq = {randn({d, 4}, rng), randn({d}, rng)};
  p.ak = {randn({d, 4, kTaps, kTaps}, rng), randn({d, kTaps, kTaps}, rng)};
  p.av = {randn({d, 4, kTaps, kTaps}, rng), randn({d, kTaps, kTaps}, rng)};
  p.wo = randn({d, d, 4, 1, 1}, rng, 0.3);
  p.heads = heads;
  return p;
}

void check_conv2d(Suite& s) {
  for (int t = 0; t < s.trials; ++t) {
    const ConvFilter filter{randn({4, 3, kTaps, kTaps}, s.rng), randn({4}, s.rng), 1, kTorus};
    translation_equivariance(s, "translation_equivariance", randn({2, 3, kSide, kSide}, s.rng),
                             [&](const Tensor& x) { return conv2d(x, filter); });
  }
}

void check_lifting_conv(Suite& s) {
  for (int t = 0; t < s.trials; ++t) {
    const ConvFilter filter{randn({4, 3, kTaps, kTaps}, s.rng), randn({4}, s.rng), 1, kTorus};
    const Tensor f = randn({2, 3, kSide, kSide}, s.rng);
    const auto g = s.roto(t);
    s.record("p4_equivariance", deviation(lifting_conv(act_planar(g, f), filter), act_group(s.out(g), lifting_conv(f, filter))));
  }
}

void check_group_conv(Suite& s) {
  for (int t = 0; t < s.trials; ++t) {
    const GroupConvFilter filter{randn({4, 3, 4, kTaps, kTaps}, s.rng), randn({4}, s.rng), 1, kTorus};
    p4_equivariance(s, t, "p4_equivariance", randn({2, 3, 4, kSide, kSide}, s.rng),
                    [&](const Tensor& x) { return group_conv(x, filter); });
  }
}

void check_batchnorm(Suite& s) {
  for (int t = 0; t < s.trials; ++t) {
    auto make = [&](std::int64_t c) {
      auto st = BatchNormState::create(c);
      st.gamma = randn({c}, s.rng);
      st.beta = randn({c}, s.rng);
      st.running_mean = randn({c}, s.rng);
      st.running_var = Tensor::full({c}, 1.5f);
      return st;
    };
    const auto state = make(3);
    for (const auto mode : {Mode::Train, Mode::Eval}) {
      const std::string suffix = mode == Mode::Train ? "_train" : "_eval";
      translation_equivariance(s, "translation_equivariance" + suffix, randn({4, 3, kSide, kSide}, s.rng),
                               [&](const Tensor& x) {
                                 auto copy = state;
                                 return batchnorm(x, copy, mode);
                               });
      p4_equivariance(s, t, "p4_equivariance" + suffix, randn({4, 3, 4, kSide, kSide}, s.rng), [&](const Tensor& x) {
        auto copy = state;
        return batchnorm(x, copy, mode);
      });
    }
  }
}

void check_pool_head(Suite& s) {
  for (int t = 0; t < s.trials; ++t) {
    const Tensor w = randn({5, 3}, s.rng), b = randn({5}, s.rng);
    const Tensor f = randn({2, 3, kSide, kSide}, s.rng), h = randn({2, 3, 4, kSide, kSide}, s.rng);
    s.record("translation_invariance",
             deviation(global_pool_and_linear(act_planar(s.shift(), f), w, b), global_pool_and_linear(f, w, b)));
    s.record("p4_invariance",
             deviation(global_pool_and_linear(act_group(s.roto(t), h), w, b), global_pool_and_linear(h, w, b)));
  }
}

void check_simple_self_attention(Suite& s) {
  for (int t = 0; t < s.trials; ++t) {
    translation_equivariance(s, "translation_equivariance", randn({2, 1, kSide, kSide}, s.rng),
                             [](const Tensor& x) { return simple_self_attention(x, kTaps, kTorus); });
  }
}

void check_sasa(Suite& s) {
  for (int t = 0; t < s.trials; ++t) {
    SasaParams p;
    p.heads = 2;
    p.wq = randn({8, 4}, s.rng, 0.5);
    p.wk = randn({8, 4}, s.rng, 0.5);
    p.wv = randn({8, 4}, s.rng, 0.5);
    p.beta_row = randn({2, 2, kTaps}, s.rng);
    p.beta_col = randn({2, 2, kTaps}, s.rng);
    p.wo = randn({8, 8}, s.rng, 0.5);
    translation_equivariance(s, "translation_equivariance", randn({2, 4, kSide, kSide}, s.rng),
                             [&](const Tensor& x) { return sasa_self_attention(x, p, kTaps, kTorus); });
  }
}

void check_simple_asc(Suite& s) {
  for (int t = 0; t < s.trials; ++t) {
    const AffineParams single{randn({1, kTaps, kTaps}, s.rng), randn({1, kTaps, kTaps}, s.rng)};
    translation_equivariance(s, "single_channel_translation_equivariance", randn({2, 1, kSide, kSide}, s.rng),
                             [&](const Tensor& x) { return simple_asc(x, single, kTaps, kTorus); });
    SimpleAscParams p;
    p.heads = 2;
    p.w = randn({8, 4}, s.rng, 0.5);
    p.a = {randn({8, kTaps, kTaps}, s.rng), randn({8, kTaps, kTaps}, s.rng)};
    p.wo = randn({8, 8}, s.rng, 0.5);
    translation_equivariance(s, "translation_equivariance", randn({2, 4, kSide, kSide}, s.rng),
                             [&](const Tensor& x) { return simple_asc_forward(x, p, kTaps, kTorus); });
  }
}

void check_asc(Suite& s) {
  for (int t = 0; t < s.trials; ++t) {
    const auto p = planar_asc(s.rng, 4, 8, 2);
    const Tensor f = randn({2, 4, kSide, kSide}, s.rng);
    translation_equivariance(s, "translation_equivariance", f,
                             [&](const Tensor& x) { return asc_forward(x, p, kTaps, kTorus); });

    // A_x[L_z f](x + o) == A_{x - z}[f](x - z + o): the windowed map commutes
    // with shifts of the window centre.
    const AffineParams neighbor{randn({4, kTaps, kTaps}, s.rng), randn({4, kTaps, kTaps}, s.rng)};
    const AffineParams center{randn({4}, s.rng), randn({4}, s.rng)};
    const auto g = s.shift();
    const auto windowed = [&](const Tensor& x) {
      return window_planes(affine_map_apply(neighborhood_gather(x, kTaps, kTorus), neighbor, AffineRole::Neighbor));
    };
    s.record("neighbor_map_substitution", deviation(windowed(act_planar(g, f)), act_planar(s.out(g), windowed(f))));
    // A_x[L_z f](x) == A_{x - z}[f](x - z).
    s.record("center_map_substitution",
             deviation(affine_map_apply(act_planar(g, f), center, AffineRole::Center),
                       act_planar(s.out(g), affine_map_apply(f, center, AffineRole::Center))));
  }
}

void check_p4_simple_asc(Suite& s) {
  for (int t = 0; t < s.trials; ++t) {
    const AffineParams a{randn({1, 4, kTaps, kTaps}, s.rng), randn({1, kTaps, kTaps}, s.rng)};
    p4_equivariance(s, t, "p4_equivariance", randn({2, 1, 4, kSide, kSide}, s.rng),
                    [&](const Tensor& x) { return p4_simple_asc(x, a, kTaps, kTorus); });
  }
}

void check_p4_asc(Suite& s) {
  for (int t = 0; t < s.trials; ++t) {
    const auto p = group_asc(s.rng, 4, 8, 2);
    const Tensor f = randn({2, 4, 4, kSide, kSide}, s.rng);
    p4_equivariance(s, t, "p4_equivariance", f, [&](const Tensor& x) { return p4_asc_forward(x, p, kTaps, kTorus); });

    // A_(P,x)[L_g f](y) == A_(g^-1 (P,x))[f](g^-1 y), summed over orientations:
    // orientation P of the transformed input reads orientation S^-1 P of the
    // original, at transformed sites and rotated window slots.
    const AffineParams neighbor{randn({4, 4, kTaps, kTaps}, s.rng), randn({4, kTaps, kTaps}, s.rng)};
    const AffineParams center{randn({4, 4}, s.rng), randn({4}, s.rng)};
    const auto g = s.roto(t), h = s.out(g);
    const Tensor fg = act_group(g, f);
    const Tensor window = neighborhood_gather(f, kTaps, kTorus), window_g = neighborhood_gather(fg, kTaps, kTorus);
    for (int P = 0; P < 4; ++P) {
      const Tensor lhs = window_planes(p4_affine_map_apply(window_g, neighbor, P, AffineRole::Neighbor));
      const Tensor base = window_planes(p4_affine_map_apply(window, neighbor, mod4(P - h.r), AffineRole::Neighbor));
      s.record("neighbor_map_substitution", deviation(lhs, rotate_slots(act_planar(h, base), h.r)));

      s.record("center_map_substitution",
               deviation(p4_affine_map_apply(fg, center, P, AffineRole::Center),
                         act_planar(h, p4_affine_map_apply(f, center, mod4(P - h.r), AffineRole::Center))));
    }

    // An offset embedding defined on the whole group enters only through its
    // orientation sum, a function on the quotient.
    const Tensor beta_g = randn({8, 4, kTaps, kTaps}, s.rng);
    const Tensor beta_bar = sum(beta_g, {1});
    const Tensor ones = Tensor::ones({1, 8, 4, 2, 2, kTaps * kTaps});
    const Tensor zeros = Tensor::zeros({1, 8, 4, 2, 2, kTaps * kTaps});
    for (int P = 0; P < 4; ++P) {
      const Tensor on_group =
          p4_affine_map_apply(ones, {beta_g, Tensor::zeros({8, kTaps, kTaps})}, P, AffineRole::Neighbor);
      const Tensor on_quotient =
          p4_affine_map_apply(zeros, {Tensor::zeros({8, 4, kTaps, kTaps}), beta_bar}, P, AffineRole::Neighbor);
      s.record("orientation_sum_of_beta", deviation(on_group, on_quotient));
    }
  }
}

void check_se(Suite& s) {
  for (int t = 0; t < s.trials; ++t) {
    const SeParams p{randn({8, 2}, s.rng), randn({2, 8}, s.rng)};
    const Tensor h = randn({2, 8, 4, kSide, kSide}, s.rng), f = randn({2, 8, kSide, kSide}, s.rng);
    s.record("squeeze_p4_invariance", deviation(squeeze(act_group(s.roto(t), h), p), squeeze(h, p)));
    s.record("squeeze_translation_invariance", deviation(squeeze(act_planar(s.shift(), f), p), squeeze(f, p)));
    const Tensor gate = squeeze(h, p);
    p4_equivariance(s, t, "excite_p4_equivariance", h, [&](const Tensor& x) { return excite(x, gate); });
  }
}

// Random batchnorm affine parameters, with running statistics taken from one
// training batch so that eval-mode activations stay in a sensible range.
void calibrate(Model& model, Rng& rng) {
  for (const auto& [name, tensor] : model.state()) {
    Tensor t = tensor;
    if (name.ends_with(".gamma")) rng.fill_uniform(t.mutable_data(), 0.5, 1.5);
    if (name.ends_with(".beta")) rng.fill_uniform(t.mutable_data(), -0.2, 0.2);
  }
  model.set_batchnorm_momentum(1.0f);
  model.forward(randn({4, 3, 32, 32}, rng), Mode::Train);
  model.set_batchnorm_momentum(0.1f);
}

void check_model(Suite& s, const std::string& variant) {
  Model model = build_model({variant, 10, 0, s.rng.next_u64()});
  model.set_padding(kTorus);
  NoGradGuard no_grad;
  calibrate(model, s.rng);
  const bool p4 = model.info().p4;
  for (int t = 0; t < s.trials; ++t) {
    const Tensor images = randn({2, 3, 32, 32}, s.rng);
    const Tensor logits = model.forward(images, Mode::Eval);
    if (p4) {
      for (int r = 1; r < 4; ++r) {
        s.record("rotation_invariance",
                 deviation(model.forward(act_planar(P4Element::rotation(r), images), Mode::Eval), logits));
      }
    } else {
      // The network downsamples by 4, so shifts by multiples of 4 commute with it.
      const auto g = P4Element::translation(4 * (1 + static_cast<std::int64_t>(s.rng.below(7))),
                                            4 * static_cast<std::int64_t>(s.rng.below(8)));
      s.record("translation_invariance", deviation(model.forward(act_planar(g, images), Mode::Eval), logits));
    }
  }
}

struct LayerTarget {
  int trials;
  void (*run)(Suite&);
};

const std::map<std::string, LayerTarget>& layer_targets() {
  static const std::map<std::string, LayerTarget> targets{
      {"conv2d", {100, check_conv2d}},
      {"lifting_conv", {100, check_lifting_conv}},
      {"group_conv", {100, check_group_conv}},
      {"batchnorm", {100, check_batchnorm}},
      {"global_pool_and_linear", {100, check_pool_head}},
      {"simple_self_attention", {100, check_simple_self_attention}},
      {"sasa", {50, check_sasa}},
      {"simple_asc", {50, check_simple_asc}},
      {"asc", {50, check_asc}},
      {"p4_simple_asc", {50, check_p4_simple_asc}},
      {"p4_asc", {20, check_p4_asc}},
      {"se", {100, check_se}},
  };
  return targets;
}

}  // namespace

bool EquivarianceReport::passed() const {
  return !properties.empty() &&
         std::all_of(properties.begin(), properties.end(), [](const PropertyResult& p) { return p.passed; });
}

std::vector<std::string> equivariance_layer_targets() {
  std::vector<std::string> names;
  for (const auto& [name, target] : layer_targets()) names.push_back(name);
  return names;
}

EquivarianceReport check_equivariance(const std::string& target, const EquivarianceOptions& options) {
  EquivarianceReport report;
  report.target = target;
  const auto& layers = layer_targets();
  if (const auto it = layers.find(target); it != layers.end()) {
    Suite suite(options, it->second.trials, 1e-5);
    NoGradGuard no_grad;
    it->second.run(suite);
    report.properties = suite.finish();
    return report;
  }
  const auto variants = known_variants();
  if (std::find(variants.begin(), variants.end(), target) == variants.end()) {
    throw Error(ErrorKind::UnknownTarget, "no equivariance checks for \"" + target + "\"");
  }
  Suite suite(options, 2, 1e-4);
  check_model(suite, target);
  report.properties = suite.finish();
  return report;
}

}  // namespace asc::pipeline
