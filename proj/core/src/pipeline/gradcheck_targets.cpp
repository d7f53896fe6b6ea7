#include "asc/pipeline/gradcheck_targets.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

#include "asc/attention.hpp"
#include "asc/error.hpp"
#include "asc/nn.hpp"
#include "asc/ops.hpp"
#include "asc/random.hpp"
#include "asc/se.hpp"

namespace asc::pipeline {

namespace {

Tensor leaf(Shape shape, Rng& rng, double stddev = 1.0) {
  std::vector<float> v(static_cast<std::size_t>(numel(shape)));
  rng.fill_normal(v, 0.0, stddev);
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Random signs, magnitudes uniform in [lo, hi].
Tensor away_from_zero(Shape shape, Rng& rng, double lo = 0.1, double hi = 1.0) {
  std::vector<float> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<float>((rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(lo, hi));
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Squeeze weights [2, C] whose hidden pre-activations on f all have magnitude
// at least 0.1, so no central difference straddles the ReLU kink, and at
// least one of which is active.
Tensor relu_margin(const Tensor& f, Rng& rng) {
  NoGradGuard no_grad;
  const auto C = f.dim(1);
  std::vector<int> sites;
  for (int axis = 2; axis < static_cast<int>(f.rank()); ++axis) sites.push_back(axis);
  const Tensor pooled = mean(f.detach(), sites);
  while (true) {
    Tensor w2 = leaf({2, C}, rng);
    const Tensor hidden = matmul(pooled, transpose(w2.detach()));
    const auto h = hidden.data();
    const bool clear = std::all_of(h.begin(), h.end(), [](float v) { return std::abs(v) >= 0.1f; });
    if (clear && *std::max_element(h.begin(), h.end()) > 0.0f) return w2;
  }
}

using Target = std::function<GradcheckReport(Rng&, const GradcheckOptions&)>;

const std::map<std::string, Target>& targets() {
  static const std::map<std::string, Target> all{
      {"conv2d",
       [](Rng& rng, const GradcheckOptions& o) {
         Tensor f = leaf({2, 2, 5, 5}, rng), psi = leaf({3, 2, 3, 3}, rng), b = leaf({3}, rng);
         return gradcheck([&] { return conv2d(f, {psi, b, 2, Padding::Zero}); }, {{"f", f}, {"psi", psi}, {"bias", b}},
                          o);
       }},
      {"lifting_conv",
       [](Rng& rng, const GradcheckOptions& o) {
         Tensor f = leaf({1, 2, 5, 5}, rng), psi = leaf({2, 2, 3, 3}, rng), b = leaf({2}, rng);
         return gradcheck([&] { return lifting_conv(f, {psi, b, 1, Padding::Circular}); },
                          {{"f", f}, {"psi", psi}, {"bias", b}}, o);
       }},
      {"group_conv",
       [](Rng& rng, const GradcheckOptions& o) {
         Tensor f = leaf({1, 2, 4, 4, 4}, rng), psi = leaf({2, 2, 4, 3, 3}, rng), b = leaf({2}, rng);
         return gradcheck([&] { return group_conv(f, {psi, b, 1, Padding::Zero}); },
                          {{"f", f}, {"psi", psi}, {"bias", b}}, o);
       }},
      {"pointwise",
       [](Rng& rng, const GradcheckOptions& o) {
         Tensor f = leaf({2, 3, 4, 4}, rng), w = leaf({2, 3}, rng);
         return gradcheck([&] { return pointwise(f, w); }, {{"f", f}, {"w", w}}, o);
       }},
      {"batchnorm",
       [](Rng& rng, const GradcheckOptions& o) {
         Tensor f = leaf({3, 2, 4, 3, 3}, rng);
         auto st = BatchNormState::create(2);
         st.gamma = away_from_zero({2}, rng, 0.5, 1.5);
         st.beta = leaf({2}, rng);
         return gradcheck([&] { return batchnorm(f, st, Mode::Train); },
                          {{"f", f}, {"gamma", st.gamma}, {"beta", st.beta}}, o);
       }},
      {"batchnorm_eval",
       [](Rng& rng, const GradcheckOptions& o) {
         Tensor f = leaf({3, 2, 3, 3}, rng);
         auto st = BatchNormState::create(2);
         st.gamma = leaf({2}, rng);
         st.beta = leaf({2}, rng);
         st.running_var = Tensor::from({2}, {0.5f, 2.0f});
         return gradcheck([&] { return batchnorm(f, st, Mode::Eval); },
                          {{"f", f}, {"gamma", st.gamma}, {"beta", st.beta}}, o);
       }},
      {"avgpool2",
       [](Rng& rng, const GradcheckOptions& o) {
         Tensor f = leaf({2, 2, 4, 4, 4}, rng);
         return gradcheck([&] { return avgpool2(f); }, {{"f", f}}, o);
       }},
      {"global_pool_and_linear",
       [](Rng& rng, const GradcheckOptions& o) {
         Tensor f = leaf({2, 3, 2, 2}, rng), w = leaf({4, 3}, rng), b = leaf({4}, rng);
         return gradcheck([&] { return global_pool_and_linear(f, w, b); }, {{"f", f}, {"w", w}, {"b", b}}, o);
       }},
      {"relu",
       [](Rng& rng, const GradcheckOptions& o) {
         Tensor f = away_from_zero({3, 4, 5}, rng);
         return gradcheck([&] { return relu(f); }, {{"f", f}}, o);
       }},
      {"sigmoid",
       [](Rng& rng, const GradcheckOptions& o) {
         Tensor f = leaf({3, 4, 5}, rng);
         return gradcheck([&] { return sigmoid(f); }, {{"f", f}}, o);
       }},
      {"elementwise_broadcast",
       [](Rng& rng, const GradcheckOptions& o) {
         Tensor a = leaf({2, 3, 4}, rng), b = leaf({3, 4}, rng), c = leaf({4}, rng);
         return gradcheck([&] { return sub(mul(add(a, b), c), b); }, {{"a", a}, {"b", b}, {"c", c}}, o);
       }},
      {"matmul",
       [](Rng& rng, const GradcheckOptions& o) {
         Tensor a = leaf({3, 4}, rng), b = leaf({4, 5}, rng);
         return gradcheck([&] { return matmul(a, transpose(transpose(b))); }, {{"a", a}, {"b", b}}, o);
       }},
      {"softmax",
       [](Rng& rng, const GradcheckOptions& o) {
         Tensor a = leaf({3, 4, 5}, rng);
         return gradcheck([&] { return softmax(a, 1); }, {{"a", a}}, o);
       }},
      {"reductions",
       [](Rng& rng, const GradcheckOptions& o) {
         Tensor a = leaf({3, 4, 5}, rng);
         return gradcheck([&] { return add(sum(a, {0}), mean(a, {0})); }, {{"a", a}}, o);
       }},
      {"cross_entropy",
       [](Rng& rng, const GradcheckOptions& o) {
         Tensor logits = leaf({4, 6}, rng);
         const std::vector<int> labels{0, 5, 2, 2};
         return gradcheck([&] { return cross_entropy(logits, labels); }, {{"logits", logits}}, o);
       }},
      {"simple_self_attention",
       [](Rng& rng, const GradcheckOptions& o) {
         Tensor f = leaf({2, 1, 4, 4}, rng);
         return gradcheck([&] { return simple_self_attention(f, 3, Padding::Zero); }, {{"f", f}}, o);
       }},
      {"simple_asc",
       [](Rng& rng, const GradcheckOptions& o) {
         Tensor f = leaf({1, 1, 4, 4}, rng), psi = leaf({1, 3, 3}, rng), beta = leaf({1, 3, 3}, rng);
         return gradcheck([&] { return simple_asc(f, {psi, beta}, 3, Padding::Circular); },
                          {{"f", f}, {"psi", psi}, {"beta", beta}}, o);
       }},
      {"simple_asc_layer",
       [](Rng& rng, const GradcheckOptions& o) {
         Tensor f = leaf({2, 2, 4, 4}, rng);
         SimpleAscParams p;
         p.heads = 2;
         p.w = leaf({4, 2}, rng, 0.5);
         p.a = {leaf({4, 3, 3}, rng), leaf({4, 3, 3}, rng)};
         p.wo = leaf({4, 4}, rng, 0.5);
         return gradcheck([&] { return simple_asc_forward(f, p, 3, Padding::Zero); },
                          {{"f", f}, {"w", p.w}, {"psi", p.a.psi}, {"beta", p.a.beta}, {"wo", p.wo}}, o);
       }},
      {"sasa",
       [](Rng& rng, const GradcheckOptions& o) {
         Tensor f = leaf({1, 2, 4, 4}, rng);
         SasaParams s;
         s.heads = 2;
         s.wq = leaf({4, 2}, rng, 1.5);
         s.wk = leaf({4, 2}, rng, 0.5);
         s.wv = leaf({4, 2}, rng, 0.5);
         s.beta_row = leaf({2, 1, 3}, rng);
         s.beta_col = leaf({2, 1, 3}, rng);
         s.wo = leaf({4, 4}, rng, 0.5);
         return gradcheck([&] { return sasa_self_attention(f, s, 3, Padding::Zero); },
                          {{"f", f},
                           {"wq", s.wq},
                           {"wk", s.wk},
                           {"wv", s.wv},
                           {"beta_row", s.beta_row},
                           {"beta_col", s.beta_col},
                           {"wo", s.wo}},
                          o);
       }},
      {"asc",
       [](Rng& rng, const GradcheckOptions& o) {
         Tensor f = leaf({2, 3, 4, 4}, rng);
         AscParams p;
         p.heads = 2;
         p.wq = leaf({4, 3}, rng, 0.5);
         p.wk = leaf({4, 3}, rng, 0.5);
         p.wv = leaf({4, 3}, rng, 0.5);
         p.aq = {leaf({4}, rng), leaf({4}, rng)};
         p.ak = {leaf({4, 3, 3}, rng), leaf({4, 3, 3}, rng)};
         p.av = {leaf({4, 3, 3}, rng), leaf({4, 3, 3}, rng)};
         p.wo = leaf({4, 4}, rng, 0.5);
         return gradcheck([&] { return asc_forward(f, p, 3, Padding::Circular); },
                          {{"f", f},
                           {"wq", p.wq},
                           {"wk", p.wk},
                           {"wv", p.wv},
                           {"wo", p.wo},
                           {"psi_q", p.aq.psi},
                           {"beta_q", p.aq.beta},
                           {"psi_k", p.ak.psi},
                           {"beta_k", p.ak.beta},
                           {"psi_v", p.av.psi},
                           {"beta_v", p.av.beta}},
                          o);
       }},
      {"p4_simple_asc",
       [](Rng& rng, const GradcheckOptions& o) {
         Tensor f = leaf({1, 1, 4, 4, 4}, rng), psi = leaf({1, 4, 3, 3}, rng, 0.5), beta = leaf({1, 3, 3}, rng, 0.5);
         return gradcheck([&] { return p4_simple_asc(f, {psi, beta}, 3, Padding::Circular); },
                          {{"f", f}, {"psi", psi}, {"beta", beta}}, o);
       }},
      {"p4_asc",
       [](Rng& rng, const GradcheckOptions& o) {
         Tensor f = leaf({2, 2, 4, 3, 3}, rng);
         AscParams p;
         p.heads = 2;
         p.wq = leaf({4, 2, 4, 1, 1}, rng, 0.3);
         p.wk = leaf({4, 2, 4, 1, 1}, rng, 0.3);
         p.wv = leaf({4, 2, 4, 1, 1}, rng, 0.3);
         p.aq = {leaf({4, 4}, rng), leaf({4}, rng)};
         p.ak = {leaf({4, 4, 3, 3}, rng), leaf({4, 3, 3}, rng)};
         p.av = {leaf({4, 4, 3, 3}, rng), leaf({4, 3, 3}, rng)};
         p.wo = leaf({4, 4, 4, 1, 1}, rng, 0.3);
         return gradcheck([&] { return p4_asc_forward(f, p, 3, Padding::Zero); },
                          {{"f", f},
                           {"wq", p.wq},
                           {"wk", p.wk},
                           {"wv", p.wv},
                           {"wo", p.wo},
                           {"psi_q", p.aq.psi},
                           {"beta_q", p.aq.beta},
                           {"psi_k", p.ak.psi},
                           {"beta_k", p.ak.beta},
                           {"psi_v", p.av.psi},
                           {"beta_v", p.av.beta}},
                          o);
       }},
      {"squeeze_excite",
       [](Rng& rng, const GradcheckOptions& o) {
         Tensor f = leaf({2, 4, 1, 1}, rng), w1 = leaf({4, 2}, rng), w2 = relu_margin(f, rng);
         return gradcheck([&] { return excite(f, squeeze(f, {w1, w2})); }, {{"f", f}, {"w1", w1}, {"w2", w2}}, o);
       }},
      {"squeeze",
       [](Rng& rng, const GradcheckOptions& o) {
         Tensor f = leaf({2, 4, 1, 1}, rng), w1 = leaf({4, 2}, rng), w2 = relu_margin(f, rng);
         return gradcheck([&] { return squeeze(f, {w1, w2}); }, {{"f", f}, {"w1", w1}, {"w2", w2}}, o);
       }},
  };
  return all;
}

}  // namespace

std::vector<std::string> gradcheck_targets() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : targets()) names.push_back(name);
  return names;
}

GradcheckReport run_gradcheck(const std::string& target, const GradcheckOptions& options) {
  const auto it = targets().find(target);
  if (it == targets().end()) throw Error(ErrorKind::UnknownTarget, "no gradient check for \"" + target + "\"");
  // Separate stream from the one gradcheck draws its output weights from.
  Rng rng = Rng(options.seed).split();
  return it->second(rng, options);
}

}  // namespace asc::pipeline
