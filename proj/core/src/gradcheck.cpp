#include "asc/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "asc/ops.hpp"
#include "asc/random.hpp"

namespace asc {

GradcheckReport gradcheck(const std::function<Tensor()>& fn,
                          const std::vector<std::pair<std::string, Tensor>>& inputs,
                          const GradcheckOptions& options) {
  Rng rng(options.seed);
  Tensor probe;
  {
    NoGradGuard guard;
    probe = fn();
  }
  std::vector<float> weights(static_cast<std::size_t>(probe.numel()));
  rng.fill_normal(weights, 0.0, 1.0);
  const Tensor w = Tensor::from(probe.shape(), weights);

  const auto objective = [&] {
    NoGradGuard guard;
    const Tensor result = fn();
    const auto out = result.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) acc += static_cast<double>(out[i]) * weights[i];
    return acc;
  };

  for (const auto& [name, t] : inputs) {
    if (!t.requires_grad()) throw Error(ErrorKind::InvalidConfig, "gradcheck input '" + name + "' does not require grad");
    Tensor(t).zero_grad();
  }
  backward(sum_all(mul(fn(), w)));

  GradcheckReport report;
  report.passed = true;
  for (const auto& [name, input] : inputs) {
    Tensor t = input;
    const std::vector<float> analytic = t.has_grad() ? std::vector<float>(t.grad().begin(), t.grad().end())
                                                     : std::vector<float>(t.numel(), 0.0f);
    std::vector<std::int64_t> entries(static_cast<std::size_t>(t.numel()));
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i] = static_cast<std::int64_t>(i);
    if (t.numel() > options.max_entries) {
      shuffle(std::span<std::int64_t>(entries), rng);
      entries.resize(static_cast<std::size_t>(options.max_entries));
    }
    double max_diff = 0.0, max_a = 0.0, max_n = 0.0;
    auto values = t.mutable_data();
    for (const auto i : entries) {
      const float original = values[i];
      const float up = static_cast<float>(original + options.eps);
      const float down = static_cast<float>(original - options.eps);
      values[i] = up;
      const double plus = objective();
      values[i] = down;
      const double minus = objective();
      values[i] = original;
      // Divide by the step actually taken after rounding to float.
      const double numeric = (plus - minus) / (static_cast<double>(up) - down);
      max_diff = std::max(max_diff, std::abs(numeric - analytic[i]));
      max_a = std::max(max_a, std::abs(static_cast<double>(analytic[i])));
      max_n = std::max(max_n, std::abs(numeric));
    }
    GradcheckEntry entry{name, max_diff / std::max({max_a, max_n, 1e-12}), static_cast<std::int64_t>(entries.size())};
    report.max_error = std::max(report.max_error, entry.error);
    report.passed = report.passed && entry.error < options.tolerance;
    report.inputs.push_back(std::move(entry));
  }
  return report;
}

}  // namespace asc
