#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "chroma/rng.hpp"
#include "chroma/tensor.hpp"

namespace chroma {

struct GradCheckOptions {
  double eps = 1e-5;
  int samples_per_tensor = 5;
  std::uint64_t seed = 0;
  // Test hook: multiplies the analytic gradient of the first parameter so the
  // check's failure path can be exercised deliberately.
  double corrupt_scale = 1.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_coordinate;
};

// Compares reverse-mode gradients against central finite differences
// (f(x+e) - f(x-e)) / 2e on sampled coordinates of each parameter. f is
// called with no arguments and must return a scalar tensor computed
// deterministically from the current parameter values. Meant to run with
// T = double; float lacks the headroom for the difference quotient.
template <typename T, typename F>
GradCheckReport grad_check(F&& f,
                           std::vector<std::pair<std::string, Tensor<T>*>> params,
                           const GradCheckOptions& opt = {}) {
  for (auto& [name, t] : params) t->zero_grad();

  std::vector<std::vector<T>> analytic;
  {
    Tape<T> tape;
    Tensor<T> loss = f();
    tape.backward(loss);
  }
  for (auto& [name, t] : params) analytic.push_back(t->grad());
  if (!analytic.empty() && opt.corrupt_scale != 1.0) {
    for (T& g : analytic.front()) g = static_cast<T>(g * opt.corrupt_scale);
  }

  RandomStream rs(opt.seed);
  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<T>* t = params[pi].second;
    const std::int64_t n = t->size();
    const int samples =
        static_cast<int>(std::min<std::int64_t>(n, opt.samples_per_tensor));
    for (int s = 0; s < samples; ++s) {
      const std::size_t idx =
          static_cast<std::size_t>(rs.next_below(static_cast<std::uint64_t>(n)));
      T* slot = t->data() + idx;
      const T saved = *slot;
      *slot = saved + static_cast<T>(opt.eps);
      const double fplus = static_cast<double>(f().item());
      *slot = saved - static_cast<T>(opt.eps);
      const double fminus = static_cast<double>(f().item());
      *slot = saved;

      const double numeric = (fplus - fminus) / (2.0 * opt.eps);
      const double a = static_cast<double>(analytic[pi][idx]);
      const double rel = std::abs(a - numeric) /
                         std::max({1.0, std::abs(a), std::abs(numeric)});
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_coordinate = params[pi].first + "[" +
                                  std::to_string(idx) +
                                  "] analytic=" + std::to_string(a) +
                                  " numeric=" + std::to_string(numeric);
      }
    }
  }
  return report;
}

// Single-tensor convenience overload.
template <typename T, typename F>
GradCheckReport grad_check(F&& f, Tensor<T>& param,
                           const GradCheckOptions& opt = {}) {
  return grad_check(std::forward<F>(f), {{std::string("param"), &param}}, opt);
}

}  // namespace chroma
