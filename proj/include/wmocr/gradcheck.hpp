#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace wmocr {

using ScalarFunction = std::function<double(std::span<const double>)>;

/// Largest |central difference - analytic| / (|analytic| + 1e-8) over the
/// listed coordinates of `point`.
inline double finite_difference_check(const ScalarFunction& fn,
                                      std::span<const double> point,
                                      std::span<const double> analytic,
                                      double step,
                                      std::span<const std::size_t> coords) {
  if (!(step > 0.0)) {
    throw std::invalid_argument("finite_difference_check: step must be > 0");
  }
  if (analytic.size() != point.size()) {
    throw std::invalid_argument(
        "finite_difference_check: gradient size does not match point");
  }
  std::vector<double> x(point.begin(), point.end());
  double worst = 0.0;
  for (std::size_t i : coords) {
    if (i >= x.size()) {
      throw std::out_of_range("finite_difference_check: coordinate index");
    }
    const double orig = x[i];
    x[i] = orig + step;
    const double fp = fn(x);
    x[i] = orig - step;
    const double fm = fn(x);
    x[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::domain_error(
          "finite_difference_check: non-finite function value");
    }
    const double numeric = (fp - fm) / (2.0 * step);
    const double err =
        std::abs(numeric - analytic[i]) / (std::abs(analytic[i]) + 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

inline double finite_difference_check(const ScalarFunction& fn,
                                      std::span<const double> point,
                                      std::span<const double> analytic,
                                      double step) {
  std::vector<std::size_t> all(point.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return finite_difference_check(fn, point, analytic, step, all);
}

}  // namespace wmocr
