#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "wmocr/image.hpp"

namespace wmocr {

struct QualityReport {
  double mse = 0.0;
  double psnr = 0.0;       // D = 1; +infinity for identical images
  double psnr_8bit = 0.0;  // same ratio on the 0..255 scale
  double ssim = 1.0;
};

/// Mean of squared pixel differences.
inline double mse(const Image& x, const Image& y) {
  require_same_dims(x, y, "mse");
  if (x.size() == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x.px[i] - y.px[i];
    s += d * d;
  }
  return s / static_cast<double>(x.size());
}

inline double psnr_from_mse(double mse_value, double dynamic_range = 1.0) {
  if (mse_value <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(dynamic_range * dynamic_range / mse_value);
}

inline double psnr(const Image& x, const Image& y, double dynamic_range = 1.0) {
  return psnr_from_mse(mse(x, y), dynamic_range);
}

namespace detail {

// Weighted local statistics over every full window position ("valid").
inline double ssim_with_window(const Image& x, const Image& y,
                               const std::vector<double>& window, int k) {
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  double total = 0.0;
  int count = 0;
  for (int r = 0; r + k <= x.height; ++r) {
    for (int c = 0; c + k <= x.width; ++c) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
          const double w = window[static_cast<std::size_t>(i * k + j)];
          const double a = x.at(r + i, c + j), b = y.at(r + i, c + j);
          mx += w * a;
          my += w * b;
          sxx += w * a * a;
          syy += w * b * b;
          sxy += w * a * b;
        }
      }
      const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) /
               ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / count;
}

}  // namespace detail

/// Mean local SSIM, 11x11 Gaussian window (sigma 1.5). Images whose smaller
/// side is under 11 px fall back to a 7x7 uniform window; anything under
/// 7 px is compared as a single global window.
inline double ssim(const Image& x, const Image& y) {
  require_same_dims(x, y, "ssim");
  const int min_dim = std::min(x.height, x.width);
  if (min_dim <= 0) return 1.0;
  if (min_dim >= 11) {
    constexpr int k = 11;
    std::vector<double> window(k * k);
    double sum = 0.0;
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        const double di = i - 5, dj = j - 5;
        const double w = std::exp(-(di * di + dj * dj) / (2 * 1.5 * 1.5));
        window[static_cast<std::size_t>(i * k + j)] = w;
        sum += w;
      }
    }
    for (double& w : window) w /= sum;
    return detail::ssim_with_window(x, y, window, k);
  }
  const int k = std::min(7, min_dim);
  std::vector<double> window(static_cast<std::size_t>(k * k), 1.0 / (k * k));
  return detail::ssim_with_window(x, y, window, k);
}

inline QualityReport quality(const Image& original, const Image& modified) {
  QualityReport q;
  q.mse = mse(original, modified);
  q.psnr = psnr_from_mse(q.mse, 1.0);
  q.psnr_8bit = psnr_from_mse(q.mse * 255.0 * 255.0, 255.0);
  q.ssim = ssim(original, modified);
  return q;
}

}  // namespace wmocr
