#pragma once

// Morphology and the preprocessing defenses. Every filter maps [0,1] images
// into [0,1].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "wmocr/image.hpp"

namespace wmocr {

namespace detail {

inline int reflect101(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

inline void require_odd(int k, const char* what) {
  if (k < 1 || k % 2 == 0) {
    throw std::invalid_argument(std::string(what) + ": kernel size must be odd and positive");
  }
}

}  // namespace detail

/// Grayscale erosion: sliding-window minimum over a kh x kw rectangle,
/// borders edge-replicated. Computed as a row pass then a column pass.
inline Image erode(const Image& img, int kh = 3, int kw = 3) {
  detail::require_odd(kh, "erode");
  detail::require_odd(kw, "erode");
  const int rh = kh / 2, rw = kw / 2;
  Image rows(img.height, img.width);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      double m = img.clamped(r, c - rw);
      for (int d = -rw + 1; d <= rw; ++d) m = std::min(m, img.clamped(r, c + d));
      rows.at(r, c) = m;
    }
  }
  Image out(img.height, img.width);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      double m = rows.clamped(r - rh, c);
      for (int d = -rh + 1; d <= rh; ++d) m = std::min(m, rows.clamped(r + d, c));
      out.at(r, c) = m;
    }
  }
  return out;
}

/// Binary dilation of a mask with a (2*radius+1)^2 square.
inline Mask dilate(const Mask& m, int radius = 1) {
  Mask out(m.height, m.width);
  for (int r = 0; r < m.height; ++r) {
    for (int c = 0; c < m.width; ++c) {
      bool hit = false;
      for (int dr = -radius; dr <= radius && !hit; ++dr) {
        for (int dc = -radius; dc <= radius && !hit; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr >= 0 && rr < m.height && cc >= 0 && cc < m.width && m.at(rr, cc)) {
            hit = true;
          }
        }
      }
      out.set(r, c, hit);
    }
  }
  return out;
}

/// Box filter over a k x k window covering rows/cols [i - (k-1)/2, ...+k).
/// Even k therefore anchors the window at its top-left cell (k=2 averages
/// the pixel with its right, lower and lower-right neighbours). Borders use
/// reflect-101.
inline Image average_blur(const Image& img, int k) {
  if (k < 1) throw std::invalid_argument("average_blur: k must be >= 1");
  const int a = (k - 1) / 2;
  Image out(img.height, img.width);
  const double inv = 1.0 / (k * k);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) {
        const int rr = detail::reflect101(r - a + i, img.height);
        for (int j = 0; j < k; ++j) {
          s += img.at(rr, detail::reflect101(c - a + j, img.width));
        }
      }
      out.at(r, c) = std::clamp(s * inv, 0.0, 1.0);
    }
  }
  return out;
}

inline Image median_blur(const Image& img, int k) {
  detail::require_odd(k, "median_blur");
  const int a = k / 2;
  Image out(img.height, img.width);
  std::vector<double> win(static_cast<std::size_t>(k * k));
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      std::size_t n = 0;
      for (int i = -a; i <= a; ++i) {
        const int rr = detail::reflect101(r + i, img.height);
        for (int j = -a; j <= a; ++j) {
          win[n++] = img.at(rr, detail::reflect101(c + j, img.width));
        }
      }
      std::nth_element(win.begin(), win.begin() + win.size() / 2, win.end());
      out.at(r, c) = win[win.size() / 2];
    }
  }
  return out;
}

/// sigma <= 0 derives sigma = 0.3 * ((k - 1) / 2 - 1) + 0.8.
inline double gaussian_sigma_for(int k, double sigma) {
  return sigma > 0.0 ? sigma : 0.3 * ((k - 1) * 0.5 - 1.0) + 0.8;
}

/// Separable Gaussian blur, reflect-101 borders.
inline Image gaussian_blur(const Image& img, int k, double sigma = 0.0) {
  detail::require_odd(k, "gaussian_blur");
  const double s = gaussian_sigma_for(k, sigma);
  const int a = k / 2;
  std::vector<double> w(static_cast<std::size_t>(k));
  double sum = 0.0;
  for (int i = 0; i < k; ++i) {
    const double d = i - a;
    w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * s * s));
    sum += w[static_cast<std::size_t>(i)];
  }
  for (double& v : w) v /= sum;

  Image tmp(img.height, img.width), out(img.height, img.width);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) {
        acc += w[static_cast<std::size_t>(i)] *
               img.at(r, detail::reflect101(c - a + i, img.width));
      }
      tmp.at(r, c) = acc;
    }
  }
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) {
        acc += w[static_cast<std::size_t>(i)] *
               tmp.at(detail::reflect101(r - a + i, img.height), c);
      }
      out.at(r, c) = std::clamp(acc, 0.0, 1.0);
    }
  }
  return out;
}

/// Impulse noise on round(fraction * pixels) distinct pixels chosen by
/// `seed`: the first half become 0 (pepper), the rest 1 (salt), so an odd
/// count gives salt the extra pixel.
inline Image salt_pepper(const Image& img, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("salt_pepper: fraction must lie in [0,1]");
  }
  Image out = img;
  const std::size_t n = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(img.size())));
  if (n == 0) return out;
  std::vector<std::size_t> idx(img.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  const std::size_t pepper = n / 2;
  for (std::size_t i = 0; i < n; ++i) out.px[idx[i]] = i < pepper ? 0.0 : 1.0;
  return out;
}

}  // namespace wmocr
