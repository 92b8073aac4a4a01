#pragma once

// Lossy part of baseline JPEG for a single gray channel: 8x8 DCT-II,
// quantization with the Annex K luminance table scaled by the IJG quality
// rule, and the inverse. No entropy coding.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "wmocr/image.hpp"

namespace wmocr {

inline constexpr std::array<int, 64> kJpegLuminanceTable = {
    16, 11, 10, 16, 24,  40,  51,  61,   //
    12, 12, 14, 19, 26,  58,  60,  55,   //
    14, 13, 16, 24, 40,  57,  69,  56,   //
    14, 17, 22, 29, 51,  87,  80,  62,   //
    18, 22, 37, 56, 68,  109, 103, 77,   //
    24, 35, 55, 64, 81,  104, 113, 92,   //
    49, 64, 78, 87, 103, 121, 120, 101,  //
    72, 92, 95, 98, 112, 100, 103, 99};

inline std::array<int, 64> jpeg_quant_table(int quality) {
  if (quality < 1 || quality > 100) {
    throw std::invalid_argument("jpeg quality must lie in [1,100]");
  }
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  std::array<int, 64> q{};
  for (std::size_t i = 0; i < 64; ++i) {
    q[i] = std::clamp((kJpegLuminanceTable[i] * scale + 50) / 100, 1, 255);
  }
  return q;
}

namespace detail {

// basis[u][x] = C(u)/2 * cos((2x+1) u pi / 16); orthonormal 1-D DCT-II.
inline const std::array<double, 64>& dct_basis() {
  static const std::array<double, 64> basis = [] {
    std::array<double, 64> b{};
    for (int u = 0; u < 8; ++u) {
      const double cu = u == 0 ? std::numbers::sqrt2 / 2.0 : 1.0;
      for (int x = 0; x < 8; ++x) {
        b[static_cast<std::size_t>(u * 8 + x)] =
            0.5 * cu * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
      }
    }
    return b;
  }();
  return basis;
}

inline void dct8x8(const std::array<double, 64>& in, std::array<double, 64>& out,
                   bool inverse) {
  const auto& b = dct_basis();
  std::array<double, 64> tmp{};
  // Rows then columns; the inverse uses the transposed basis.
  for (int r = 0; r < 8; ++r) {
    for (int u = 0; u < 8; ++u) {
      double s = 0.0;
      for (int x = 0; x < 8; ++x) {
        const double coef = inverse ? b[static_cast<std::size_t>(x * 8 + u)]
                                    : b[static_cast<std::size_t>(u * 8 + x)];
        s += coef * in[static_cast<std::size_t>(r * 8 + x)];
      }
      tmp[static_cast<std::size_t>(r * 8 + u)] = s;
    }
  }
  for (int c = 0; c < 8; ++c) {
    for (int v = 0; v < 8; ++v) {
      double s = 0.0;
      for (int y = 0; y < 8; ++y) {
        const double coef = inverse ? b[static_cast<std::size_t>(y * 8 + v)]
                                    : b[static_cast<std::size_t>(v * 8 + y)];
        s += coef * tmp[static_cast<std::size_t>(y * 8 + c)];
      }
      out[static_cast<std::size_t>(v * 8 + c)] = s;
    }
  }
}

}  // namespace detail

/// Compress-and-decompress at the given quality. Samples are quantized to
/// 8 bits on the way in and out, as a real codec would.
inline Image compress_roundtrip(const Image& img, int quality) {
  const auto qt = jpeg_quant_table(quality);
  Image out(img.height, img.width);
  std::array<double, 64> block{}, coef{};
  for (int br = 0; br < img.height; br += 8) {
    for (int bc = 0; bc < img.width; bc += 8) {
      for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
          block[static_cast<std::size_t>(y * 8 + x)] =
              static_cast<double>(to_gray8(img.clamped(br + y, bc + x))) - 128.0;
        }
      }
      detail::dct8x8(block, coef, false);
      for (std::size_t i = 0; i < 64; ++i) {
        coef[i] = std::round(coef[i] / qt[i]) * qt[i];
      }
      detail::dct8x8(coef, block, true);
      for (int y = 0; y < 8 && br + y < img.height; ++y) {
        for (int x = 0; x < 8 && bc + x < img.width; ++x) {
          const double v = std::round(block[static_cast<std::size_t>(y * 8 + x)] + 128.0);
          out.at(br + y, bc + x) = std::clamp(v, 0.0, 255.0) / 255.0;
        }
      }
    }
  }
  return out;
}

}  // namespace wmocr
