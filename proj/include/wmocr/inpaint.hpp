#pragma once

// Fast-marching inpainting (Telea, 2004). Masked pixels are filled in order
// of their distance from the mask boundary; each one becomes a weighted
// average of already-known pixels within `radius`, extrapolated along the
// local image gradient.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <queue>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "wmocr/image.hpp"

namespace wmocr {

namespace detail {

enum class FmmFlag : std::uint8_t { kKnown, kBand, kInside };

inline double eikonal_solve(double t1, bool k1, double t2, bool k2) {
  if (k1 && k2) {
    const double d = t1 - t2;
    if (std::abs(d) >= 1.0) return std::min(t1, t2) + 1.0;
    return 0.5 * (t1 + t2 + std::sqrt(2.0 - d * d));
  }
  if (k1) return t1 + 1.0;
  if (k2) return t2 + 1.0;
  return 1.0e6;
}

}  // namespace detail

inline Image inpaint(const Image& img, const Mask& mask, int radius) {
  require_same_dims(img, mask, "inpaint");
  if (radius < 1) throw std::invalid_argument("inpaint: radius must be >= 1");
  if (mask.empty()) return img;
  if (mask.area() == mask.size()) {
    throw std::invalid_argument("inpaint: mask covers the whole image");
  }
  using detail::FmmFlag;
  const int h = img.height, w = img.width;
  auto idx = [w](int r, int c) { return static_cast<std::size_t>(r) * w + c; };
  auto inside_image = [h, w](int r, int c) {
    return r >= 0 && r < h && c >= 0 && c < w;
  };

  Image out = img;
  std::vector<FmmFlag> flag(img.size(), FmmFlag::kKnown);
  std::vector<double> dist(img.size(), 0.0);
  for (std::size_t i = 0; i < img.size(); ++i) {
    if (mask.on[i]) {
      flag[i] = FmmFlag::kInside;
      dist[i] = 1.0e6;
    }
  }

  // Min-heap on (distance, pixel index); the index keeps pops deterministic.
  using Entry = std::tuple<double, std::size_t>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
  constexpr int dr4[4] = {-1, 1, 0, 0};
  constexpr int dc4[4] = {0, 0, -1, 1};
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (flag[idx(r, c)] != FmmFlag::kKnown) continue;
      for (int k = 0; k < 4; ++k) {
        const int rr = r + dr4[k], cc = c + dc4[k];
        if (inside_image(rr, cc) && flag[idx(rr, cc)] == FmmFlag::kInside) {
          flag[idx(r, c)] = FmmFlag::kBand;
          heap.emplace(0.0, idx(r, c));
          break;
        }
      }
    }
  }

  auto known = [&](int r, int c) {
    return inside_image(r, c) && flag[idx(r, c)] != FmmFlag::kInside;
  };
  auto t_at = [&](int r, int c) { return dist[idx(r, c)]; };

  // One-sided or central difference of `field` along one axis, using only
  // known samples.
  auto diff = [&](int r, int c, int dr, int dc, auto&& field) {
    const bool fwd = known(r + dr, c + dc), back = known(r - dr, c - dc);
    if (fwd && back) return 0.5 * (field(r + dr, c + dc) - field(r - dr, c - dc));
    if (fwd) return field(r + dr, c + dc) - field(r, c);
    if (back) return field(r, c) - field(r - dr, c - dc);
    return 0.0;
  };
  auto intensity = [&](int r, int c) { return out.at(r, c); };

  auto fill = [&](int r, int c) {
    const double gty = diff(r, c, 1, 0, t_at);
    const double gtx = diff(r, c, 0, 1, t_at);
    const double gt_norm = std::hypot(gtx, gty);
    const double tp = dist[idx(r, c)];
    double sum_w = 0.0, acc = 0.0;
    for (int qr = r - radius; qr <= r + radius; ++qr) {
      for (int qc = c - radius; qc <= c + radius; ++qc) {
        if (!known(qr, qc)) continue;
        const double ry = r - qr, rx = c - qc;
        const double len2 = rx * rx + ry * ry;
        if (len2 == 0.0 || len2 > radius * radius) continue;
        const double len = std::sqrt(len2);
        double dir = 1.0;
        if (gt_norm > 0.0) {
          dir = std::max(std::abs(rx * gtx + ry * gty) / (len * gt_norm), 1e-6);
        }
        const double dst = 1.0 / len2;
        const double lev = 1.0 / (1.0 + std::abs(dist[idx(qr, qc)] - tp));
        const double wgt = dir * dst * lev;
        const double giy = diff(qr, qc, 1, 0, intensity);
        const double gix = diff(qr, qc, 0, 1, intensity);
        acc += wgt * (out.at(qr, qc) + gix * rx + giy * ry);
        sum_w += wgt;
      }
    }
    if (sum_w > 0.0) out.at(r, c) = std::clamp(acc / sum_w, 0.0, 1.0);
  };

  while (!heap.empty()) {
    const auto [t, p] = heap.top();
    heap.pop();
    if (flag[p] == FmmFlag::kKnown) continue;
    flag[p] = FmmFlag::kKnown;
    const int r = static_cast<int>(p / static_cast<std::size_t>(w));
    const int c = static_cast<int>(p % static_cast<std::size_t>(w));
    for (int k = 0; k < 4; ++k) {
      const int nr = r + dr4[k], nc = c + dc4[k];
      if (!inside_image(nr, nc) || flag[idx(nr, nc)] != FmmFlag::kInside) continue;
      double best = 1.0e6;
      for (int vy : {-1, 1}) {
        for (int vx : {-1, 1}) {
          const bool k1 = known(nr + vy, nc), k2 = known(nr, nc + vx);
          const double t1 = k1 ? t_at(nr + vy, nc) : 0.0;
          const double t2 = k2 ? t_at(nr, nc + vx) : 0.0;
          best = std::min(best, detail::eikonal_solve(t1, k1, t2, k2));
        }
      }
      dist[idx(nr, nc)] = best;
      fill(nr, nc);
      flag[idx(nr, nc)] = FmmFlag::kBand;
      heap.emplace(best, idx(nr, nc));
    }
  }
  return out;
}

}  // namespace wmocr
