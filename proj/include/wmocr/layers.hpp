#pragma once

// Forward and backward passes for the fixed layer set used by the
// recognizer. Activations are HxWxC row-major; every function is pure.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "wmocr/tensor.hpp"

namespace wmocr {

// Gradient with respect to a layer's input plus one tensor per parameter,
// in the same order the layer takes its parameters.
struct LayerGrads {
  Tensor input;
  std::vector<Tensor> params;
};

/// Same-size cross-correlation with zero padding.
/// input HxWxC, kernels khxkwxCxF (odd kh, kw), bias F -> HxWxF.
inline Tensor conv2d(const Tensor& input, const Tensor& kernels,
                     const Tensor& bias) {
  require_rank(input, 3, "conv2d input");
  require_rank(kernels, 4, "conv2d kernels");
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  const std::size_t kh = kernels.dim(0), kw = kernels.dim(1);
  const std::size_t f = kernels.dim(3);
  if (kernels.dim(2) != c) {
    throw std::invalid_argument("conv2d: kernel channels " +
                                shape_string(kernels.shape()) +
                                " do not match input " +
                                shape_string(input.shape()));
  }
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw std::invalid_argument("conv2d: kernel dims must be odd");
  }
  require_shape(bias, {f}, "conv2d bias");

  Tensor out({h, w, f});
  const double* in = input.ptr();
  const double* k = kernels.ptr();
  const double* b = bias.ptr();
  double* o = out.ptr();
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);

  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double* op = o + (y * w + x) * f;
      for (std::size_t ff = 0; ff < f; ++ff) op[ff] = b[ff];
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const long iy = static_cast<long>(y + ky) - ph;
        if (iy < 0 || iy >= static_cast<long>(h)) continue;
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const long ix = static_cast<long>(x + kx) - pw;
          if (ix < 0 || ix >= static_cast<long>(w)) continue;
          const double* ip = in + (static_cast<std::size_t>(iy) * w +
                                   static_cast<std::size_t>(ix)) * c;
          const double* kp = k + (ky * kw + kx) * c * f;
          for (std::size_t cc = 0; cc < c; ++cc) {
            const double v = ip[cc];
            const double* kc = kp + cc * f;
            for (std::size_t ff = 0; ff < f; ++ff) op[ff] += v * kc[ff];
          }
        }
      }
    }
  }
  return out;
}

/// Exact gradients of conv2d. With `with_params == false` only the input
/// gradient is computed and `params` is left empty.
inline LayerGrads conv2d_backward(const Tensor& input, const Tensor& kernels,
                                  const Tensor& upstream,
                                  bool with_params = true) {
  require_rank(input, 3, "conv2d_backward input");
  require_rank(kernels, 4, "conv2d_backward kernels");
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  const std::size_t kh = kernels.dim(0), kw = kernels.dim(1);
  const std::size_t f = kernels.dim(3);
  if (kernels.dim(2) != c) {
    throw std::invalid_argument("conv2d_backward: channel mismatch");
  }
  require_shape(upstream, {h, w, f}, "conv2d_backward upstream");

  // Kernel transposed to kh x kw x F x C so the input-gradient inner loop
  // runs over contiguous channels.
  std::vector<double> kt(kernels.size());
  for (std::size_t t = 0; t < kh * kw; ++t) {
    for (std::size_t cc = 0; cc < c; ++cc) {
      for (std::size_t ff = 0; ff < f; ++ff) {
        kt[(t * f + ff) * c + cc] = kernels[(t * c + cc) * f + ff];
      }
    }
  }

  LayerGrads grads;
  grads.input = Tensor({h, w, c});
  Tensor dk, db;
  if (with_params) {
    dk = Tensor(kernels.shape());
    db = Tensor({f});
  }

  const double* in = input.ptr();
  const double* g = upstream.ptr();
  double* gi = grads.input.ptr();
  double* gk = with_params ? dk.ptr() : nullptr;
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);

  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double* gp = g + (y * w + x) * f;
      if (with_params) {
        for (std::size_t ff = 0; ff < f; ++ff) db[ff] += gp[ff];
      }
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const long iy = static_cast<long>(y + ky) - ph;
        if (iy < 0 || iy >= static_cast<long>(h)) continue;
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const long ix = static_cast<long>(x + kx) - pw;
          if (ix < 0 || ix >= static_cast<long>(w)) continue;
          const std::size_t ioff = (static_cast<std::size_t>(iy) * w +
                                    static_cast<std::size_t>(ix)) * c;
          const std::size_t tap = ky * kw + kx;
          double* gip = gi + ioff;
          const double* ktp = kt.data() + tap * f * c;
          for (std::size_t ff = 0; ff < f; ++ff) {
            const double gv = gp[ff];
            const double* kc = ktp + ff * c;
            for (std::size_t cc = 0; cc < c; ++cc) gip[cc] += gv * kc[cc];
          }
          if (with_params) {
            const double* ip = in + ioff;
            double* gkp = gk + tap * c * f;
            for (std::size_t cc = 0; cc < c; ++cc) {
              const double v = ip[cc];
              double* gkc = gkp + cc * f;
              for (std::size_t ff = 0; ff < f; ++ff) gkc[ff] += v * gp[ff];
            }
          }
        }
      }
    }
  }
  if (with_params) {
    grads.params.push_back(std::move(dk));
    grads.params.push_back(std::move(db));
  }
  return grads;
}

inline Tensor relu(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    out[i] = input[i] > 0.0 ? input[i] : 0.0;
  }
  return out;
}

// `input` is the pre-activation seen by relu.
inline Tensor relu_backward(const Tensor& input, const Tensor& upstream) {
  require_shape(upstream, input.shape(), "relu_backward upstream");
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    out[i] = input[i] > 0.0 ? upstream[i] : 0.0;
  }
  return out;
}

struct PoolResult {
  Tensor output;
  // Flat input index of the winning element for every output element.
  std::vector<std::size_t> argmax;
};

/// Non-overlapping 2x2 max pooling on HxWxC with even H and W. Ties go to
/// the first element in row-major window order.
inline PoolResult maxpool2x2(const Tensor& input) {
  require_rank(input, 3, "maxpool2x2 input");
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  if (h % 2 != 0 || w % 2 != 0) {
    throw std::invalid_argument("maxpool2x2: spatial dims must be even, got " +
                                shape_string(input.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  PoolResult r{Tensor({oh, ow, c}), std::vector<std::size_t>(oh * ow * c)};
  const double* in = input.ptr();
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      for (std::size_t cc = 0; cc < c; ++cc) {
        std::size_t best = ((2 * y) * w + 2 * x) * c + cc;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = ((2 * y + dy) * w + 2 * x + dx) * c + cc;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = (y * ow + x) * c + cc;
        r.output[o] = in[best];
        r.argmax[o] = best;
      }
    }
  }
  return r;
}

inline Tensor maxpool_backward(const Shape& input_shape,
                               const std::vector<std::size_t>& argmax,
                               const Tensor& upstream) {
  if (upstream.size() != argmax.size()) {
    throw std::invalid_argument("maxpool_backward: upstream size mismatch");
  }
  Tensor out(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) out[argmax[i]] += upstream[i];
  return out;
}

/// Affine map: input NxD, weights DxK, bias K -> NxK.
inline Tensor dense(const Tensor& input, const Tensor& weights,
                    const Tensor& bias) {
  require_rank(input, 2, "dense input");
  require_rank(weights, 2, "dense weights");
  const std::size_t n = input.dim(0), d = input.dim(1), k = weights.dim(1);
  if (weights.dim(0) != d) {
    throw std::invalid_argument("dense: weights " +
                                shape_string(weights.shape()) +
                                " incompatible with input " +
                                shape_string(input.shape()));
  }
  require_shape(bias, {k}, "dense bias");
  Tensor out({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    double* op = out.ptr() + i * k;
    for (std::size_t j = 0; j < k; ++j) op[j] = bias[j];
    const double* ip = input.ptr() + i * d;
    for (std::size_t t = 0; t < d; ++t) {
      const double v = ip[t];
      const double* wp = weights.ptr() + t * k;
      for (std::size_t j = 0; j < k; ++j) op[j] += v * wp[j];
    }
  }
  return out;
}

inline LayerGrads dense_backward(const Tensor& input, const Tensor& weights,
                                 const Tensor& upstream,
                                 bool with_params = true) {
  require_rank(input, 2, "dense_backward input");
  const std::size_t n = input.dim(0), d = input.dim(1), k = weights.dim(1);
  require_shape(weights, {d, k}, "dense_backward weights");
  require_shape(upstream, {n, k}, "dense_backward upstream");
  LayerGrads g;
  g.input = Tensor({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const double* up = upstream.ptr() + i * k;
    double* gi = g.input.ptr() + i * d;
    for (std::size_t t = 0; t < d; ++t) {
      const double* wp = weights.ptr() + t * k;
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += wp[j] * up[j];
      gi[t] = s;
    }
  }
  if (with_params) {
    Tensor dw({d, k}), db({k});
    for (std::size_t i = 0; i < n; ++i) {
      const double* up = upstream.ptr() + i * k;
      const double* ip = input.ptr() + i * d;
      for (std::size_t t = 0; t < d; ++t) {
        double* dwp = dw.ptr() + t * k;
        for (std::size_t j = 0; j < k; ++j) dwp[j] += ip[t] * up[j];
      }
      for (std::size_t j = 0; j < k; ++j) db[j] += up[j];
    }
    g.params.push_back(std::move(dw));
    g.params.push_back(std::move(db));
  }
  return g;
}

inline Tensor log_softmax_rows(const Tensor& input) {
  require_rank(input, 2, "log_softmax_rows input");
  const std::size_t n = input.dim(0), k = input.dim(1);
  Tensor out({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    const double* ip = input.ptr() + i * k;
    const double m = *std::max_element(ip, ip + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(ip[j] - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < k; ++j) out.at(i, j) = ip[j] - lse;
  }
  return out;
}

inline Tensor softmax_rows(const Tensor& input) {
  Tensor out = log_softmax_rows(input);
  for (double& v : out.data()) v = std::exp(v);
  return out;
}

}  // namespace wmocr
