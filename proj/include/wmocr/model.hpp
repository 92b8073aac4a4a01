#pragma once

// Micro text-line recognizer: two conv blocks (3x3 conv, relu, 2x2 maxpool)
// followed by a dense layer applied to each feature column, giving one
// log-softmax row per 4 input columns.

#include <cmath>
#include <cstdint>
#include <random>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

#include "wmocr/charset.hpp"
#include "wmocr/ctc.hpp"
#include "wmocr/image.hpp"
#include "wmocr/layers.hpp"
#include "wmocr/tensor.hpp"

namespace wmocr {

struct ModelConfig {
  int height = 32;
  int conv1 = 8;
  int conv2 = 16;
  std::string charset_id = "main";
  std::uint64_t seed = 1;

  int pooled_height() const { return height / 4; }
  std::size_t feature_width() const {
    return static_cast<std::size_t>(pooled_height()) * static_cast<std::size_t>(conv2);
  }

  // Architecture hash; the seed is deliberately left out.
  std::uint64_t hash() const {
    return fnv1a64("h=" + std::to_string(height) + ";c1=" + std::to_string(conv1) +
                   ";c2=" + std::to_string(conv2) + ";charset=" + charset_id);
  }

  void validate() const {
    if (height < 4 || height % 4 != 0) throw std::invalid_argument("model height must be a multiple of 4");
    if (conv1 < 1 || conv2 < 1) throw std::invalid_argument("conv widths must be positive");
  }
};

struct ModelWeights {
  ModelConfig config;
  Charset charset;
  Tensor k1, b1, k2, b2, wd, bd;
  int epochs = 0;
  double val_accuracy = 0.0;

  std::vector<Tensor*> params() { return {&k1, &b1, &k2, &b2, &wd, &bd}; }
  std::vector<const Tensor*> params() const { return {&k1, &b1, &k2, &b2, &wd, &bd}; }
  std::size_t classes() const { return charset.size() + 1; }

  bool all_finite() const {
    for (const Tensor* t : params()) {
      if (!t->all_finite()) return false;
    }
    return true;
  }

  friend bool operator==(const ModelWeights& a, const ModelWeights& b) {
    return a.config.hash() == b.config.hash() && a.config.seed == b.config.seed &&
           a.charset == b.charset && a.k1 == b.k1 && a.b1 == b.b1 && a.k2 == b.k2 &&
           a.b2 == b.b2 && a.wd == b.wd && a.bd == b.bd && a.epochs == b.epochs &&
           a.val_accuracy == b.val_accuracy;
  }
};

/// He-normal kernels and dense weights, zero biases, from config.seed.
inline ModelWeights init_weights(const ModelConfig& config) {
  config.validate();
  ModelWeights w;
  w.config = config;
  w.charset = Charset::by_id(config.charset_id);
  const std::size_t c1 = static_cast<std::size_t>(config.conv1);
  const std::size_t c2 = static_cast<std::size_t>(config.conv2);
  const std::size_t k = w.classes();
  std::mt19937_64 rng(config.seed);
  auto fill = [&rng](Tensor& t, double fan_in) {
    std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / fan_in));
    for (double& v : t.data()) v = nd(rng);
  };
  w.k1 = Tensor({3, 3, 1, c1});
  w.b1 = Tensor({c1});
  w.k2 = Tensor({3, 3, c1, c2});
  w.b2 = Tensor({c2});
  w.wd = Tensor({config.feature_width(), k});
  w.bd = Tensor({k});
  fill(w.k1, 9.0);
  fill(w.k2, 9.0 * static_cast<double>(c1));
  fill(w.wd, static_cast<double>(config.feature_width()));
  if (const char* b = std::getenv("WMOCR_BIAS")) {
    for (double& v : w.b1.data()) v = std::atof(b);
    for (double& v : w.b2.data()) v = std::atof(b);
  }
  return w;
}

/// Intermediate activations kept for the backward pass.
struct ForwardCache {
  Tensor input;  // H x W x 1, ink = 1 - pixel
  Tensor a1, a2;
  PoolResult p1, p2;
  Tensor features;  // M x (H/4 * conv2)
  LogProbMatrix y;
};

inline void check_model_input(const ModelWeights& w, const Image& img) {
  if (img.height != w.config.height || img.width < 4 || img.width % 4 != 0) {
    throw std::invalid_argument("model input must be " + std::to_string(w.config.height) +
                                " px high with width a positive multiple of 4, got " +
                                std::to_string(img.height) + "x" + std::to_string(img.width));
  }
}

inline std::size_t timesteps_for(const Image& img) {
  return static_cast<std::size_t>(img.width / 4);
}

// Pixels are inverted on the way in so zero padding reads as paper.
inline ForwardCache forward_cached(const ModelWeights& w, const Image& img) {
  check_model_input(w, img);
  ForwardCache c;
  c.input = Tensor({static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width), 1});
  for (std::size_t i = 0; i < img.size(); ++i) c.input[i] = 1.0 - img.px[i];
  c.a1 = conv2d(c.input, w.k1, w.b1);
  c.p1 = maxpool2x2(relu(c.a1));
  c.a2 = conv2d(c.p1.output, w.k2, w.b2);
  c.p2 = maxpool2x2(relu(c.a2));

  const std::size_t ph = c.p2.output.dim(0), m = c.p2.output.dim(1), ch = c.p2.output.dim(2);
  c.features = Tensor({m, ph * ch});
  for (std::size_t r = 0; r < ph; ++r) {
    for (std::size_t t = 0; t < m; ++t) {
      for (std::size_t k = 0; k < ch; ++k) c.features.at(t, r * ch + k) = c.p2.output.at(r, t, k);
    }
  }
  c.y = LogProbMatrix(log_softmax_rows(dense(c.features, w.wd, w.bd)));
  return c;
}

inline LogProbMatrix forward(const ModelWeights& w, const Image& img) {
  return forward_cached(w, img).y;
}

struct BackwardResult {
  double loss = 0.0;
  Image input_grad;
  std::vector<Tensor> param_grads;  // same order as ModelWeights::params()
};

inline BackwardResult backward(const ModelWeights& w, const Image& img, const ForwardCache& c,
                               const LabelSeq& target, bool want_input, bool want_params) {
  const auto ctc = ctc_grad(c.y, target);
  if (!std::isfinite(ctc.loss)) {
    throw std::invalid_argument("target needs " + std::to_string(ctc_min_steps(target)) +
                                " timesteps, image gives " + std::to_string(c.y.steps()));
  }
  BackwardResult r;
  r.loss = ctc.loss;
  auto gd = dense_backward(c.features, w.wd, ctc.grad, want_params);

  const Shape& p2s = c.p2.output.shape();
  const std::size_t ph = p2s[0], m = p2s[1], ch = p2s[2];
  Tensor dp2(p2s);
  for (std::size_t r2 = 0; r2 < ph; ++r2) {
    for (std::size_t t = 0; t < m; ++t) {
      for (std::size_t k = 0; k < ch; ++k) dp2.at(r2, t, k) = gd.input.at(t, r2 * ch + k);
    }
  }
  const Tensor da2 = relu_backward(c.a2, maxpool_backward(c.a2.shape(), c.p2.argmax, dp2));
  auto g2 = conv2d_backward(c.p1.output, w.k2, da2, want_params);
  const Tensor da1 = relu_backward(c.a1, maxpool_backward(c.a1.shape(), c.p1.argmax, g2.input));

  LayerGrads g1;
  if (want_input || want_params) g1 = conv2d_backward(c.input, w.k1, da1, want_params);
  if (want_input) {
    r.input_grad = Image(img.height, img.width, 0.0);
    for (std::size_t i = 0; i < img.size(); ++i) r.input_grad.px[i] = -g1.input[i];
  }
  if (want_params) {
    r.param_grads = {std::move(g1.params[0]), std::move(g1.params[1]),
                     std::move(g2.params[0]), std::move(g2.params[1]),
                     std::move(gd.params[0]), std::move(gd.params[1])};
  }
  return r;
}

struct LossGrad {
  double loss = 0.0;
  Image grad;
};

inline LossGrad loss_and_input_gradient(const ModelWeights& w, const Image& img,
                                        const LabelSeq& target) {
  const auto cache = forward_cached(w, img);
  auto r = backward(w, img, cache, target, true, false);
  return {r.loss, std::move(r.input_grad)};
}

inline double model_loss(const ModelWeights& w, const Image& img, const LabelSeq& target) {
  return ctc_loss(forward(w, img), target);
}

struct Decoder {
  enum class Kind { kGreedy, kBeam } kind = Kind::kGreedy;
  std::size_t beam_width = 1;

  static Decoder greedy() { return {}; }
  static Decoder beam(std::size_t width) { return {Kind::kBeam, width}; }
};

inline std::string decode(const ModelWeights& w, const LogProbMatrix& y, const Decoder& d = {}) {
  return w.charset.decode(d.kind == Decoder::Kind::kGreedy ? greedy_decode(y)
                                                           : beam_decode(y, d.beam_width));
}

inline std::string recognize(const ModelWeights& w, const Image& img, const Decoder& d = {}) {
  return decode(w, forward(w, img), d);
}

}  // namespace wmocr
