#pragma once

// Targeted attacks on the recognizer. FGSM is a single signed step; BIM,
// MIM and the watermark family share one projected iteration:
//
//   g   <- mu * g + grad / ||grad||_p          (momentum variants only)
//   d   <- -sign(g) restricted to the mask     (descend the target loss)
//   x   <- clamp01(clip(x + alpha * d, x0 - eps, x0 + eps))
//
// where x0 is the start image (the pasted image for WM_INIT).

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "wmocr/config.hpp"
#include "wmocr/metrics.hpp"
#include "wmocr/model.hpp"
#include "wmocr/textgen.hpp"

namespace wmocr {

enum class Variant { kFgsm, kBim, kMim, kWm, kWmInit, kWmNeg, kWmEdge };

inline constexpr std::array<Variant, 7> kAllVariants = {
    Variant::kFgsm, Variant::kBim,   Variant::kMim,  Variant::kWm,
    Variant::kWmInit, Variant::kWmNeg, Variant::kWmEdge};

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kFgsm: return "FGSM";
    case Variant::kBim: return "BIM";
    case Variant::kMim: return "MIM";
    case Variant::kWm: return "WM";
    case Variant::kWmInit: return "WM_INIT";
    case Variant::kWmNeg: return "WM_NEG";
    case Variant::kWmEdge: return "WM_EDGE";
  }
  return "?";
}

/// Accepts the canonical names case-insensitively, with '-' for '_'.
inline Variant parse_variant(std::string_view name) {
  std::string s(name);
  for (char& c : s) c = c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (Variant v : kAllVariants) {
    if (variant_name(v) == s) return v;
  }
  throw std::invalid_argument("unknown attack variant '" + std::string(name) + "'");
}

inline bool uses_watermark_mask(Variant v) {
  return v == Variant::kWm || v == Variant::kWmInit || v == Variant::kWmNeg;
}

inline bool uses_full_mask(Variant v) {
  return v == Variant::kFgsm || v == Variant::kBim || v == Variant::kMim;
}

struct AttackConfig {
  Variant variant = Variant::kWm;
  double epsilon = 0.2;
  int iterations = 1000;
  std::optional<double> alpha;  // epsilon / iterations when unset
  double mu = 1.0;
  double p_norm = 1.0;  // 1, 2 or infinity
  WatermarkSpec watermark;
  double lambda = 0.3;
  double tau = kDefaultTau;
  bool early_stop = true;
  bool record_trajectory = false;

  double step() const {
    if (alpha) return *alpha;
    return iterations > 0 ? epsilon / iterations : epsilon;
  }

  void validate() const {
    if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be > 0");
    if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
    if (!(step() > 0.0)) throw std::invalid_argument("alpha must be > 0");
    if (!(mu >= 0.0)) throw std::invalid_argument("mu must be >= 0");
    if (!(p_norm == 1.0 || p_norm == 2.0 || std::isinf(p_norm))) {
      throw std::invalid_argument("p_norm must be 1, 2 or inf");
    }
  }

  /// Keys: variant, epsilon, iterations, alpha, mu, p_norm, lambda, tau,
  /// watermark_text, watermark_scale, watermark_row, watermark_col,
  /// watermark_dilation, early_stop.
  static AttackConfig from_kv(const KeyValues& kv) { return from_kv(kv, AttackConfig{}); }

  static AttackConfig from_kv(const KeyValues& kv, const AttackConfig& base) {
    AttackConfig c = base;
    if (kv.has("variant")) c.variant = parse_variant(kv.get("variant", ""));
    c.epsilon = kv.get_double("epsilon", c.epsilon);
    c.iterations = static_cast<int>(kv.get_int("iterations", c.iterations));
    if (kv.has("alpha")) c.alpha = kv.get_double("alpha", 0.0);
    c.mu = kv.get_double("mu", c.mu);
    if (kv.has("p_norm")) {
      const std::string p = kv.get("p_norm", "");
      c.p_norm = (p == "inf") ? INFINITY : kv.get_double("p_norm", 1.0);
    }
    c.lambda = kv.get_double("lambda", c.lambda);
    c.tau = kv.get_double("tau", c.tau);
    c.watermark.text = kv.get("watermark_text", c.watermark.text);
    c.watermark.scale = static_cast<int>(kv.get_int("watermark_scale", c.watermark.scale));
    c.watermark.dilation = static_cast<int>(kv.get_int("watermark_dilation", c.watermark.dilation));
    if (kv.has("watermark_row") || kv.has("watermark_col")) {
      if (!(kv.has("watermark_row") && kv.has("watermark_col"))) {
        throw std::invalid_argument("watermark_row and watermark_col must be given together");
      }
      c.watermark.anchor = std::make_pair(kv.get_double("watermark_row", 0.0),
                                          kv.get_double("watermark_col", 0.0));
    }
    c.early_stop = kv.get_bool("early_stop", c.early_stop);
    c.validate();
    return c;
  }
};

struct AttackResult {
  Variant variant = Variant::kWm;
  Image adversarial;
  Image start;  // x0: the clean image, or the pasted one for WM_INIT
  Mask mask;
  std::string target;
  std::string clean_prediction;
  std::string prediction;
  bool targeted_success = false;
  bool untargeted_success = false;
  int iterations = 0;
  double wall_time_s = 0.0;
  QualityReport quality;
  std::vector<double> loss_trace;  // loss at each visited iterate
  std::vector<double> best_trace;  // running minimum of loss_trace
  std::vector<Image> trajectory;   // iterates, when requested
};

namespace detail {

struct EngineSettings {
  double epsilon = 0.2;
  int iterations = 1;
  double alpha = 0.2;
  bool momentum = false;
  double mu = 1.0;
  double p_norm = 1.0;
  bool darken_only = false;
  bool early_stop = true;
  bool record_trajectory = false;
};

inline double grad_norm(const Image& g, double p) {
  double s = 0.0;
  if (std::isinf(p)) {
    for (double v : g.px) s = std::max(s, std::abs(v));
    return s;
  }
  if (p == 2.0) {
    for (double v : g.px) s += v * v;
    return std::sqrt(s);
  }
  for (double v : g.px) s += std::abs(v);
  return s;
}

inline void fill_outcome(const ModelWeights& w, const Image& clean, AttackResult& r) {
  r.prediction = recognize(w, r.adversarial);
  r.targeted_success = r.prediction == r.target;
  r.untargeted_success = r.prediction != r.clean_prediction;
  r.quality = wmocr::quality(clean, r.adversarial);
}

/// The shared projected iteration. On exhaustion without a targeted hit,
/// the lowest-loss iterate is returned.
inline void run_engine(const ModelWeights& w, const Image& x0, const Mask& mask,
                       const LabelSeq& target, const EngineSettings& s, AttackResult& r) {
  Image x = x0;
  Image g(x0.height, x0.width, 0.0);
  Image best = x0;
  double best_loss = kInf;
  bool hit = false;
  int it = 0;
  if (s.record_trajectory) r.trajectory.push_back(x);
  for (;; ++it) {
    const auto cache = forward_cached(w, x);
    if (s.early_stop && greedy_decode(cache.y) == target) {
      hit = true;
      r.loss_trace.push_back(ctc_loss(cache.y, target));
    }
    if (hit || it == s.iterations) {
      if (!hit) r.loss_trace.push_back(ctc_loss(cache.y, target));
      const double l = r.loss_trace.back();
      r.best_trace.push_back(std::min(l, best_loss));
      if (l < best_loss) {
        best_loss = l;
        best = x;
      }
      break;
    }
    const auto bw = backward(w, x, cache, target, true, false);
    r.loss_trace.push_back(bw.loss);
    if (bw.loss < best_loss) {
      best_loss = bw.loss;
      best = x;
    }
    r.best_trace.push_back(best_loss);

    const Image& grad = bw.input_grad;
    if (s.momentum) {
      const double n = grad_norm(grad, s.p_norm);
      for (std::size_t i = 0; i < g.size(); ++i) {
        g.px[i] = s.mu * g.px[i] + (n > 0.0 ? grad.px[i] / n : 0.0);
      }
    }
    const Image& dir = s.momentum ? g : grad;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!mask.on[i]) continue;
      double d = -sign(dir.px[i]);
      if (s.darken_only) d = std::min(0.0, d);
      const double v = std::clamp(x.px[i] + s.alpha * d, x0.px[i] - s.epsilon, x0.px[i] + s.epsilon);
      x.px[i] = std::clamp(v, 0.0, 1.0);
    }
    if (s.record_trajectory) r.trajectory.push_back(x);
  }
  r.iterations = it;
  r.adversarial = hit ? x : best;
}

inline void check_attack_inputs(const ModelWeights& w, const Image& x, const LabelSeq& target) {
  check_model_input(w, x);
  if (!ctc_feasible(target, timesteps_for(x))) {
    throw std::invalid_argument("target of length " + std::to_string(target.size()) +
                                " does not fit a " + std::to_string(x.width) + "-px line");
  }
  for (double v : x.px) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("attack input outside [0,1]");
  }
}

inline AttackResult begin_result(const ModelWeights& w, Variant v, const Image& x,
                                 const std::string& target) {
  AttackResult r;
  r.variant = v;
  r.target = target;
  r.clean_prediction = recognize(w, x);
  return r;
}

}  // namespace detail

/// Single step of size epsilon against the gradient of the target loss.
inline AttackResult fgsm(const ModelWeights& w, const Image& x, const std::string& target,
                         double epsilon, bool record_trajectory = false) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be > 0");
  const LabelSeq t = w.charset.encode(target);
  detail::check_attack_inputs(w, x, t);
  const auto t0 = std::chrono::steady_clock::now();
  AttackResult r = detail::begin_result(w, Variant::kFgsm, x, target);
  r.start = x;
  r.mask = Mask(x.height, x.width, true);
  const auto lg = loss_and_input_gradient(w, x, t);
  Image adv = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    adv.px[i] = std::clamp(x.px[i] - epsilon * sign(lg.grad.px[i]), 0.0, 1.0);
  }
  r.adversarial = adv;
  r.iterations = 1;
  r.loss_trace = {lg.loss, model_loss(w, adv, t)};
  r.best_trace = {lg.loss, std::min(lg.loss, r.loss_trace[1])};
  if (record_trajectory) r.trajectory = {x, adv};
  detail::fill_outcome(w, x, r);
  r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

/// Iterative attack from `start` under `mask`; the ball is centred on start
/// and quality is measured against the clean image `x`.
inline AttackResult iterative_attack(const ModelWeights& w, Variant variant, const Image& x,
                                     const Image& start, const Mask& mask,
                                     const std::string& target, const AttackConfig& cfg) {
  cfg.validate();
  const LabelSeq t = w.charset.encode(target);
  detail::check_attack_inputs(w, x, t);
  require_same_dims(x, start, "attack start");
  require_same_dims(x, mask, "attack mask");
  if (mask.empty()) throw std::invalid_argument("attack mask is empty (vacuous attack)");

  const auto t0 = std::chrono::steady_clock::now();
  AttackResult r = detail::begin_result(w, variant, x, target);
  r.start = start;
  r.mask = mask;
  detail::EngineSettings s;
  s.epsilon = cfg.epsilon;
  s.iterations = cfg.iterations;
  s.alpha = cfg.step();
  s.momentum = variant != Variant::kBim;
  s.mu = cfg.mu;
  s.p_norm = cfg.p_norm;
  s.darken_only = variant == Variant::kWmNeg;
  s.early_stop = cfg.early_stop;
  s.record_trajectory = cfg.record_trajectory;
  detail::run_engine(w, start, mask, t, s, r);
  detail::fill_outcome(w, x, r);
  r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline AttackResult bim(const ModelWeights& w, const Image& x, const std::string& target,
                        AttackConfig cfg) {
  return iterative_attack(w, Variant::kBim, x, x, Mask(x.height, x.width, true), target, cfg);
}

inline AttackResult mim(const ModelWeights& w, const Image& x, const std::string& target,
                        AttackConfig cfg) {
  return iterative_attack(w, Variant::kMim, x, x, Mask(x.height, x.width, true), target, cfg);
}

inline AttackResult wm_attack(const ModelWeights& w, const Image& x, const std::string& target,
                              const Mask& mask, AttackConfig cfg) {
  return iterative_attack(w, Variant::kWm, x, x, mask, target, cfg);
}

/// The mask a variant perturbs under, for image x.
inline Mask attack_mask(Variant v, const Image& x, const AttackConfig& cfg) {
  if (uses_full_mask(v)) return Mask(x.height, x.width, true);
  if (v == Variant::kWmEdge) return edge_mask(x, cfg.tau);
  return watermark_mask(cfg.watermark, x.height, x.width);
}

inline AttackResult run_attack(Variant v, const ModelWeights& w, const Image& x,
                               const std::string& target, const AttackConfig& cfg) {
  cfg.validate();
  switch (v) {
    case Variant::kFgsm: return fgsm(w, x, target, cfg.epsilon, cfg.record_trajectory);
    case Variant::kBim: return bim(w, x, target, cfg);
    case Variant::kMim: return mim(w, x, target, cfg);
    case Variant::kWm:
    case Variant::kWmNeg:
    case Variant::kWmEdge: {
      const Mask m = attack_mask(v, x, cfg);
      return iterative_attack(w, v, x, x, m, target, cfg);
    }
    case Variant::kWmInit: {
      const Mask m = attack_mask(v, x, cfg);
      const Image pasted = paste_watermark(x, m, cfg.lambda, cfg.tau);
      return iterative_attack(w, v, x, pasted, m, target, cfg);
    }
  }
  throw std::invalid_argument("unknown attack variant");
}

}  // namespace wmocr
