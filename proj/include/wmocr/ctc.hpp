#pragma once

// Connectionist temporal classification: loss, gradient, decoders and an
// enumeration oracle. The blank symbol is always the last column of a
// LogProbMatrix.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

#include "wmocr/tensor.hpp"

namespace wmocr {

using LabelSeq = std::vector<int>;
using Alignment = std::vector<int>;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

/// M timesteps x (charset + 1) log-probabilities; the last column is blank.
class LogProbMatrix {
 public:
  LogProbMatrix() = default;

  LogProbMatrix(std::size_t steps, std::size_t classes)
      : values_({steps, classes}, kNegInf) {}

  // Takes rows that already log-sum-exp to zero.
  explicit LogProbMatrix(Tensor log_probs) : values_(std::move(log_probs)) {
    require_rank(values_, 2, "LogProbMatrix");
    if (values_.dim(1) < 2) {
      throw std::invalid_argument("LogProbMatrix needs >= 1 label plus blank");
    }
  }

  static LogProbMatrix from_probabilities(
      const std::vector<std::vector<double>>& probs) {
    if (probs.empty()) return LogProbMatrix(Tensor({0, 2}));
    Tensor t({probs.size(), probs[0].size()});
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (probs[i].size() != probs[0].size()) {
        throw std::invalid_argument("ragged probability rows");
      }
      for (std::size_t j = 0; j < probs[i].size(); ++j) {
        t.at(i, j) = std::log(probs[i][j]);
      }
    }
    return LogProbMatrix(std::move(t));
  }

  std::size_t steps() const { return values_.dim(0); }
  std::size_t classes() const { return values_.dim(1); }
  int blank() const { return static_cast<int>(classes()) - 1; }
  double operator()(std::size_t t, std::size_t k) const {
    return values_.at(t, k);
  }
  const Tensor& tensor() const { return values_; }

  friend bool operator==(const LogProbMatrix&, const LogProbMatrix&) = default;

 private:
  Tensor values_{Shape{0, 2}};
};

/// Merge adjacent duplicates, then drop blanks.
inline LabelSeq collapse(const Alignment& alignment, int blank) {
  LabelSeq out;
  int prev = -1;
  for (int a : alignment) {
    if (a != prev && a != blank) out.push_back(a);
    prev = a;
  }
  return out;
}

/// Minimum number of timesteps any alignment of `labels` needs.
inline std::size_t ctc_min_steps(const LabelSeq& labels) {
  std::size_t n = labels.size();
  for (std::size_t i = 1; i < labels.size(); ++i) {
    if (labels[i] == labels[i - 1]) ++n;
  }
  return n;
}

inline bool ctc_feasible(const LabelSeq& labels, std::size_t steps) {
  return ctc_min_steps(labels) <= steps;
}

namespace detail {

inline void check_labels(const LogProbMatrix& y, const LabelSeq& labels) {
  for (int l : labels) {
    if (l < 0 || l >= y.blank()) {
      throw std::invalid_argument("label index " + std::to_string(l) +
                                  " outside charset of size " +
                                  std::to_string(y.blank()));
    }
  }
}

inline std::vector<int> extend_with_blanks(const LabelSeq& labels, int blank) {
  std::vector<int> ext(2 * labels.size() + 1, blank);
  for (std::size_t i = 0; i < labels.size(); ++i) ext[2 * i + 1] = labels[i];
  return ext;
}

// log alpha[t][s], inclusive of the emission at t.
inline std::vector<double> ctc_alpha(const LogProbMatrix& y,
                                     const std::vector<int>& ext) {
  const std::size_t m = y.steps(), s_len = ext.size();
  std::vector<double> alpha(m * s_len, kNegInf);
  if (m == 0) return alpha;
  alpha[0] = y(0, ext[0]);
  if (s_len > 1) alpha[1] = y(0, ext[1]);
  for (std::size_t t = 1; t < m; ++t) {
    const double* prev = alpha.data() + (t - 1) * s_len;
    double* cur = alpha.data() + t * s_len;
    for (std::size_t s = 0; s < s_len; ++s) {
      double a = prev[s];
      if (s >= 1) a = log_add(a, prev[s - 1]);
      if (s >= 2 && ext[s] != ext[s - 2]) a = log_add(a, prev[s - 2]);
      cur[s] = a == kNegInf ? kNegInf : a + y(t, ext[s]);
    }
  }
  return alpha;
}

// log beta[t][s], exclusive of the emission at t.
inline std::vector<double> ctc_beta(const LogProbMatrix& y,
                                    const std::vector<int>& ext) {
  const std::size_t m = y.steps(), s_len = ext.size();
  std::vector<double> beta(m * s_len, kNegInf);
  if (m == 0) return beta;
  beta[(m - 1) * s_len + s_len - 1] = 0.0;
  if (s_len > 1) beta[(m - 1) * s_len + s_len - 2] = 0.0;
  for (std::size_t t = m - 1; t-- > 0;) {
    const double* next = beta.data() + (t + 1) * s_len;
    double* cur = beta.data() + t * s_len;
    for (std::size_t s = 0; s < s_len; ++s) {
      double b = next[s] + y(t + 1, ext[s]);
      if (s + 1 < s_len) b = log_add(b, next[s + 1] + y(t + 1, ext[s + 1]));
      if (s + 2 < s_len && ext[s + 2] != ext[s]) {
        b = log_add(b, next[s + 2] + y(t + 1, ext[s + 2]));
      }
      cur[s] = b;
    }
  }
  return beta;
}

inline double ctc_log_likelihood(const LogProbMatrix& y,
                                 const std::vector<int>& ext,
                                 const std::vector<double>& alpha) {
  const std::size_t m = y.steps(), s_len = ext.size();
  if (m == 0) return ext.size() == 1 ? 0.0 : kNegInf;
  const double* last = alpha.data() + (m - 1) * s_len;
  double ll = last[s_len - 1];
  if (s_len > 1) ll = log_add(ll, last[s_len - 2]);
  return ll;
}

}  // namespace detail

/// -log p(labels | y); +infinity when no alignment fits in y.steps().
inline double ctc_loss(const LogProbMatrix& y, const LabelSeq& labels) {
  detail::check_labels(y, labels);
  if (!ctc_feasible(labels, y.steps())) return kInf;
  const auto ext = detail::extend_with_blanks(labels, y.blank());
  const auto alpha = detail::ctc_alpha(y, ext);
  return -detail::ctc_log_likelihood(y, ext, alpha);
}

struct CtcResult {
  double loss = kInf;
  // d loss / d logits, M x classes, assuming y = log_softmax(logits).
  // All zeros when the target is infeasible.
  Tensor grad;
};

inline CtcResult ctc_grad(const LogProbMatrix& y, const LabelSeq& labels) {
  detail::check_labels(y, labels);
  const std::size_t m = y.steps(), k = y.classes();
  CtcResult r{kInf, Tensor({m, k})};
  if (!ctc_feasible(labels, m)) return r;
  const auto ext = detail::extend_with_blanks(labels, y.blank());
  const auto alpha = detail::ctc_alpha(y, ext);
  const auto beta = detail::ctc_beta(y, ext);
  const double ll = detail::ctc_log_likelihood(y, ext, alpha);
  r.loss = -ll;
  const std::size_t s_len = ext.size();
  std::vector<double> occupancy(k);
  for (std::size_t t = 0; t < m; ++t) {
    std::fill(occupancy.begin(), occupancy.end(), kNegInf);
    for (std::size_t s = 0; s < s_len; ++s) {
      const double ab = alpha[t * s_len + s] + beta[t * s_len + s];
      occupancy[ext[s]] = log_add(occupancy[ext[s]], ab);
    }
    for (std::size_t c = 0; c < k; ++c) {
      const double post = occupancy[c] == kNegInf ? 0.0 : std::exp(occupancy[c] - ll);
      r.grad.at(t, c) = std::exp(y(t, c)) - post;
    }
  }
  return r;
}

/// Direct enumeration of every alignment. Test oracle; limited to
/// M <= 8 steps and at most 5 non-blank classes.
inline double ctc_brute_force(const LogProbMatrix& y, const LabelSeq& labels) {
  detail::check_labels(y, labels);
  const std::size_t m = y.steps(), k = y.classes();
  if (m > 8 || k - 1 > 5) {
    throw std::invalid_argument(
        "ctc_brute_force: instance too large to enumerate");
  }
  std::size_t total = 1;
  for (std::size_t i = 0; i < m; ++i) total *= k;
  Alignment a(m);
  double p = 0.0;
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t rest = code;
    double prob = 1.0;
    for (std::size_t t = 0; t < m; ++t) {
      a[t] = static_cast<int>(rest % k);
      rest /= k;
      prob *= std::exp(y(t, a[t]));
    }
    if (collapse(a, y.blank()) == labels) p += prob;
  }
  return p > 0.0 ? -std::log(p) : kInf;
}

/// Per-step argmax (lowest index wins ties), then collapse.
inline LabelSeq greedy_decode(const LogProbMatrix& y) {
  Alignment best(y.steps());
  for (std::size_t t = 0; t < y.steps(); ++t) {
    std::size_t arg = 0;
    for (std::size_t c = 1; c < y.classes(); ++c) {
      if (y(t, c) > y(t, arg)) arg = c;
    }
    best[t] = static_cast<int>(arg);
  }
  return collapse(best, y.blank());
}

/// Prefix beam search over collapsed labelings. Each prefix carries the
/// merged probability of every alignment reaching it, split into
/// blank-ending and label-ending mass. With a beam wide enough to hold
/// every prefix the result is the exact most probable labeling. A width of
/// 1 is not guaranteed to match greedy_decode.
inline LabelSeq beam_decode(const LogProbMatrix& y, std::size_t beam_width) {
  if (beam_width < 1) {
    throw std::invalid_argument("beam_decode: beam_width must be >= 1");
  }
  struct Mass {
    double blank = kNegInf;
    double label = kNegInf;
    double total() const { return log_add(blank, label); }
  };
  using Beam = std::map<LabelSeq, Mass>;
  const int blank = y.blank();
  Beam beam;
  beam[LabelSeq{}].blank = 0.0;

  for (std::size_t t = 0; t < y.steps(); ++t) {
    Beam next;
    for (const auto& [prefix, mass] : beam) {
      const double tot = mass.total();
      auto& same = next[prefix];
      same.blank = log_add(same.blank, tot + y(t, blank));
      for (int c = 0; c < blank; ++c) {
        const double pc = y(t, c);
        if (!prefix.empty() && prefix.back() == c) {
          // Repeat without a blank in between collapses into the prefix.
          same.label = log_add(same.label, mass.label + pc);
          LabelSeq ext = prefix;
          ext.push_back(c);
          auto& e = next[ext];
          e.label = log_add(e.label, mass.blank + pc);
        } else {
          LabelSeq ext = prefix;
          ext.push_back(c);
          auto& e = next[ext];
          e.label = log_add(e.label, tot + pc);
        }
      }
    }
    if (next.size() > beam_width) {
      std::vector<std::pair<double, const LabelSeq*>> order;
      order.reserve(next.size());
      for (const auto& [prefix, mass] : next) {
        order.emplace_back(mass.total(), &prefix);
      }
      // Map iteration order is lexicographic, so stable_sort keeps the
      // tie-break deterministic.
      std::stable_sort(order.begin(), order.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      Beam pruned;
      for (std::size_t i = 0; i < beam_width; ++i) {
        pruned.emplace(*order[i].second, next.at(*order[i].second));
      }
      beam = std::move(pruned);
    } else {
      beam = std::move(next);
    }
  }

  const LabelSeq* best = nullptr;
  double best_p = kNegInf;
  for (const auto& [prefix, mass] : beam) {
    const double p = mass.total();
    if (best == nullptr || p > best_p) {
      best = &prefix;
      best_p = p;
    }
  }
  return best ? *best : LabelSeq{};
}

}  // namespace wmocr
