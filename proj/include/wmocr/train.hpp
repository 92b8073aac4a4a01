#pragma once

// SGD with momentum on the summed-over-batch-mean CTC loss. Deterministic
// for a fixed model seed and shuffle seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "wmocr/config.hpp"
#include "wmocr/model.hpp"
#include "wmocr/textgen.hpp"

namespace wmocr {

struct TrainParams {
  double learning_rate = 0.01;
  double momentum = 0.9;
  int halve_every = 3;  // epochs
  std::size_t batch = 16;
  int max_epochs = 15;
  double target_accuracy = 0.98;
  std::uint64_t shuffle_seed = 7;
  // Global L2 bound on the batch-mean gradient; <= 0 disables clipping.
  double clip_norm = 5.0;
};

struct EpochLog {
  int epoch = 0;
  double learning_rate = 0.0;
  double mean_loss = 0.0;
  double val_accuracy = 0.0;
};

/// Exact-match rate of greedy recognition over the given items.
inline double sequence_accuracy(const ModelWeights& w, const Dataset& ds,
                                const std::vector<std::size_t>& idx, const FontAtlas& atlas) {
  if (idx.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i : idx) {
    hits += recognize(w, render_line(ds.items[i].spec, atlas)) == ds.items[i].text;
  }
  return static_cast<double>(hits) / static_cast<double>(idx.size());
}

inline ModelWeights train(const ModelConfig& config, const Dataset& ds, const FontAtlas& atlas,
                          const TrainParams& p = {},
                          const std::function<void(const EpochLog&)>& on_epoch = {}) {
  if (ds.items.empty()) throw std::invalid_argument("train: empty dataset");
  if (p.batch < 1 || p.max_epochs < 1 || !(p.learning_rate > 0.0)) {
    throw std::invalid_argument("train: bad hyperparameters");
  }
  ModelWeights w = init_weights(config);
  auto train_idx = ds.indices(false);
  const auto val_idx = ds.indices(true);
  if (train_idx.empty()) throw std::invalid_argument("train: no training items");

  std::vector<LabelSeq> labels(ds.items.size());
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    labels[i] = w.charset.encode(ds.items[i].text);
    const std::size_t steps = static_cast<std::size_t>(atlas.line_width(ds.items[i].text.size()) / 4);
    if (!ctc_feasible(labels[i], steps)) {
      throw std::invalid_argument("train: label '" + ds.items[i].text + "' does not fit its image");
    }
  }

  std::vector<Tensor> velocity;
  for (const Tensor* t : w.params()) velocity.emplace_back(t->shape());
  std::mt19937_64 rng(p.shuffle_seed);
  double lr = p.learning_rate;

  for (int epoch = 1; epoch <= p.max_epochs; ++epoch) {
    if (epoch > 1 && p.halve_every > 0 && (epoch - 1) % p.halve_every == 0) lr *= 0.5;
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < train_idx.size(); start += p.batch) {
      const std::size_t end = std::min(train_idx.size(), start + p.batch);
      std::vector<Tensor> grad;
      double batch_loss = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = train_idx[b];
        const Image img = render_line(ds.items[i].spec, atlas);
        const auto cache = forward_cached(w, img);
        auto r = backward(w, img, cache, labels[i], false, true);
        batch_loss += r.loss;
        if (grad.empty()) {
          grad = std::move(r.param_grads);
        } else {
          for (std::size_t k = 0; k < grad.size(); ++k) {
            for (std::size_t j = 0; j < grad[k].size(); ++j) grad[k][j] += r.param_grads[k][j];
          }
        }
      }
      if (!std::isfinite(batch_loss)) {
        throw std::runtime_error("train: loss diverged (epoch " + std::to_string(epoch) +
                                 ", batch starting at " + std::to_string(start) +
                                 "); lower the learning rate");
      }
      loss_sum += batch_loss;
      double scale = 1.0 / static_cast<double>(end - start);
      if (p.clip_norm > 0.0) {
        double sq = 0.0;
        for (const Tensor& g : grad)
          for (double v : g.data()) sq += v * v;
        const double norm = std::sqrt(sq) * scale;
        if (norm > p.clip_norm) scale *= p.clip_norm / norm;
      }
      auto params = w.params();
      for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& v = velocity[k];
        Tensor& prm = *params[k];
        for (std::size_t j = 0; j < prm.size(); ++j) {
          v[j] = p.momentum * v[j] - lr * grad[k][j] * scale;
          prm[j] += v[j];
        }
      }
    }
    if (!w.all_finite()) {
      throw std::runtime_error("train: weights became non-finite in epoch " + std::to_string(epoch));
    }
    w.epochs = epoch;
    w.val_accuracy = sequence_accuracy(w, ds, val_idx, atlas);
    if (on_epoch) {
      on_epoch({epoch, lr, loss_sum / static_cast<double>(train_idx.size()), w.val_accuracy});
    }
    if (!val_idx.empty() && w.val_accuracy >= p.target_accuracy) break;
  }
  return w;
}

/// Everything needed to reproduce a trained model from scratch.
struct TrainSpec {
  ModelConfig model;
  TrainParams params;
  std::size_t samples = 20000;
  int min_len = 2;
  int max_len = 10;
  std::uint64_t data_seed = 11;
  // Share of lines (training and validation) carrying a random watermark.
  // Off by default: it teaches the model to read through pasted watermarks
  // but also through 2% salt and pepper noise.
  double watermark_fraction = 0.0;

  /// Keys: charset, seed, samples, min_len, max_len, data_seed,
  /// learning_rate, momentum, halve_every, batch, max_epochs,
  /// target_accuracy, shuffle_seed, clip_norm, watermark_fraction.
  static TrainSpec from_kv(const KeyValues& kv) {
    TrainSpec s;
    s.model.charset_id = kv.get("charset", s.model.charset_id);
    s.model.seed = kv.get_u64("seed", s.model.seed);
    s.samples = static_cast<std::size_t>(kv.get_int("samples", static_cast<long long>(s.samples)));
    s.min_len = static_cast<int>(kv.get_int("min_len", s.min_len));
    s.max_len = static_cast<int>(kv.get_int("max_len", s.max_len));
    s.data_seed = kv.get_u64("data_seed", s.data_seed);
    s.params.learning_rate = kv.get_double("learning_rate", s.params.learning_rate);
    s.params.momentum = kv.get_double("momentum", s.params.momentum);
    s.params.halve_every = static_cast<int>(kv.get_int("halve_every", s.params.halve_every));
    s.params.batch = static_cast<std::size_t>(kv.get_int("batch", static_cast<long long>(s.params.batch)));
    s.params.max_epochs = static_cast<int>(kv.get_int("max_epochs", s.params.max_epochs));
    s.params.target_accuracy = kv.get_double("target_accuracy", s.params.target_accuracy);
    s.params.shuffle_seed = kv.get_u64("shuffle_seed", s.params.shuffle_seed);
    s.params.clip_norm = kv.get_double("clip_norm", s.params.clip_norm);
    s.watermark_fraction = kv.get_double("watermark_fraction", s.watermark_fraction);
    s.model.validate();
    return s;
  }

  Dataset dataset() const {
    const Charset cs = Charset::by_id(model.charset_id);
    return build_dataset(random_texts(cs, samples, min_len, max_len, data_seed), samples, data_seed,
                         watermark_fraction);
  }
};

inline ModelWeights train(const TrainSpec& spec,
                          const std::function<void(const EpochLog&)>& on_epoch = {}) {
  return train(spec.model, spec.dataset(), FontAtlas(), spec.params, on_epoch);
}

}  // namespace wmocr
