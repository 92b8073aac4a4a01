#pragma once

// Experiment runner: confusable-pair corpus, per-variant attack evaluation,
// defenses, transfer to a second model, and CSV/JSON report files.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "wmocr/attack.hpp"
#include "wmocr/filters.hpp"
#include "wmocr/inpaint.hpp"
#include "wmocr/jpeg.hpp"
#include "wmocr/metrics.hpp"
#include "wmocr/model.hpp"
#include "wmocr/textgen.hpp"

namespace wmocr {

// ---------------------------------------------------------------- corpus

enum class EditKind { kSubstitution, kDeletion, kInsertion };

inline std::string edit_kind_name(EditKind k) {
  switch (k) {
    case EditKind::kSubstitution: return "substitution";
    case EditKind::kDeletion: return "deletion";
    case EditKind::kInsertion: return "insertion";
  }
  return "?";
}

inline EditKind parse_edit_kind(const std::string& s) {
  if (s == "substitution") return EditKind::kSubstitution;
  if (s == "deletion") return EditKind::kDeletion;
  if (s == "insertion") return EditKind::kInsertion;
  throw std::invalid_argument("unknown edit kind '" + s + "'");
}

/// '_' marks the edited character. Placeholders sit near the middle of the
/// line, under the default centred watermark, and always touch a non-space
/// neighbour so deletions never create double spaces. Every line has at
/// least fifteen glyphs (120 px), wider than the default watermark.
inline const std::vector<std::string>& default_templates() {
  static const std::vector<std::string> t = {
      "Meet at 1_ PM ok", "Gate _B open now", "Lot 4_A west end", "PIN _9 due today",
      "Bay _3x dock one", "Set x_ y now ok", "Ref X_1 card due", "Pay _00 cash now",
      "No. 7_ kept safe", "Unit _5 west row", "Box _12 sent out", "Key a_c door two",
      "Tag 9_Q item set", "Vol. _2 book one", "Cab _4R lane six", "Id Z_ 8 pass due"};
  return t;
}

/// Substitutes c for the placeholder.
inline std::string fill_template(const std::string& tpl, const std::string& c) {
  const auto p = tpl.find('_');
  if (p == std::string::npos) throw std::invalid_argument("template '" + tpl + "' has no '_'");
  return tpl.substr(0, p) + c + tpl.substr(p + 1);
}

struct CorpusSpec {
  double pair_threshold = 0.8;
  std::vector<std::string> templates = default_templates();
  // Explicit (from, to) pairs; mined from the font when empty.
  std::vector<std::pair<char, char>> pairs;
  std::size_t count = 150;
  double deletion_fraction = 0.1;
  double insertion_fraction = 0.1;
  std::uint64_t seed = 1;
};

struct CorpusItem {
  std::size_t index = 0;
  std::string original;
  std::string target;
  EditKind kind = EditKind::kSubstitution;
  Image image;
};

/// Directed (from, to) pairs: every mined unordered pair in both directions.
inline std::vector<std::pair<char, char>> corpus_pairs(const CorpusSpec& spec,
                                                       const Charset& charset,
                                                       const FontAtlas& atlas) {
  if (!spec.pairs.empty()) return spec.pairs;
  std::vector<std::pair<char, char>> out;
  for (const auto& p : mine_confusable_pairs(charset, atlas, spec.pair_threshold)) {
    out.emplace_back(p.a, p.b);
    out.emplace_back(p.b, p.a);
  }
  if (out.empty()) {
    throw std::invalid_argument("no confusable pairs above threshold " +
                                std::to_string(spec.pair_threshold));
  }
  return out;
}

/// Case for template `tpl` and pair (a, b).
inline CorpusItem make_case(const std::string& tpl, char a, char b, EditKind kind) {
  CorpusItem it;
  it.kind = kind;
  it.original = fill_template(tpl, std::string(1, a));
  switch (kind) {
    case EditKind::kSubstitution: it.target = fill_template(tpl, std::string(1, b)); break;
    case EditKind::kDeletion: it.target = fill_template(tpl, ""); break;
    case EditKind::kInsertion: it.target = fill_template(tpl, std::string{a, b}); break;
  }
  return it;
}

/// Renders `spec.count` cases. With `model` given, only lines the model
/// reads correctly when clean are kept.
inline std::vector<CorpusItem> build_corpus(const CorpusSpec& spec, const Charset& charset,
                                            const FontAtlas& atlas,
                                            const ModelWeights* model = nullptr) {
  if (spec.count < 1) throw std::invalid_argument("corpus count must be >= 1");
  if (spec.templates.empty()) throw std::invalid_argument("no corpus templates");
  const auto pairs = corpus_pairs(spec, charset, atlas);
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_pair(0, pairs.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_tpl(0, spec.templates.size() - 1);

  std::vector<CorpusItem> out;
  const std::size_t max_attempts = spec.count * 50;
  for (std::size_t attempt = 0; out.size() < spec.count; ++attempt) {
    if (attempt >= max_attempts) {
      throw std::runtime_error("build_corpus: only " + std::to_string(out.size()) + " of " +
                               std::to_string(spec.count) + " cases are read correctly by the model");
    }
    const double r = u(rng);
    const EditKind kind = r < spec.deletion_fraction ? EditKind::kDeletion
                          : r < spec.deletion_fraction + spec.insertion_fraction
                              ? EditKind::kInsertion
                              : EditKind::kSubstitution;
    const auto [a, b] = pairs[pick_pair(rng)];
    const std::string& tpl = spec.templates[pick_tpl(rng)];
    CorpusItem it = make_case(tpl, a, b, kind);
    LineSpec ls;
    ls.text = it.original;
    ls.jitter_seed = spec.seed ^ attempt;
    it.image = render_line(ls, atlas);
    if (!ctc_feasible(charset.encode(it.target), timesteps_for(it.image))) continue;
    if (model && recognize(*model, it.image) != it.original) continue;
    it.index = out.size();
    out.push_back(std::move(it));
  }
  return out;
}

/// corpus.jsonl plus <index>.pgm (viewing) and <index>.f64 (exact) per item.
inline void write_corpus(const std::filesystem::path& dir, const std::vector<CorpusItem>& corpus) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "corpus.jsonl");
  if (!manifest) throw std::runtime_error("cannot write corpus manifest in " + dir.string());
  for (const auto& it : corpus) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "%04zu", it.index);
    write_pgm(dir / (std::string(stem) + ".pgm"), it.image);
    write_f64(dir / (std::string(stem) + ".f64"), it.image);
    nlohmann::ordered_json j = {{"index", it.index},
                                {"original", it.original},
                                {"target", it.target},
                                {"kind", edit_kind_name(it.kind)},
                                {"image", std::string(stem) + ".f64"}};
    manifest << j.dump() << '\n';
  }
}

inline std::vector<CorpusItem> read_corpus(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "corpus.jsonl");
  if (!manifest) throw std::runtime_error("no corpus.jsonl in " + dir.string());
  std::vector<CorpusItem> out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    CorpusItem it;
    it.index = j.at("index").get<std::size_t>();
    if (it.index != out.size()) throw std::runtime_error(dir.string() + ": corpus indices out of order");
    it.original = j.at("original").get<std::string>();
    it.target = j.at("target").get<std::string>();
    it.kind = parse_edit_kind(j.at("kind").get<std::string>());
    it.image = read_f64(dir / j.at("image").get<std::string>());
    out.push_back(std::move(it));
  }
  return out;
}

// ---------------------------------------------------------------- metrics

struct Outcome {
  std::string clean_prediction;
  std::string prediction;
  std::string target;
};

struct AsrPair {
  double asr_star = 0.0;
  double asr = 0.0;
};

/// ASR* counts targeted hits; ASR counts outputs that either hit the target
/// or differ from the clean prediction (each image at most once).
inline AsrPair asr_metrics(const std::vector<Outcome>& outcomes) {
  if (outcomes.empty()) throw std::invalid_argument("asr_metrics: no outcomes");
  std::size_t hit = 0, changed = 0;
  for (const auto& o : outcomes) {
    const bool t = o.prediction == o.target;
    hit += t;
    changed += t || o.prediction != o.clean_prediction;
  }
  const double n = static_cast<double>(outcomes.size());
  return {static_cast<double>(hit) / n, static_cast<double>(changed) / n};
}

// ---------------------------------------------------------------- attacks

inline constexpr const char* kWm0Name = "WM0";

struct ItemRecord {
  std::size_t item = 0;
  Image adversarial;
  Mask mask;
  std::string clean_prediction;
  std::string prediction;
  std::string target;
  int iterations = 0;
  double time_s = 0.0;
  QualityReport quality;
  std::vector<double> loss_trace;
  std::string error;  // non-empty when the attack threw
};

struct VariantRun {
  std::string name;
  Variant variant = Variant::kWm;
  std::vector<ItemRecord> records;
};

/// Runs one variant over the corpus. `name` "WM0" runs WM_INIT with zero
/// iterations: the pasted watermark alone.
inline VariantRun evaluate_variant(const ModelWeights& w, const std::vector<CorpusItem>& corpus,
                                   const std::string& name, const AttackConfig& base) {
  VariantRun run;
  run.name = name;
  AttackConfig cfg = base;
  if (name == kWm0Name) {
    run.variant = Variant::kWmInit;
    cfg.iterations = 0;
    cfg.alpha = base.step();
  } else {
    run.variant = parse_variant(name);
  }
  for (const auto& item : corpus) {
    ItemRecord rec;
    rec.item = item.index;
    rec.target = item.target;
    try {
      AttackResult r = run_attack(run.variant, w, item.image, item.target, cfg);
      rec.adversarial = std::move(r.adversarial);
      rec.mask = std::move(r.mask);
      rec.clean_prediction = r.clean_prediction;
      rec.prediction = r.prediction;
      rec.iterations = r.iterations;
      rec.time_s = r.wall_time_s;
      rec.quality = r.quality;
      rec.loss_trace = std::move(r.loss_trace);
    } catch (const std::exception& e) {
      // Recorded as a failed attack on an unchanged image.
      rec.error = e.what();
      rec.adversarial = item.image;
      rec.mask = Mask(item.image.height, item.image.width);
      rec.clean_prediction = recognize(w, item.image);
      rec.prediction = rec.clean_prediction;
      rec.quality = quality(item.image, item.image);
    }
    run.records.push_back(std::move(rec));
  }
  return run;
}

/// The WM0 baseline followed by each requested variant.
inline std::vector<VariantRun> evaluate_attacks(const ModelWeights& w,
                                                const std::vector<CorpusItem>& corpus,
                                                const std::vector<std::string>& variants,
                                                const AttackConfig& cfg, bool include_wm0 = true) {
  std::vector<VariantRun> out;
  if (include_wm0) out.push_back(evaluate_variant(w, corpus, kWm0Name, cfg));
  for (const auto& v : variants) out.push_back(evaluate_variant(w, corpus, v, cfg));
  return out;
}

// ---------------------------------------------------------------- defenses

struct Defense {
  enum class Kind { kNone, kAverage, kMedian, kGaussian, kSaltPepper, kCompress, kInpaint };
  Kind kind = Kind::kNone;
  int k = 0;
  double sigma = 0.0;
  double fraction = 0.0;
  int quality = 0;
  int radius = 0;
  std::string label = "none";

  bool needs_mask() const { return kind == Kind::kInpaint; }
};

namespace detail {

inline int parse_square_kernel(const std::string& s, const std::string& label) {
  const auto x = s.find('x');
  try {
    const int a = std::stoi(s.substr(0, x));
    if (x != std::string::npos && std::stoi(s.substr(x + 1)) != a) {
      throw std::invalid_argument("non-square");
    }
    return a;
  } catch (const std::exception&) {
    throw std::invalid_argument("defense '" + label + "': bad kernel size '" + s + "'");
  }
}

inline std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace detail

/// NAME@PARAMS, e.g. AvgBlur@2x2, MedianBlur@3x3, GaussianBlur@3x3,0,
/// SaltPepper@2%, Compress@20, Inpaint@2, none.
inline Defense parse_defense(const std::string& text) {
  Defense d;
  d.label = text;
  const auto at = text.find('@');
  const std::string name = detail::lower(text.substr(0, at));
  const std::string params = at == std::string::npos ? "" : text.substr(at + 1);
  auto need_params = [&] {
    if (params.empty()) throw std::invalid_argument("defense '" + text + "' needs parameters");
  };
  try {
    if (name == "none") {
      d.kind = Defense::Kind::kNone;
    } else if (name == "avgblur" || name == "averageblur") {
      need_params();
      d.kind = Defense::Kind::kAverage;
      d.k = detail::parse_square_kernel(params, text);
    } else if (name == "medianblur") {
      need_params();
      d.kind = Defense::Kind::kMedian;
      d.k = detail::parse_square_kernel(params, text);
    } else if (name == "gaussianblur") {
      need_params();
      d.kind = Defense::Kind::kGaussian;
      const auto comma = params.find(',');
      d.k = detail::parse_square_kernel(params.substr(0, comma), text);
      d.sigma = comma == std::string::npos ? 0.0 : std::stod(params.substr(comma + 1));
    } else if (name == "saltpepper" || name == "salt&pepper") {
      need_params();
      d.kind = Defense::Kind::kSaltPepper;
      d.fraction = params.back() == '%' ? std::stod(params.substr(0, params.size() - 1)) / 100.0
                                        : std::stod(params);
    } else if (name == "compress" || name == "jpeg") {
      need_params();
      d.kind = Defense::Kind::kCompress;
      d.quality = std::stoi(params);
    } else if (name == "inpaint" || name == "inpainting") {
      need_params();
      d.kind = Defense::Kind::kInpaint;
      d.radius = std::stoi(params);
    } else {
      throw std::invalid_argument("unknown defense '" + text + "'");
    }
  } catch (const std::invalid_argument&) {
    throw;
  } catch (const std::exception&) {
    throw std::invalid_argument("defense '" + text + "': bad parameters");
  }
  return d;
}

inline const std::vector<std::string>& default_defenses() {
  static const std::vector<std::string> d = {"AvgBlur@2x2", "MedianBlur@3x3", "GaussianBlur@3x3,0",
                                             "SaltPepper@2%", "Compress@20", "Inpaint@2"};
  return d;
}

inline Image apply_defense(const Defense& d, const Image& img, const Mask& mask,
                           std::uint64_t seed) {
  switch (d.kind) {
    case Defense::Kind::kNone: return img;
    case Defense::Kind::kAverage: return average_blur(img, d.k);
    case Defense::Kind::kMedian: return median_blur(img, d.k);
    case Defense::Kind::kGaussian: return gaussian_blur(img, d.k, d.sigma);
    case Defense::Kind::kSaltPepper: return salt_pepper(img, d.fraction, seed);
    case Defense::Kind::kCompress: return compress_roundtrip(img, d.quality);
    case Defense::Kind::kInpaint: return inpaint(img, mask, d.radius);
  }
  return img;
}

/// Inpainting needs a proper sub-image mask; full-image attacks have none.
inline bool defense_applies(const Defense& d, const VariantRun& run) {
  return !(d.needs_mask() && uses_full_mask(run.variant));
}

// ---------------------------------------------------------------- report

struct ReportRow {
  std::string variant;
  std::string defense = "none";
  double mse = std::numeric_limits<double>::quiet_NaN();
  double psnr = std::numeric_limits<double>::quiet_NaN();
  double ssim = std::numeric_limits<double>::quiet_NaN();
  double asr_star = 0.0;
  double asr = 0.0;
  double time_s = 0.0;
  std::size_t items = 0;
  std::size_t successes = 0;
};

/// ASR*/ASR of `predictions` against the run's clean predictions and
/// targets; noise metrics of `images` vs the clean corpus, averaged over
/// targeted hits.
inline ReportRow summarize(const std::string& variant, const std::string& defense,
                           const std::vector<CorpusItem>& corpus,
                           const std::vector<ItemRecord>& records,
                           const std::vector<std::string>& predictions,
                           const std::vector<const Image*>& images) {
  ReportRow row;
  row.variant = variant;
  row.defense = defense;
  row.items = records.size();
  std::vector<Outcome> outcomes;
  double mse_sum = 0.0, psnr_sum = 0.0, ssim_sum = 0.0, time_sum = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    outcomes.push_back({rec.clean_prediction, predictions[i], rec.target});
    time_sum += rec.time_s;
    if (predictions[i] == rec.target) {
      const QualityReport q = quality(corpus.at(rec.item).image, *images[i]);
      ++row.successes;
      mse_sum += q.mse;
      psnr_sum += q.psnr;
      ssim_sum += q.ssim;
    }
  }
  if (!outcomes.empty()) {
    const AsrPair a = asr_metrics(outcomes);
    row.asr_star = a.asr_star;
    row.asr = a.asr;
    row.time_s = time_sum / static_cast<double>(records.size());
  }
  if (row.successes > 0) {
    const double n = static_cast<double>(row.successes);
    row.mse = mse_sum / n;
    row.psnr = psnr_sum / n;
    row.ssim = ssim_sum / n;
  }
  return row;
}

inline ReportRow summarize_run(const VariantRun& run, const std::vector<CorpusItem>& corpus) {
  std::vector<std::string> preds;
  std::vector<const Image*> imgs;
  for (const auto& r : run.records) {
    preds.push_back(r.prediction);
    imgs.push_back(&r.adversarial);
  }
  return summarize(run.name, "none", corpus, run.records, preds, imgs);
}

/// One row per (run, defense) cell; "none" reproduces summarize_run. Salt
/// and pepper uses seed ^ item index per image.
inline std::vector<ReportRow> evaluate_defenses(const ModelWeights& w,
                                                const std::vector<CorpusItem>& corpus,
                                                const std::vector<VariantRun>& runs,
                                                const std::vector<std::string>& defenses,
                                                std::uint64_t seed) {
  std::vector<ReportRow> rows;
  for (const auto& run : runs) {
    for (const auto& name : defenses) {
      const Defense d = parse_defense(name);
      if (!defense_applies(d, run)) continue;
      if (d.kind == Defense::Kind::kNone) {
        rows.push_back(summarize_run(run, corpus));
        continue;
      }
      std::vector<Image> defended;
      defended.reserve(run.records.size());
      std::vector<std::string> preds;
      for (const auto& rec : run.records) {
        // An errored record has an empty mask; inpainting leaves it as is.
        Image out = apply_defense(d, rec.adversarial, rec.mask, seed ^ rec.item);
        preds.push_back(recognize(w, out));
        defended.push_back(std::move(out));
      }
      std::vector<const Image*> imgs;
      for (const auto& im : defended) imgs.push_back(&im);
      rows.push_back(summarize(run.name, d.label, corpus, run.records, preds, imgs));
    }
  }
  return rows;
}

/// Re-reads a run's adversarial images with another model. Clean
/// predictions come from that model too.
inline ReportRow evaluate_transfer(const ModelWeights& source, const ModelWeights& target,
                                   const std::vector<CorpusItem>& corpus, const VariantRun& run) {
  if (!(source.charset == target.charset)) {
    throw std::invalid_argument("transfer target uses charset " + target.charset.id() +
                                ", source uses " + source.charset.id());
  }
  std::vector<ItemRecord> recs;
  std::vector<std::string> preds;
  std::vector<const Image*> imgs;
  for (const auto& rec : run.records) {
    ItemRecord r;
    r.item = rec.item;
    r.target = rec.target;
    r.time_s = rec.time_s;
    r.clean_prediction = recognize(target, corpus.at(rec.item).image);
    recs.push_back(std::move(r));
    preds.push_back(recognize(target, rec.adversarial));
    imgs.push_back(&rec.adversarial);
  }
  return summarize(run.name, "transfer", corpus, recs, preds, imgs);
}

namespace detail {

inline std::string fmt6(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline double parse6(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  return std::stod(s);
}

inline nlohmann::ordered_json json_number(double v) {
  if (!std::isfinite(v)) return nullptr;
  return std::stod(fmt6(v));
}

}  // namespace detail

inline constexpr const char* kReportHeader = "variant,defense,mse,psnr,ssim,asr_star,asr,time_s";

/// Noise columns average over targeted successes only. time_s is written
/// as 0 unless `with_timing`, so repeated runs give byte-identical files.
inline std::string report_csv(const std::vector<ReportRow>& rows, bool with_timing = false) {
  std::ostringstream out;
  out << kReportHeader << '\n';
  for (const auto& r : rows) {
    out << r.variant << ',' << r.defense << ',' << detail::fmt6(r.mse) << ','
        << detail::fmt6(r.psnr) << ',' << detail::fmt6(r.ssim) << ',' << detail::fmt6(r.asr_star)
        << ',' << detail::fmt6(r.asr) << ',' << detail::fmt6(with_timing ? r.time_s : 0.0) << '\n';
  }
  return out.str();
}

inline std::vector<ReportRow> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kReportHeader) {
    throw std::invalid_argument("report CSV: unexpected header");
  }
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    // GaussianBlur@3x3,0 carries a comma; numeric fields are the last six.
    if (f.size() < 8) throw std::invalid_argument("report CSV: short row '" + line + "'");
    ReportRow r;
    const std::size_t n = f.size();
    r.variant = f[0];
    r.defense = f[1];
    for (std::size_t i = 2; i < n - 6; ++i) r.defense += "," + f[i];
    r.mse = detail::parse6(f[n - 6]);
    r.psnr = detail::parse6(f[n - 5]);
    r.ssim = detail::parse6(f[n - 4]);
    r.asr_star = detail::parse6(f[n - 3]);
    r.asr = detail::parse6(f[n - 2]);
    r.time_s = detail::parse6(f[n - 1]);
    rows.push_back(r);
  }
  return rows;
}

inline nlohmann::ordered_json report_json(const std::vector<ReportRow>& rows, bool with_timing) {
  nlohmann::ordered_json j;
  j["noise_metrics"] = "averaged over targeted successes";
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    j["rows"].push_back({{"variant", r.variant},
                         {"defense", r.defense},
                         {"mse", detail::json_number(r.mse)},
                         {"psnr", detail::json_number(r.psnr)},
                         {"ssim", detail::json_number(r.ssim)},
                         {"asr_star", detail::json_number(r.asr_star)},
                         {"asr", detail::json_number(r.asr)},
                         {"time_s", detail::json_number(with_timing ? r.time_s : 0.0)},
                         {"items", r.items},
                         {"successes", r.successes}});
  }
  return j;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// report.csv, report.json and timing.csv (real wall times).
inline void write_report(const std::filesystem::path& dir, const std::vector<ReportRow>& rows,
                         bool with_timing = false) {
  std::filesystem::create_directories(dir);
  write_text(dir / "report.csv", report_csv(rows, with_timing));
  write_text(dir / "report.json", report_json(rows, with_timing).dump(2) + "\n");
  std::ostringstream t;
  t << "variant,defense,items,successes,time_s\n";
  for (const auto& r : rows) {
    t << r.variant << ',' << r.defense << ',' << r.items << ',' << r.successes << ','
      << detail::fmt6(r.time_s) << '\n';
  }
  write_text(dir / "timing.csv", t.str());
}

inline nlohmann::ordered_json record_sidecar(const VariantRun& run, const ItemRecord& rec,
                                             const CorpusItem& item) {
  nlohmann::ordered_json j = {{"variant", run.name},
                              {"item", rec.item},
                              {"original", item.original},
                              {"target", rec.target},
                              {"kind", edit_kind_name(item.kind)},
                              {"clean_prediction", rec.clean_prediction},
                              {"prediction", rec.prediction},
                              {"targeted_success", rec.prediction == rec.target},
                              {"untargeted_success", rec.prediction != rec.clean_prediction},
                              {"iterations", rec.iterations},
                              {"wall_time_s", rec.time_s},
                              {"mse", detail::json_number(rec.quality.mse)},
                              {"psnr", detail::json_number(rec.quality.psnr)},
                              {"psnr_8bit", detail::json_number(rec.quality.psnr_8bit)},
                              {"ssim", detail::json_number(rec.quality.ssim)},
                              {"loss_trace", rec.loss_trace}};
  if (!rec.error.empty()) j["error"] = rec.error;
  return j;
}

/// adversarial/<run>/<item>.{pgm,f64,mask.pgm,json}, written in (run, item)
/// order, plus adversarial/index.json listing the runs in order.
inline void write_adversarial(const std::filesystem::path& dir, const std::vector<VariantRun>& runs,
                              const std::vector<CorpusItem>& corpus) {
  nlohmann::ordered_json index = nlohmann::ordered_json::array();
  for (const auto& run : runs) {
    const auto vdir = dir / "adversarial" / run.name;
    std::filesystem::create_directories(vdir);
    index.push_back({{"name", run.name}, {"variant", variant_name(run.variant)}});
    for (const auto& rec : run.records) {
      char stem[32];
      std::snprintf(stem, sizeof stem, "%04zu", rec.item);
      write_pgm(vdir / (std::string(stem) + ".pgm"), rec.adversarial);
      write_f64(vdir / (std::string(stem) + ".f64"), rec.adversarial);
      write_pgm(vdir / (std::string(stem) + ".mask.pgm"), rec.mask);
      write_text(vdir / (std::string(stem) + ".json"),
                 record_sidecar(run, rec, corpus.at(rec.item)).dump(2) + "\n");
    }
  }
  std::filesystem::create_directories(dir / "adversarial");
  write_text(dir / "adversarial" / "index.json", index.dump(2) + "\n");
}

/// Inverse of write_adversarial for the corpus the runs were made on.
inline std::vector<VariantRun> read_adversarial(const std::filesystem::path& dir,
                                                const std::vector<CorpusItem>& corpus) {
  const auto index = nlohmann::json::parse(read_text(dir / "adversarial" / "index.json"));
  std::vector<VariantRun> runs;
  for (const auto& entry : index) {
    VariantRun run;
    run.name = entry.at("name").get<std::string>();
    run.variant = parse_variant(entry.at("variant").get<std::string>());
    const auto vdir = dir / "adversarial" / run.name;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      char stem[32];
      std::snprintf(stem, sizeof stem, "%04zu", i);
      const auto side = nlohmann::json::parse(read_text(vdir / (std::string(stem) + ".json")));
      ItemRecord rec;
      rec.item = i;
      rec.adversarial = read_f64(vdir / (std::string(stem) + ".f64"));
      rec.mask = read_mask_pgm(vdir / (std::string(stem) + ".mask.pgm"));
      rec.clean_prediction = side.at("clean_prediction").get<std::string>();
      rec.prediction = side.at("prediction").get<std::string>();
      rec.target = side.at("target").get<std::string>();
      rec.iterations = side.at("iterations").get<int>();
      rec.time_s = side.at("wall_time_s").get<double>();
      rec.loss_trace = side.at("loss_trace").get<std::vector<double>>();
      if (side.contains("error")) rec.error = side.at("error").get<std::string>();
      rec.quality = quality(corpus[i].image, rec.adversarial);
      run.records.push_back(std::move(rec));
    }
    runs.push_back(std::move(run));
  }
  return runs;
}

/// Concatenates report CSVs, keeping the first row for each
/// (variant, defense) and sorting by that key.
inline std::vector<ReportRow> merge_reports(const std::vector<std::vector<ReportRow>>& parts) {
  std::map<std::pair<std::string, std::string>, ReportRow> keyed;
  for (const auto& part : parts) {
    for (const auto& r : part) keyed.emplace(std::make_pair(r.variant, r.defense), r);
  }
  std::vector<ReportRow> out;
  for (auto& [k, r] : keyed) out.push_back(r);
  return out;
}

// ---------------------------------------------------------------- full run

struct ExperimentSpec {
  std::filesystem::path source_weights;
  std::filesystem::path transfer_weights;  // optional
  CorpusSpec corpus;
  std::vector<std::string> variants = {"FGSM", "BIM", "MIM", "WM", "WM_INIT", "WM_NEG", "WM_EDGE"};
  std::vector<std::string> defenses = {"none", "AvgBlur@2x2", "MedianBlur@3x3",
                                       "GaussianBlur@3x3,0", "SaltPepper@2%", "Compress@20",
                                       "Inpaint@2"};
  AttackConfig attack;
  std::filesystem::path out_dir;
  std::uint64_t seed = 1;
  bool report_timing = false;
  bool write_images = true;

  /// Keys: source_weights, transfer_weights, out, seed, count,
  /// pair_threshold, templates (comma list), deletion_fraction,
  /// insertion_fraction, variants, defenses (';' separated), report_timing,
  /// write_images, plus every attack key.
  static ExperimentSpec from_kv(const KeyValues& kv) {
    ExperimentSpec s;
    s.source_weights = kv.get("source_weights", "");
    s.transfer_weights = kv.get("transfer_weights", "");
    s.out_dir = kv.get("out", "");
    s.seed = kv.get_u64("seed", s.seed);
    s.corpus.seed = s.seed;
    s.corpus.count = static_cast<std::size_t>(kv.get_int("count", static_cast<long long>(s.corpus.count)));
    s.corpus.pair_threshold = kv.get_double("pair_threshold", s.corpus.pair_threshold);
    s.corpus.templates = kv.get_list("templates", s.corpus.templates);
    s.corpus.deletion_fraction = kv.get_double("deletion_fraction", s.corpus.deletion_fraction);
    s.corpus.insertion_fraction = kv.get_double("insertion_fraction", s.corpus.insertion_fraction);
    s.variants = kv.get_list("variants", s.variants);
    if (kv.has("defenses")) {
      s.defenses.clear();
      std::stringstream ss(kv.get("defenses", ""));
      std::string d;
      while (std::getline(ss, d, ';')) {
        d.erase(0, d.find_first_not_of(" \t"));
        d.erase(d.find_last_not_of(" \t") + 1);
        if (!d.empty()) s.defenses.push_back(d);
      }
    }
    s.report_timing = kv.get_bool("report_timing", s.report_timing);
    s.write_images = kv.get_bool("write_images", s.write_images);
    s.attack = AttackConfig::from_kv(kv);
    s.validate();
    return s;
  }

  void validate() const {
    if (corpus.count < 1) throw std::invalid_argument("count must be >= 1");
    if (source_weights.empty()) throw std::invalid_argument("source_weights is required");
    if (!std::filesystem::exists(source_weights)) {
      throw std::invalid_argument("source weights not found: " + source_weights.string());
    }
    if (!transfer_weights.empty() && !std::filesystem::exists(transfer_weights)) {
      throw std::invalid_argument("transfer weights not found: " + transfer_weights.string());
    }
    for (const auto& v : variants) parse_variant(v);
    for (const auto& d : defenses) parse_defense(d);
  }
};

struct ExperimentResult {
  std::vector<CorpusItem> corpus;
  std::vector<VariantRun> runs;
  std::vector<ReportRow> rows;           // attack rows x defenses
  std::vector<ReportRow> transfer_rows;  // empty without a transfer model
};

/// Corpus, WM0 + variants, defense table and optional transfer table.
/// Rows are ordered by run then defense list order.
inline ExperimentResult run_experiment(const ExperimentSpec& spec, const ModelWeights& source,
                                       const ModelWeights* transfer = nullptr) {
  ExperimentResult res;
  const FontAtlas atlas;
  CorpusSpec cs = spec.corpus;
  cs.seed = spec.seed;
  res.corpus = build_corpus(cs, source.charset, atlas, &source);
  res.runs = evaluate_attacks(source, res.corpus, spec.variants, spec.attack);
  std::vector<std::string> defenses = spec.defenses;
  if (std::find(defenses.begin(), defenses.end(), "none") == defenses.end()) {
    defenses.insert(defenses.begin(), "none");
  }
  res.rows = evaluate_defenses(source, res.corpus, res.runs, defenses, spec.seed);
  if (transfer) {
    for (const auto& run : res.runs) {
      res.transfer_rows.push_back(evaluate_transfer(source, *transfer, res.corpus, run));
    }
  }
  if (!spec.out_dir.empty()) {
    write_report(spec.out_dir, res.rows, spec.report_timing);
    if (transfer) write_report(spec.out_dir / "transfer", res.transfer_rows, spec.report_timing);
    if (spec.write_images) write_adversarial(spec.out_dir, res.runs, res.corpus);
  }
  return res;
}

}  // namespace wmocr
