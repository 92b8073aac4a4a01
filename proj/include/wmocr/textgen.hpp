#pragma once

// Synthetic text-line rendering from the embedded bitmap font, dataset
// construction, watermark and text-edge masks, watermark pasting and
// confusable-pair mining.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "wmocr/charset.hpp"
#include "wmocr/filters.hpp"
#include "wmocr/font5x7.hpp"
#include "wmocr/image.hpp"

namespace wmocr {

/// Default ink/paper split; rendered text sits near 0 and paper near 1, so
/// the midpoint separates them under +-0.05 gray jitter.
inline constexpr double kDefaultTau = 0.5;

// Defaults give 5-px glyphs on an 8-px advance: two timesteps per glyph,
// and the model's 10-px receptive field covers the whole glyph from both.
// Wider glyphs leave some columns unseen at some timesteps, and training
// then stalls with look-alike classes (8/B, I/l) merged.
class FontAtlas {
 public:
  explicit FontAtlas(int scale = 1, int spacing = 3, int line_height = 32)
      : scale_(scale), spacing_(spacing), line_height_(line_height) {
    if (scale < 1 || spacing < 0) throw std::invalid_argument("bad atlas metrics");
    for (const auto& [ch, rows] : kFont5x7) glyphs_[static_cast<unsigned char>(ch)] = rows;
  }

  int scale() const { return scale_; }
  int spacing() const { return spacing_; }
  int line_height() const { return line_height_; }
  int glyph_width() const { return kGlyphCols * scale_; }
  int glyph_height() const { return kGlyphRows * scale_; }
  int advance() const { return glyph_width() + spacing_; }

  bool has_glyph(char c) const {
    return glyphs_[static_cast<unsigned char>(c)].has_value();
  }

  const GlyphRows& glyph(char c) const {
    const auto& g = glyphs_[static_cast<unsigned char>(c)];
    if (!g) {
      throw std::invalid_argument(std::string("no glyph for character '") + c + "'");
    }
    return *g;
  }

  // Font-unit pixel of glyph `c` at (row, col), col 0 leftmost.
  bool bit(char c, int row, int col) const {
    return (glyph(c)[static_cast<std::size_t>(row)] >> (kGlyphCols - 1 - col)) & 1u;
  }

  int ink_count(char c) const {
    int n = 0;
    for (int r = 0; r < kGlyphRows; ++r) {
      for (int col = 0; col < kGlyphCols; ++col) n += bit(c, r, col);
    }
    return n;
  }

  // Width of a rendered line holding `n` glyphs, padded to a multiple of 4.
  int line_width(std::size_t n) const {
    const int raw = static_cast<int>(n) * advance();
    return (raw + 3) / 4 * 4;
  }

 private:
  int scale_;
  int spacing_;
  int line_height_;
  std::array<std::optional<GlyphRows>, 256> glyphs_{};
};

struct WatermarkSpec {
  std::string text = "DRAFT";
  // Scale 4 gives 28-px glyphs, the largest that fits a 32-px line.
  int scale = 4;
  // Center of the watermark in image coordinates; image center when unset.
  std::optional<std::pair<double, double>> anchor;
  // Dilation applied to the glyph coverage so strokes form one region.
  int dilation = 1;
};

/// Dilated glyph coverage of the watermark text, centered on the anchor.
inline Mask watermark_mask(const WatermarkSpec& spec, int height, int width) {
  if (spec.text.empty()) throw std::invalid_argument("watermark text is empty");
  const FontAtlas atlas(spec.scale, 2);
  const int pad = spec.dilation;
  const int gw = static_cast<int>(spec.text.size()) * atlas.advance() - atlas.spacing();
  const int gh = atlas.glyph_height();
  Mask local(gh + 2 * pad, gw + 2 * pad);
  for (std::size_t i = 0; i < spec.text.size(); ++i) {
    const char c = spec.text[i];
    const int x0 = pad + static_cast<int>(i) * atlas.advance();
    for (int r = 0; r < kGlyphRows; ++r) {
      for (int col = 0; col < kGlyphCols; ++col) {
        if (!atlas.bit(c, r, col)) continue;
        for (int dy = 0; dy < spec.scale; ++dy) {
          for (int dx = 0; dx < spec.scale; ++dx) {
            local.set(pad + r * spec.scale + dy, x0 + col * spec.scale + dx, true);
          }
        }
      }
    }
  }
  if (pad > 0) local = dilate(local, pad);

  if (local.height > height || local.width > width) {
    throw std::invalid_argument("watermark '" + spec.text + "' needs at least " +
                                std::to_string(local.height) + "x" +
                                std::to_string(local.width) + " px, image is " +
                                std::to_string(height) + "x" + std::to_string(width));
  }
  const double cy = spec.anchor ? spec.anchor->first : height / 2.0;
  const double cx = spec.anchor ? spec.anchor->second : width / 2.0;
  const int top = static_cast<int>(std::floor(cy - local.height / 2.0));
  const int left = static_cast<int>(std::floor(cx - local.width / 2.0));
  if (top < 0 || left < 0 || top + local.height > height || left + local.width > width) {
    throw std::invalid_argument("watermark does not fit at the requested anchor");
  }
  Mask m(height, width);
  for (int r = 0; r < local.height; ++r) {
    for (int c = 0; c < local.width; ++c) {
      if (local.at(r, c)) m.set(top + r, left + c, true);
    }
  }
  return m;
}

/// One-pixel shell around dark strokes: pixels brighter than tau whose 3x3
/// erosion (min filter) is at most tau.
inline Mask edge_mask(const Image& img, double tau = kDefaultTau) {
  const Image eroded = erode(img, 3, 3);
  Mask m(img.height, img.width);
  for (std::size_t i = 0; i < img.size(); ++i) {
    m.on[i] = (eroded.px[i] <= tau && img.px[i] > tau) ? 1 : 0;
  }
  return m;
}

/// Sets paper pixels (value > tau) inside the mask to gray `lambda`; ink and
/// everything outside the mask are left as they are.
inline Image paste_watermark(const Image& img, const Mask& mask, double lambda,
                             double tau = kDefaultTau) {
  require_same_dims(img, mask, "paste_watermark");
  if (!(lambda > 0.0 && lambda < 1.0)) {
    throw std::invalid_argument("paste_watermark: lambda must lie in (0,1)");
  }
  Image out = img;
  for (std::size_t i = 0; i < img.size(); ++i) {
    if (mask.on[i] && img.px[i] > tau) out.px[i] = lambda;
  }
  return out;
}

struct LineSpec {
  std::string text;
  double foreground = 0.0;
  double background = 1.0;
  // When set: baseline shift in {-1,0,1} px and +-0.05 gray jitter on both
  // foreground and background.
  std::optional<std::uint64_t> jitter_seed = std::nullopt;
  // When set: a random gray stamp pasted over the line (random_watermark).
  std::optional<std::uint64_t> watermark_seed = std::nullopt;
};

struct RandomWatermark {
  WatermarkSpec spec;
  double gray = 0.3;
};

/// 1-6 capitals at scale 2-4, shrunk until they fit, placed uniformly in
/// the image, gray in [0.3, 0.85]. Nothing when even one scale-2 glyph
/// does not fit.
inline std::optional<RandomWatermark> random_watermark(std::uint64_t seed, int height, int width) {
  std::mt19937_64 rng(seed);
  RandomWatermark wm;
  int scale = std::uniform_int_distribution<int>(2, 4)(rng);
  int n = std::uniform_int_distribution<int>(1, 6)(rng);
  auto box_w = [&] { return n * (kGlyphCols * scale + 2) - 2 + 2 * wm.spec.dilation; };
  auto box_h = [&] { return kGlyphRows * scale + 2 * wm.spec.dilation; };
  while (box_w() > width || box_h() > height) {
    if (n > 1) {
      --n;
    } else if (scale > 2) {
      --scale;
    } else {
      return std::nullopt;
    }
  }
  std::uniform_int_distribution<int> letter(0, 25);
  wm.spec.text.clear();
  for (int i = 0; i < n; ++i) wm.spec.text.push_back(static_cast<char>('A' + letter(rng)));
  wm.spec.scale = scale;
  const int top = std::uniform_int_distribution<int>(0, height - box_h())(rng);
  const int left = std::uniform_int_distribution<int>(0, width - box_w())(rng);
  wm.spec.anchor = std::make_pair(top + box_h() / 2.0, left + box_w() / 2.0);
  wm.gray = std::uniform_real_distribution<double>(0.3, 0.85)(rng);
  return wm;
}

inline Image render_line(const LineSpec& spec, const FontAtlas& atlas) {
  if (spec.text.empty()) throw std::invalid_argument("render_line: empty text");
  if (!(spec.foreground < spec.background)) {
    throw std::invalid_argument("render_line: foreground must be darker than background");
  }
  for (char c : spec.text) atlas.glyph(c);

  double fg = spec.foreground, bg = spec.background;
  int shift = 0;
  if (spec.jitter_seed) {
    std::mt19937_64 rng(*spec.jitter_seed);
    std::uniform_int_distribution<int> shift_dist(-1, 1);
    std::uniform_real_distribution<double> gray(-0.05, 0.05);
    shift = shift_dist(rng);
    fg = std::clamp(fg + gray(rng), 0.0, 1.0);
    bg = std::clamp(bg + gray(rng), 0.0, 1.0);
  }

  const int s = atlas.scale();
  Image img(atlas.line_height(), atlas.line_width(spec.text.size()), bg);
  const int top = (atlas.line_height() - atlas.glyph_height()) / 2 + shift;
  int x0 = atlas.spacing() / 2;
  for (char c : spec.text) {
    for (int r = 0; r < kGlyphRows; ++r) {
      for (int col = 0; col < kGlyphCols; ++col) {
        if (!atlas.bit(c, r, col)) continue;
        for (int dy = 0; dy < s; ++dy) {
          const int y = top + r * s + dy;
          if (y < 0 || y >= img.height) continue;
          for (int dx = 0; dx < s; ++dx) img.at(y, x0 + col * s + dx) = fg;
        }
      }
    }
    x0 += atlas.advance();
  }
  if (spec.watermark_seed) {
    if (const auto wm = random_watermark(*spec.watermark_seed, img.height, img.width)) {
      img = paste_watermark(img, watermark_mask(wm->spec, img.height, img.width), wm->gray);
    }
  }
  return img;
}

// Random strings over `charset` with no leading, trailing or doubled spaces.
inline std::vector<std::string> random_texts(const Charset& charset,
                                             std::size_t count, int min_len,
                                             int max_len, std::uint64_t seed) {
  if (min_len < 1 || max_len < min_len) throw std::invalid_argument("bad length range");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> len_dist(min_len, max_len);
  std::uniform_int_distribution<std::size_t> ch_dist(0, charset.size() - 1);
  std::vector<std::string> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const int n = len_dist(rng);
    std::string s;
    while (static_cast<int>(s.size()) < n) {
      const char c = charset.at(static_cast<int>(ch_dist(rng)));
      const bool edge = s.empty() || static_cast<int>(s.size()) == n - 1;
      if (c == ' ' && (edge || s.back() == ' ')) continue;
      s.push_back(c);
    }
    out.push_back(std::move(s));
  }
  return out;
}

struct DatasetItem {
  std::string text;
  LineSpec spec;
  bool validation = false;
};

/// Rendering is deferred: items carry their LineSpec and are rendered on use.
struct Dataset {
  std::vector<DatasetItem> items;

  std::vector<std::size_t> indices(bool validation) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (items[i].validation == validation) out.push_back(i);
    }
    return out;
  }
};

inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// `count` jittered lines cycling through `corpus`. Item i is jittered with
/// seed ^ i; a `watermark_fraction` share of items (chosen by hash) also get
/// a random watermark. Exactly count/10 items go to validation: those with
/// the smallest hash of (text, seed, index).
inline Dataset build_dataset(const std::vector<std::string>& corpus,
                             std::size_t count, std::uint64_t seed,
                             double watermark_fraction = 0.0) {
  if (corpus.empty()) throw std::invalid_argument("build_dataset: empty corpus");
  Dataset ds;
  ds.items.reserve(count);
  std::vector<std::pair<std::uint64_t, std::size_t>> keys;
  keys.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    DatasetItem item;
    item.text = corpus[i % corpus.size()];
    item.spec.text = item.text;
    item.spec.jitter_seed = seed ^ i;
    const std::uint64_t wm_key = mix64(mix64(seed) ^ mix64(~i));
    if (static_cast<double>(wm_key >> 11) * 0x1.0p-53 < watermark_fraction) {
      item.spec.watermark_seed = wm_key;
    }
    ds.items.push_back(std::move(item));
    keys.emplace_back(mix64(fnv1a64(ds.items.back().text) ^ mix64(seed) ^ mix64(i + 1)), i);
  }
  std::sort(keys.begin(), keys.end());
  for (std::size_t k = 0; k < count / 10; ++k) ds.items[keys[k].second].validation = true;
  return ds;
}

/// Dataset layout: one P5 PGM per item plus manifest.jsonl lines
/// {"file", "text", "split"}.
inline void write_dataset(const Dataset& ds, const FontAtlas& atlas,
                          const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir.string());
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.pgm", i);
    write_pgm(dir / name, render_line(ds.items[i].spec, atlas));
    nlohmann::ordered_json line = {{"file", name},
                                   {"text", ds.items[i].text},
                                   {"split", ds.items[i].validation ? "val" : "train"}};
    manifest << line.dump() << '\n';
  }
}

struct LoadedSample {
  Image image;
  std::string text;
  bool validation = false;
};

inline std::vector<LoadedSample> read_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw std::runtime_error("no manifest.jsonl in " + dir.string());
  std::vector<LoadedSample> out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    out.push_back({read_pgm(dir / j.at("file").get<std::string>()),
                   j.at("text").get<std::string>(),
                   j.at("split").get<std::string>() == "val"});
  }
  return out;
}

struct ConfusablePair {
  char a;
  char b;
  double similarity;
};

/// Glyph similarity: 1 - (differing font pixels / 35).
inline double glyph_similarity(const FontAtlas& atlas, char a, char b) {
  int diff = 0;
  for (int r = 0; r < kGlyphRows; ++r) {
    for (int c = 0; c < kGlyphCols; ++c) diff += atlas.bit(a, r, c) != atlas.bit(b, r, c);
  }
  return 1.0 - static_cast<double>(diff) / (kGlyphRows * kGlyphCols);
}

/// Unordered pairs of inked glyphs with similarity > threshold, most
/// similar first (ties in charset order).
inline std::vector<ConfusablePair> mine_confusable_pairs(const Charset& charset,
                                                         const FontAtlas& atlas,
                                                         double threshold) {
  if (charset.size() < 2) throw std::invalid_argument("need at least two characters");
  std::vector<ConfusablePair> out;
  for (std::size_t i = 0; i < charset.size(); ++i) {
    const char a = charset.at(static_cast<int>(i));
    if (atlas.ink_count(a) == 0) continue;
    for (std::size_t j = i + 1; j < charset.size(); ++j) {
      const char b = charset.at(static_cast<int>(j));
      if (atlas.ink_count(b) == 0) continue;
      const double s = glyph_similarity(atlas, a, b);
      if (s > threshold) out.push_back({a, b, s});
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& x, const auto& y) {
    return x.similarity > y.similarity;
  });
  return out;
}

}  // namespace wmocr
