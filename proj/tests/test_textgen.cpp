#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "wmocr/textgen.hpp"

using namespace wmocr;

namespace {

// Glyph pixel count straight from the row bitmaps.
int popcount_glyph(char c) {
  for (const auto& [ch, rows] : kFont5x7) {
    if (ch != c) continue;
    int n = 0;
    for (auto r : rows) n += __builtin_popcount(r);
    return n;
  }
  return -1;
}

}  // namespace

TEST(Font, CoversCharsetsWithDistinctGlyphs) {
  const FontAtlas atlas;
  for (const Charset& cs : {Charset::main(), Charset::oracle16()}) {
    for (char c : cs.chars()) {
      EXPECT_TRUE(atlas.has_glyph(c)) << c;
      // Space is the one glyph without ink.
      if (c != ' ') {
        EXPECT_GT(atlas.ink_count(c), 0) << c;
      }
    }
  }
  std::set<GlyphRows> seen;
  for (const auto& [ch, rows] : kFont5x7) seen.insert(rows);
  EXPECT_EQ(seen.size(), kFont5x7.size());
}

TEST(RenderLine, SingleGlyphMetrics) {
  const Image img = render_line({"A"}, FontAtlas());
  EXPECT_EQ(img.height, 32);
  EXPECT_EQ(img.width, 8);
  EXPECT_EQ(*std::min_element(img.px.begin(), img.px.end()), 0.0);
  EXPECT_EQ(*std::max_element(img.px.begin(), img.px.end()), 1.0);
  // Scale 1: one image pixel per font pixel.
  EXPECT_EQ(std::count(img.px.begin(), img.px.end(), 0.0), popcount_glyph('A'));
}

TEST(RenderLine, WidthIsMultipleOfFour) {
  const FontAtlas atlas;
  for (std::size_t n = 1; n <= 12; ++n) {
    const Image img = render_line({std::string(n, 'x')}, atlas);
    EXPECT_EQ(img.width % 4, 0);
    EXPECT_GE(img.width, static_cast<int>(n) * atlas.advance());
    EXPECT_LT(img.width, static_cast<int>(n) * atlas.advance() + 4);
  }
}

TEST(RenderLine, Errors) {
  const FontAtlas atlas;
  EXPECT_THROW(render_line({""}, atlas), std::invalid_argument);
  EXPECT_THROW(render_line({"a~b"}, atlas), std::invalid_argument);
  LineSpec inverted{"A", 0.9, 0.1, std::nullopt};
  EXPECT_THROW(render_line(inverted, atlas), std::invalid_argument);
}

TEST(RenderLine, JitterIsDeterministicAndTwoValued) {
  const FontAtlas atlas;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    LineSpec s{"Pay 4.00 ok", 0.0, 1.0, seed};
    const Image a = render_line(s, atlas), b = render_line(s, atlas);
    EXPECT_EQ(a, b);
    std::set<double> values(a.px.begin(), a.px.end());
    ASSERT_EQ(values.size(), 2u);
    EXPECT_LE(*values.begin(), 0.05);
    EXPECT_GE(*values.rbegin(), 0.95);
  }
}

TEST(RandomTexts, NoStraySpaces) {
  const auto texts = random_texts(Charset::main(), 2000, 2, 8, 5);
  for (const auto& t : texts) {
    ASSERT_GE(t.size(), 2u);
    ASSERT_LE(t.size(), 8u);
    EXPECT_NE(t.front(), ' ');
    EXPECT_NE(t.back(), ' ');
    EXPECT_EQ(t.find("  "), std::string::npos);
  }
}

TEST(BuildDataset, SplitArithmetic) {
  const auto texts = random_texts(Charset::main(), 500, 2, 8, 1);
  const Dataset ds = build_dataset(texts, 20000, 3);
  EXPECT_EQ(ds.indices(false).size(), 18000u);
  EXPECT_EQ(ds.indices(true).size(), 2000u);
  EXPECT_TRUE(build_dataset(texts, 0, 3).items.empty());
  EXPECT_THROW(build_dataset({}, 10, 3), std::invalid_argument);
}

TEST(BuildDataset, DuplicateTextsGetDistinctJitter) {
  const Dataset ds = build_dataset({"AB"}, 40, 9);
  std::set<std::vector<double>> images;
  const FontAtlas atlas;
  for (const auto& it : ds.items) images.insert(render_line(it.spec, atlas).px);
  EXPECT_GT(images.size(), 10u);
}

TEST(BuildDataset, WatermarkFractionAndDeterminism) {
  const auto texts = random_texts(Charset::main(), 300, 2, 10, 5);
  EXPECT_EQ(build_dataset(texts, 2000, 4).items[0].spec.watermark_seed, std::nullopt);
  const Dataset a = build_dataset(texts, 2000, 4, 0.5), b = build_dataset(texts, 2000, 4, 0.5);
  std::size_t marked = 0;
  for (std::size_t i = 0; i < a.items.size(); ++i) {
    EXPECT_EQ(a.items[i].spec.watermark_seed, b.items[i].spec.watermark_seed);
    marked += a.items[i].spec.watermark_seed.has_value();
  }
  // Binomial(2000, 0.5): 4 standard deviations is about 90.
  EXPECT_NEAR(static_cast<double>(marked), 1000.0, 90.0);
  std::size_t all = 0;
  for (const auto& it : build_dataset(texts, 200, 4, 1.0).items) all += it.spec.watermark_seed.has_value();
  EXPECT_EQ(all, 200u);
}

TEST(RandomWatermark, FitsAndStampsOnlyPaper) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const int width = 16 + 8 * static_cast<int>(seed % 15);
    const auto wm = random_watermark(seed, 32, width);
    ASSERT_TRUE(wm.has_value()) << width;
    EXPECT_GE(wm->gray, 0.3);
    EXPECT_LE(wm->gray, 0.85);
    EXPECT_GE(wm->spec.scale, 2);
    EXPECT_LE(wm->spec.scale, 4);
    EXPECT_NO_THROW(watermark_mask(wm->spec, 32, width));
  }
  // One dilated scale-2 glyph needs 12 px.
  EXPECT_FALSE(random_watermark(1, 32, 11).has_value());
  EXPECT_TRUE(random_watermark(1, 32, 12).has_value());

  LineSpec plain{"Gate 8B open now", 0.0, 1.0, std::nullopt};
  LineSpec marked = plain;
  marked.watermark_seed = 42;
  const Image x = render_line(plain, FontAtlas()), y = render_line(marked, FontAtlas());
  const auto wm = random_watermark(42, x.height, x.width);
  ASSERT_TRUE(wm.has_value());
  EXPECT_EQ(y, paste_watermark(x, watermark_mask(wm->spec, x.height, x.width), wm->gray));
  std::size_t changed = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x.px[i] == 0.0) {
      EXPECT_EQ(y.px[i], 0.0);
    }
    changed += y.px[i] != x.px[i];
  }
  EXPECT_GT(changed, 0u);
}

TEST(BuildDataset, WriteAndReadBack) {
  const auto dir = std::filesystem::temp_directory_path() / "wmocr_dataset_test";
  std::filesystem::remove_all(dir);
  const Dataset ds = build_dataset({"Gate 4B", "x.y"}, 20, 2);
  write_dataset(ds, FontAtlas(), dir);
  const auto back = read_dataset(dir);
  ASSERT_EQ(back.size(), 20u);
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].text, ds.items[i].text);
    EXPECT_EQ(back[i].validation, ds.items[i].validation);
    EXPECT_EQ(back[i].image.width, FontAtlas().line_width(ds.items[i].text.size()));
  }
  std::filesystem::remove_all(dir);
}

TEST(WatermarkMask, SingleBarOnSquare) {
  WatermarkSpec spec;
  spec.text = "I";
  const Mask m = watermark_mask(spec, 32, 32);
  // Dilate the scaled glyph independently: count pixels within Chebyshev
  // distance 1 of a scaled ink pixel on a padded canvas.
  const FontAtlas atlas(spec.scale);
  const int gh = 7 * spec.scale + 2, gw = 5 * spec.scale + 2;
  std::size_t want = 0;
  for (int r = 0; r < gh; ++r)
    for (int c = 0; c < gw; ++c) {
      bool hit = false;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const int fr = (r + dr - 1), fc = (c + dc - 1);
          if (fr < 0 || fc < 0 || fr >= 7 * spec.scale || fc >= 5 * spec.scale) continue;
          hit = hit || atlas.bit('I', fr / spec.scale, fc / spec.scale);
        }
      want += hit;
    }
  EXPECT_EQ(m.area(), want);
  for (int i = 0; i < 32; ++i) {
    EXPECT_FALSE(m.at(0, i));
    EXPECT_FALSE(m.at(31, i));
    EXPECT_FALSE(m.at(i, 0));
    EXPECT_FALSE(m.at(i, 31));
  }
}

TEST(WatermarkMask, AreaIndependentOfWidthAndFitCheck) {
  const WatermarkSpec spec;
  const std::size_t a = watermark_mask(spec, 32, 112).area();
  EXPECT_GT(a, 0u);
  for (int w : {120, 160, 200, 256}) EXPECT_EQ(watermark_mask(spec, 32, w).area(), a);
  try {
    watermark_mask(spec, 32, 100);
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("30x110"), std::string::npos) << e.what();
  }
  WatermarkSpec big;
  big.scale = 6;
  EXPECT_THROW(watermark_mask(big, 32, 400), std::invalid_argument);
}

TEST(EdgeMask, SingleDarkPixel) {
  Image img(5, 5, 1.0);
  img.at(2, 2) = 0.0;
  const Mask m = edge_mask(img, 0.5);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c) {
      const bool ring = std::max(std::abs(r - 2), std::abs(c - 2)) == 1;
      EXPECT_EQ(m.at(r, c), ring) << r << "," << c;
    }
  EXPECT_TRUE(edge_mask(Image(6, 6, 1.0)).empty());
}

TEST(EdgeMask, DisjointFromTextOnRenderedLines) {
  const FontAtlas atlas;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Image img = render_line({"Key a7c X", 0.0, 1.0, seed}, atlas);
    const Mask m = edge_mask(img, kDefaultTau);
    EXPECT_FALSE(m.empty());
    for (std::size_t i = 0; i < img.size(); ++i) {
      if (m.on[i]) {
        ASSERT_GT(img.px[i], kDefaultTau);
      }
    }
  }
}

TEST(PasteWatermark, GatesOnBackgroundAndIsIdempotent) {
  Image img(1, 3, 1.0);
  img.px[1] = 0.0;
  Mask m(1, 3, true);
  m.set(0, 2, false);
  const Image out = paste_watermark(img, m, 0.3);
  EXPECT_EQ(out.px[0], 0.3);
  EXPECT_EQ(out.px[1], 0.0);
  EXPECT_EQ(out.px[2], 1.0);
  EXPECT_EQ(paste_watermark(out, m, 0.3), out);
  EXPECT_THROW(paste_watermark(img, m, 0.0), std::invalid_argument);
  EXPECT_THROW(paste_watermark(img, Mask(2, 3), 0.3), std::invalid_argument);

  const Image line = render_line({"Lot 4xA west end", 0.0, 1.0, 3}, FontAtlas());
  const Mask wm = watermark_mask(WatermarkSpec{}, line.height, line.width);
  const Image once = paste_watermark(line, wm, 0.3);
  EXPECT_EQ(paste_watermark(once, wm, 0.3), once);
}

TEST(ConfusablePairs, HammingSimilarity) {
  const FontAtlas atlas;
  EXPECT_EQ(glyph_similarity(atlas, 'Q', 'Q'), 1.0);
  // Oracle: count differing bits between the raw glyph rows.
  auto rows_of = [](char c) {
    for (const auto& [ch, rows] : kFont5x7)
      if (ch == c) return rows;
    return GlyphRows{};
  };
  auto oracle = [&](char a, char b) {
    int diff = 0;
    for (int r = 0; r < 7; ++r) diff += __builtin_popcount(rows_of(a)[r] ^ rows_of(b)[r]);
    return 1.0 - diff / 35.0;
  };
  EXPECT_DOUBLE_EQ(glyph_similarity(atlas, 'O', '0'), oracle('O', '0'));
  EXPECT_GT(glyph_similarity(atlas, 'O', '0'), glyph_similarity(atlas, 'O', 'X'));

  const auto pairs = mine_confusable_pairs(Charset::main(), atlas, 0.8);
  ASSERT_FALSE(pairs.empty());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    EXPECT_GT(pairs[i].similarity, 0.8);
    EXPECT_NE(pairs[i].a, ' ');
    EXPECT_NE(pairs[i].b, ' ');
    EXPECT_DOUBLE_EQ(pairs[i].similarity, oracle(pairs[i].a, pairs[i].b));
    if (i > 0) {
      EXPECT_GE(pairs[i - 1].similarity, pairs[i].similarity);
    }
  }
  EXPECT_TRUE(mine_confusable_pairs(Charset::main(), atlas, 1.1).empty());
  EXPECT_THROW(mine_confusable_pairs(Charset("one", "A"), atlas, 0.5), std::invalid_argument);
}
