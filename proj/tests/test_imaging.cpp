#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "wmocr/filters.hpp"
#include "wmocr/inpaint.hpp"
#include "wmocr/jpeg.hpp"
#include "wmocr/metrics.hpp"
#include "wmocr/textgen.hpp"

using namespace wmocr;

namespace {

Image random_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(h, w);
  for (double& v : img.px) v = u(rng);
  return img;
}

Image textured(int h, int w) {
  Image img(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) img.at(r, c) = 0.5 + 0.4 * std::sin(0.7 * r) * std::cos(0.45 * c);
  return img;
}

Image rendered(const std::string& text) { return render_line({text}, FontAtlas()); }

bool in_unit_range(const Image& img) {
  return std::all_of(img.px.begin(), img.px.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
}

}  // namespace

TEST(Mse, HandArithmetic) {
  Image a(2, 1, 0.0), b(2, 1, 0.0);
  b.px[0] = 1.0;
  EXPECT_DOUBLE_EQ(mse(a, b), 0.5);
  EXPECT_EQ(mse(a, a), 0.0);
  const Image x = random_image(4, 5, 1);
  Image y = x;
  for (double& v : y.px) v += 0.1;
  EXPECT_NEAR(mse(x, y), 0.01, 1e-15);
  EXPECT_THROW(mse(Image(2, 2), Image(2, 3)), std::invalid_argument);
}

TEST(Psnr, Values) {
  const Image x = random_image(8, 8, 2);
  EXPECT_TRUE(std::isinf(psnr(x, x)));
  EXPECT_NEAR(psnr_from_mse(0.01), 20.0, 1e-12);
  EXPECT_NEAR(psnr_from_mse(1.0), 0.0, 1e-12);
  Image y = x;
  y.px[3] = 1.0 - y.px[3];
  const double m = mse(x, y);
  EXPECT_NEAR(psnr(x, y), 10.0 * std::log10(1.0 / m), 1e-12);
  const QualityReport q = quality(x, y);
  EXPECT_NEAR(q.psnr_8bit, q.psnr, 1e-9);  // same ratio on either scale
}

TEST(Ssim, IdentityInversionAndSmallNoise) {
  const Image x = textured(32, 64);
  EXPECT_NEAR(ssim(x, x), 1.0, 1e-12);
  Image inv = x;
  for (double& v : inv.px) v = 1.0 - v;
  EXPECT_LT(ssim(x, inv), 0.0);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.0, 0.001);
  Image noisy = x;
  for (double& v : noisy.px) v += nd(rng);
  EXPECT_GT(ssim(x, noisy), 0.99);
}

TEST(Ssim, SmallImagesUseFallbackWindow) {
  const Image x = textured(8, 9);
  EXPECT_NEAR(ssim(x, x), 1.0, 1e-12);
  Image y = x;
  y.px[10] = 0.0;
  const double s = ssim(x, y);
  EXPECT_LT(s, 1.0);
  EXPECT_GE(s, -1.0);
}

TEST(Erode, HandExamplesAndBruteForce) {
  Image c(4, 4, 0.3);
  EXPECT_EQ(erode(c), c);

  Image dot(5, 5, 1.0);
  dot.at(2, 2) = 0.0;
  const Image e = erode(dot);
  for (int r = 0; r < 5; ++r)
    for (int col = 0; col < 5; ++col) {
      const bool in_square = r >= 1 && r <= 3 && col >= 1 && col <= 3;
      EXPECT_EQ(e.at(r, col), in_square ? 0.0 : 1.0);
    }

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Image img = random_image(9, 13, seed);
    for (auto [kh, kw] : {std::pair{3, 3}, std::pair{1, 5}, std::pair{5, 3}}) {
      const Image got = erode(img, kh, kw);
      for (int r = 0; r < img.height; ++r)
        for (int col = 0; col < img.width; ++col) {
          double m = 2.0;
          for (int i = -kh / 2; i <= kh / 2; ++i)
            for (int j = -kw / 2; j <= kw / 2; ++j) {
              const int rr = std::clamp(r + i, 0, img.height - 1);
              const int cc = std::clamp(col + j, 0, img.width - 1);
              m = std::min(m, img.at(rr, cc));
            }
          ASSERT_EQ(got.at(r, col), m);
        }
    }
  }
  EXPECT_THROW(erode(dot, 2, 3), std::invalid_argument);
}

TEST(Blur, ConstantImageUnchanged) {
  const Image c(10, 12, 0.42);
  for (const Image& out : {average_blur(c, 2), average_blur(c, 3), median_blur(c, 3),
                           gaussian_blur(c, 3, 0.0), gaussian_blur(c, 5, 1.2)}) {
    for (double v : out.px) EXPECT_NEAR(v, 0.42, 1e-12);
  }
}

TEST(Blur, Average2x2OfCheckerboardIsHalf) {
  Image cb(6, 8);
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 8; ++c) cb.at(r, c) = (r + c) % 2;
  const Image out = average_blur(cb, 2);
  for (double v : out.px) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Blur, MedianRemovesIsolatedImpulse) {
  Image img(7, 7, 0.8);
  img.at(3, 3) = 0.0;
  EXPECT_EQ(median_blur(img, 3), Image(7, 7, 0.8));
  EXPECT_THROW(median_blur(img, 2), std::invalid_argument);
}

TEST(Blur, GaussianSigmaRule) {
  EXPECT_NEAR(gaussian_sigma_for(3, 0.0), 0.8, 1e-15);
  EXPECT_NEAR(gaussian_sigma_for(5, 0.0), 1.1, 1e-15);
  EXPECT_EQ(gaussian_sigma_for(3, 2.0), 2.0);
  // 3-tap kernel with sigma 0.8, checked on an impulse.
  Image img(5, 5, 0.0);
  img.at(2, 2) = 1.0;
  const Image out = gaussian_blur(img, 3, 0.0);
  const double w0 = 1.0, w1 = std::exp(-1.0 / (2 * 0.64));
  const double s = w0 + 2 * w1;
  EXPECT_NEAR(out.at(2, 2), (w0 / s) * (w0 / s), 1e-12);
  EXPECT_NEAR(out.at(1, 2), (w1 / s) * (w0 / s), 1e-12);
  EXPECT_NEAR(out.at(1, 1), (w1 / s) * (w1 / s), 1e-12);
}

TEST(Blur, StayInUnitRange) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Image img = random_image(16, 20, seed);
    EXPECT_TRUE(in_unit_range(average_blur(img, 2)));
    EXPECT_TRUE(in_unit_range(median_blur(img, 3)));
    EXPECT_TRUE(in_unit_range(gaussian_blur(img, 3)));
    EXPECT_TRUE(in_unit_range(salt_pepper(img, 0.3, seed)));
    EXPECT_TRUE(in_unit_range(compress_roundtrip(img, 20)));
  }
}

TEST(SaltPepper, CountsAndDeterminism) {
  const Image img(32, 100, 0.5);
  EXPECT_EQ(salt_pepper(img, 0.0, 1), img);
  const Image out = salt_pepper(img, 0.02, 9);
  int zeros = 0, ones = 0;
  for (double v : out.px) {
    zeros += v == 0.0;
    ones += v == 1.0;
  }
  EXPECT_EQ(zeros + ones, 64);
  EXPECT_EQ(zeros, 32);
  EXPECT_EQ(salt_pepper(img, 0.02, 9), out);
  EXPECT_NE(salt_pepper(img, 0.02, 10), out);
  // Odd count: salt gets the extra pixel.
  const Image odd = salt_pepper(Image(1, 3, 0.5), 1.0, 4);
  EXPECT_EQ(std::count(odd.px.begin(), odd.px.end(), 1.0), 2);
  EXPECT_THROW(salt_pepper(img, 1.5, 1), std::invalid_argument);
}

TEST(Jpeg, QuantTableRule) {
  const auto q50 = jpeg_quant_table(50);
  EXPECT_EQ(q50[0], 16);
  EXPECT_EQ(q50[63], 99);
  const auto q100 = jpeg_quant_table(100);
  for (int v : q100) EXPECT_EQ(v, 1);
  const auto q20 = jpeg_quant_table(20);
  EXPECT_EQ(q20[0], 40);  // 16 * 250 / 100
  EXPECT_THROW(jpeg_quant_table(0), std::invalid_argument);
  EXPECT_THROW(jpeg_quant_table(101), std::invalid_argument);
}

TEST(Jpeg, RoundTripProperties) {
  const Image text = rendered("Gate 4B ok");
  EXPECT_GE(psnr(text, compress_roundtrip(text, 100)), 40.0);

  const Image flat(13, 21, 0.6);
  for (double v : compress_roundtrip(flat, 20).px) EXPECT_NEAR(v, 0.6, 1.0 / 255.0);

  const Image tex = textured(32, 48);
  EXPECT_LT(psnr(tex, compress_roundtrip(tex, 20)), psnr(tex, compress_roundtrip(tex, 80)));
  EXPECT_EQ(compress_roundtrip(tex, 20), compress_roundtrip(tex, 20));
}

TEST(Jpeg, DctIsOrthonormal) {
  std::array<double, 64> in{}, coef{}, back{};
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-128, 127);
  for (double& v : in) v = u(rng);
  detail::dct8x8(in, coef, false);
  detail::dct8x8(coef, back, true);
  double e_in = 0, e_coef = 0;
  for (int i = 0; i < 64; ++i) {
    EXPECT_NEAR(back[i], in[i], 1e-9);
    e_in += in[i] * in[i];
    e_coef += coef[i] * coef[i];
  }
  EXPECT_NEAR(e_in, e_coef, 1e-6 * e_in);
}

TEST(Inpaint, TrivialCases) {
  const Image img = random_image(10, 10, 4);
  EXPECT_EQ(inpaint(img, Mask(10, 10), 2), img);

  Image flat(9, 9, 0.7);
  Mask one(9, 9);
  one.set(4, 4, true);
  flat.at(4, 4) = 0.0;
  EXPECT_NEAR(inpaint(flat, one, 2).at(4, 4), 0.7, 1e-12);

  EXPECT_THROW(inpaint(img, Mask(10, 10, true), 2), std::invalid_argument);
  EXPECT_THROW(inpaint(img, one, 2), std::invalid_argument);  // dims differ
  EXPECT_THROW(inpaint(flat, one, 0), std::invalid_argument);
}

TEST(Inpaint, StripeOnFlatBackground) {
  Image img(20, 30, 0.9);
  Mask m(20, 30);
  for (int r = 8; r < 12; ++r)
    for (int c = 0; c < 30; ++c) {
      m.set(r, c, true);
      img.at(r, c) = 0.1;
    }
  const Image out = inpaint(img, m, 2);
  for (double v : out.px) EXPECT_NEAR(v, 0.9, 1e-6);
}

TEST(Inpaint, LeavesUnmaskedPixelsBitIdentical) {
  const Image img = rendered("Lot 4A west gate");
  const Mask m = watermark_mask(WatermarkSpec{}, img.height, img.width);
  Image marked = paste_watermark(img, m, 0.3);
  const Image out = inpaint(marked, m, 2);
  for (std::size_t i = 0; i < img.size(); ++i) {
    if (!m.on[i]) {
      ASSERT_EQ(out.px[i], marked.px[i]);
    }
  }
  EXPECT_TRUE(in_unit_range(out));
}

TEST(Pgm, RoundTripAndErrors) {
  const auto dir = std::filesystem::temp_directory_path() / "wmocr_pgm_test";
  std::filesystem::create_directories(dir);
  Image img = random_image(5, 7, 8);
  for (double& v : img.px) v = std::round(v * 255.0) / 255.0;
  write_pgm(dir / "a.pgm", img);
  const Image back = read_pgm(dir / "a.pgm");
  ASSERT_TRUE(back.same_dims(img));
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back.px[i], img.px[i], 1e-15);

  {
    std::ofstream f(dir / "short.pgm", std::ios::binary);
    f << "P5\n7 5\n255\nabc";
  }
  EXPECT_THROW(read_pgm(dir / "short.pgm"), std::runtime_error);
  {
    std::ofstream f(dir / "p2.pgm");
    f << "P2\n1 1\n255\n0\n";
  }
  EXPECT_THROW(read_pgm(dir / "p2.pgm"), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST(F64Image, ExactRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "wmocr_f64_test";
  std::filesystem::create_directories(dir);
  Image img = random_image(6, 9, 3);
  img.px[4] += 1e-13;
  write_f64(dir / "a.f64", img);
  EXPECT_EQ(read_f64(dir / "a.f64"), img);
  {
    std::ofstream f(dir / "bad.f64", std::ios::binary);
    f << "WMF8";
  }
  EXPECT_THROW(read_f64(dir / "bad.f64"), std::runtime_error);
  std::filesystem::remove_all(dir);
}
