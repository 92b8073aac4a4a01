#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "wmocr/gradcheck.hpp"
#include "wmocr/layers.hpp"

using namespace wmocr;

namespace {

Tensor random_tensor(const Shape& s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(s);
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Scalar probe L = sum(out * r) so that dL/dout = r.
double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> to_vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor with_data(const Shape& s, std::span<const double> p) {
  return Tensor(s, std::vector<double>(p.begin(), p.end()));
}

// Naive conv, written independently of the library loop order.
Tensor naive_conv(const Tensor& in, const Tensor& k, const Tensor& b) {
  const long h = in.dim(0), w = in.dim(1), c = in.dim(2);
  const long kh = k.dim(0), kw = k.dim(1), f = k.dim(3);
  Tensor out({in.dim(0), in.dim(1), k.dim(3)});
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      for (long ff = 0; ff < f; ++ff) {
        double s = b[ff];
        for (long i = 0; i < kh; ++i)
          for (long j = 0; j < kw; ++j)
            for (long cc = 0; cc < c; ++cc) {
              const long yy = y + i - kh / 2, xx = x + j - kw / 2;
              if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
              s += in.at(yy, xx, cc) * k[((i * kw + j) * c + cc) * f + ff];
            }
        out.at(y, x, ff) = s;
      }
  return out;
}

}  // namespace

TEST(Conv2d, ZeroInputGivesBias) {
  Tensor in({1, 1, 1});
  Tensor k({3, 3, 1, 2}, 0.7);
  Tensor b({2}, std::vector<double>{0.25, -1.5});
  const Tensor out = conv2d(in, k, b);
  EXPECT_EQ(out[0], 0.25);
  EXPECT_EQ(out[1], -1.5);
}

TEST(Conv2d, OnesKernelHandConvolution) {
  Tensor in({3, 3, 1}, 1.0);
  Tensor k({3, 3, 1, 1}, 1.0);
  Tensor b({1});
  const Tensor out = conv2d(in, k, b);
  EXPECT_EQ(out.at(1, 1, 0), 9.0);
  EXPECT_EQ(out.at(0, 0, 0), 4.0);
  EXPECT_EQ(out.at(0, 2, 0), 4.0);
  EXPECT_EQ(out.at(2, 0, 0), 4.0);
  EXPECT_EQ(out.at(2, 2, 0), 4.0);
  EXPECT_EQ(out.at(0, 1, 0), 6.0);
}

TEST(Conv2d, IdentityKernelIsExactIdentity) {
  std::mt19937_64 rng(3);
  const Tensor in = random_tensor({5, 7, 2}, rng);
  Tensor k({3, 3, 2, 2});
  k[((1 * 3 + 1) * 2 + 0) * 2 + 0] = 1.0;
  k[((1 * 3 + 1) * 2 + 1) * 2 + 1] = 1.0;
  EXPECT_EQ(conv2d(in, k, Tensor({2})), in);
}

TEST(Conv2d, MatchesNaiveLoop) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor in = random_tensor({6, 5, 3}, rng);
    const Tensor k = random_tensor({3, 5, 3, 4}, rng);
    const Tensor b = random_tensor({4}, rng);
    const Tensor got = conv2d(in, k, b), want = naive_conv(in, k, b);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Conv2d, RejectsBadShapes) {
  EXPECT_THROW(conv2d(Tensor({3, 3, 2}), Tensor({3, 3, 1, 1}), Tensor({1})), std::invalid_argument);
  EXPECT_THROW(conv2d(Tensor({3, 3, 1}), Tensor({2, 3, 1, 1}), Tensor({1})), std::invalid_argument);
  EXPECT_THROW(conv2d(Tensor({3, 3, 1}), Tensor({3, 3, 1, 2}), Tensor({1})), std::invalid_argument);
}

TEST(Conv2dBackward, ZeroUpstreamGivesZeroGrads) {
  std::mt19937_64 rng(1);
  const Tensor in = random_tensor({4, 4, 2}, rng);
  const Tensor k = random_tensor({3, 3, 2, 3}, rng);
  const auto g = conv2d_backward(in, k, Tensor({4, 4, 3}));
  for (double v : g.input.data()) EXPECT_EQ(v, 0.0);
  for (const auto& p : g.params)
    for (double v : p.data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2dBackward, ScalarProductRule) {
  // 1x1 image, 1x1 kernel: out = k*x + b.
  Tensor in({1, 1, 1}, std::vector<double>{3.0});
  Tensor k({1, 1, 1, 1}, std::vector<double>{-2.0});
  Tensor up({1, 1, 1}, std::vector<double>{0.5});
  const auto g = conv2d_backward(in, k, up);
  EXPECT_DOUBLE_EQ(g.input[0], -2.0 * 0.5);
  EXPECT_DOUBLE_EQ(g.params[0][0], 3.0 * 0.5);
  EXPECT_DOUBLE_EQ(g.params[1][0], 0.5);
}

TEST(Conv2dBackward, MatchesFiniteDifferencesOver20Seeds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const Tensor in = random_tensor({4, 4, 2}, rng);
    const Tensor k = random_tensor({3, 3, 2, 3}, rng);
    const Tensor b = random_tensor({3}, rng);
    const Tensor r = random_tensor({4, 4, 3}, rng);
    const auto g = conv2d_backward(in, k, r);

    auto f_in = [&](std::span<const double> p) { return dot(conv2d(with_data(in.shape(), p), k, b), r); };
    auto f_k = [&](std::span<const double> p) { return dot(conv2d(in, with_data(k.shape(), p), b), r); };
    auto f_b = [&](std::span<const double> p) { return dot(conv2d(in, k, with_data(b.shape(), p)), r); };
    EXPECT_LT(finite_difference_check(f_in, to_vec(in), to_vec(g.input), 1e-5), 1e-4) << seed;
    EXPECT_LT(finite_difference_check(f_k, to_vec(k), to_vec(g.params[0]), 1e-5), 1e-4) << seed;
    EXPECT_LT(finite_difference_check(f_b, to_vec(b), to_vec(g.params[1]), 1e-5), 1e-4) << seed;
  }
}

TEST(Relu, Values) {
  const Tensor out = relu(Tensor({2}, std::vector<double>{-1.0, 2.0}));
  EXPECT_EQ(out[0], 0.0);
  EXPECT_EQ(out[1], 2.0);
}

TEST(ReluBackward, MatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(100 + seed);
    Tensor in = random_tensor({3, 4, 2}, rng);
    // Keep inputs away from the kink.
    for (double& v : in.data()) v += v > 0 ? 0.05 : -0.05;
    const Tensor r = random_tensor(in.shape(), rng);
    const Tensor g = relu_backward(in, r);
    auto f = [&](std::span<const double> p) { return dot(relu(with_data(in.shape(), p)), r); };
    EXPECT_LT(finite_difference_check(f, to_vec(in), to_vec(g), 1e-5), 1e-4);
  }
}

TEST(Maxpool, ForwardAndTieRule) {
  Tensor in({2, 4, 1}, std::vector<double>{1, 5, 2, 2, 3, 4, 2, 2});
  const auto p = maxpool2x2(in);
  EXPECT_EQ(p.output[0], 5.0);
  EXPECT_EQ(p.output[1], 2.0);
  EXPECT_EQ(p.argmax[0], 1u);
  EXPECT_EQ(p.argmax[1], 2u);  // first of four tied values
  EXPECT_THROW(maxpool2x2(Tensor({3, 4, 1})), std::invalid_argument);
}

TEST(MaxpoolBackward, RoutesOnlyToArgmaxAndMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(200 + seed);
    const Tensor in = random_tensor({4, 6, 3}, rng);
    const Tensor r = random_tensor({2, 3, 3}, rng);
    const auto p = maxpool2x2(in);
    const Tensor g = maxpool_backward(in.shape(), p.argmax, r);
    std::size_t nonzero = 0;
    for (double v : g.data()) nonzero += v != 0.0;
    EXPECT_EQ(nonzero, r.size());
    auto f = [&](std::span<const double> q) { return dot(maxpool2x2(with_data(in.shape(), q)).output, r); };
    EXPECT_LT(finite_difference_check(f, to_vec(in), to_vec(g), 1e-5), 1e-4);
  }
}

TEST(DenseBackward, MatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(300 + seed);
    const Tensor in = random_tensor({5, 4}, rng);
    const Tensor w = random_tensor({4, 3}, rng);
    const Tensor b = random_tensor({3}, rng);
    const Tensor r = random_tensor({5, 3}, rng);
    const auto g = dense_backward(in, w, r);
    auto f_in = [&](std::span<const double> p) { return dot(dense(with_data(in.shape(), p), w, b), r); };
    auto f_w = [&](std::span<const double> p) { return dot(dense(in, with_data(w.shape(), p), b), r); };
    auto f_b = [&](std::span<const double> p) { return dot(dense(in, w, with_data(b.shape(), p)), r); };
    EXPECT_LT(finite_difference_check(f_in, to_vec(in), to_vec(g.input), 1e-5), 1e-4);
    EXPECT_LT(finite_difference_check(f_w, to_vec(w), to_vec(g.params[0]), 1e-5), 1e-4);
    EXPECT_LT(finite_difference_check(f_b, to_vec(b), to_vec(g.params[1]), 1e-5), 1e-4);
  }
  EXPECT_THROW(dense(Tensor({2, 3}), Tensor({4, 2}), Tensor({2})), std::invalid_argument);
}

TEST(Softmax, UniformLogitsGiveUniformRows) {
  const Tensor s = softmax_rows(Tensor({2, 4}, 3.0));
  for (double v : s.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, RowsSumToOneStrictlyInsideUnitInterval) {
  std::mt19937_64 rng(9);
  const Tensor s = softmax_rows(random_tensor({50, 17}, rng, -30.0, 30.0));
  for (std::size_t i = 0; i < 50; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 17; ++j) {
      EXPECT_GT(s.at(i, j), 0.0);
      EXPECT_LT(s.at(i, j), 1.0);
      sum += s.at(i, j);
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(FiniteDifference, LinearFunctionHasNoError) {
  auto f = [](std::span<const double> p) { return 3.0 * p[0] - 2.0 * p[1]; };
  const std::vector<double> x{0.3, -1.2}, g{3.0, -2.0};
  EXPECT_LT(finite_difference_check(f, x, g, 1e-5), 1e-9);
}

TEST(FiniteDifference, QuadraticAtOne) {
  auto f = [](std::span<const double> p) { return p[0] * p[0]; };
  const std::vector<double> x{1.0}, g{2.0};
  EXPECT_LT(finite_difference_check(f, x, g, 1e-5), 1e-8);
}

TEST(FiniteDifference, Errors) {
  auto f = [](std::span<const double> p) { return p[0]; };
  const std::vector<double> one{1.0}, zero{0.0};
  EXPECT_THROW(finite_difference_check(f, one, one, 0.0), std::invalid_argument);
  auto bad = [](std::span<const double> p) { return std::log(p[0]); };
  EXPECT_THROW(finite_difference_check(bad, zero, one, 1e-5), std::domain_error);
}

TEST(Sign, ZeroIsZero) {
  EXPECT_EQ(sign(0.0), 0.0);
  EXPECT_EQ(sign(-0.0), 0.0);
  EXPECT_EQ(sign(1e-300), 1.0);
  EXPECT_EQ(sign(-2.0), -1.0);
}
