#include <gtest/gtest.h>

#include <cmath>

#include "wmocr/attack.hpp"

using namespace wmocr;

namespace {

ModelWeights model(std::uint64_t seed = 21) {
  ModelConfig c;
  c.charset_id = "main";
  c.seed = seed;
  return init_weights(c);
}

Image line(const std::string& text, std::uint64_t seed) {
  return render_line({text, 0.0, 1.0, seed}, FontAtlas());
}

AttackConfig short_run(int iterations) {
  AttackConfig c;
  c.iterations = iterations;
  c.alpha = 0.02;
  c.early_stop = false;
  c.record_trajectory = true;
  return c;
}

void expect_same_trajectory(const AttackResult& a, const AttackResult& b) {
  ASSERT_EQ(a.trajectory.size(), b.trajectory.size());
  for (std::size_t i = 0; i < a.trajectory.size(); ++i) {
    ASSERT_EQ(a.trajectory[i], b.trajectory[i]) << "iterate " << i;
  }
  EXPECT_EQ(a.adversarial, b.adversarial);
}

void expect_invariants(const AttackResult& r, double eps) {
  const Image& x0 = r.start;
  const std::vector<Image> all = r.trajectory.empty() ? std::vector<Image>{r.adversarial} : r.trajectory;
  for (const Image& x : all) {
    ASSERT_TRUE(x.same_dims(x0));
    for (std::size_t i = 0; i < x.size(); ++i) {
      ASSERT_GE(x.px[i], 0.0);
      ASSERT_LE(x.px[i], 1.0);
      ASSERT_LE(std::abs(x.px[i] - x0.px[i]), eps + 1e-12);
      if (!r.mask.on[i]) {
        ASSERT_EQ(x.px[i], x0.px[i]);
      }
    }
  }
}

}  // namespace

TEST(Variant, NamesRoundTripAndUnknownRejected) {
  for (Variant v : kAllVariants) EXPECT_EQ(parse_variant(variant_name(v)), v);
  EXPECT_EQ(parse_variant("wm-edge"), Variant::kWmEdge);
  EXPECT_THROW(parse_variant("PGD"), std::invalid_argument);
  EXPECT_THROW(parse_variant(""), std::invalid_argument);
}

TEST(AttackConfig, DefaultsAndValidation) {
  const AttackConfig c;
  EXPECT_DOUBLE_EQ(c.step(), 2e-4);
  EXPECT_EQ(c.lambda, 0.3);
  AttackConfig bad;
  bad.epsilon = 0.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = AttackConfig{};
  bad.p_norm = 3.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  const auto kv = KeyValues::parse_string("variant=mim\nepsilon=0.1\niterations=50\np_norm=inf\n");
  const AttackConfig parsed = AttackConfig::from_kv(kv);
  EXPECT_EQ(parsed.variant, Variant::kMim);
  EXPECT_DOUBLE_EQ(parsed.step(), 0.1 / 50);
  EXPECT_TRUE(std::isinf(parsed.p_norm));
}

TEST(Fgsm, StepArithmetic) {
  const ModelWeights w = model();
  const Image x = line("Gate 4B", 1);
  const AttackResult r = fgsm(w, x, "Gate 4R", 0.2);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = std::abs(r.adversarial.px[i] - x.px[i]);
    if (d == 0.0) continue;
    ++changed;
    const bool clamped = r.adversarial.px[i] == 0.0 || r.adversarial.px[i] == 1.0;
    if (!clamped) {
      ASSERT_NEAR(d, 0.2, 1e-15);
    }
  }
  EXPECT_GT(changed, 0u);
  EXPECT_EQ(r.iterations, 1);
}

TEST(Fgsm, ZeroGradientLeavesImageUnchanged) {
  ModelWeights w = model();
  // Zero conv kernels make the output independent of the input.
  for (double& v : w.k1.data()) v = 0.0;
  const Image x = line("ab", 2);
  EXPECT_EQ(fgsm(w, x, "ac", 0.2).adversarial, x);
}

TEST(Fgsm, InfeasibleTargetRejected) {
  const ModelWeights w = model();
  EXPECT_THROW(fgsm(w, line("a", 0), "aaaa", 0.2), std::invalid_argument);
  EXPECT_THROW(fgsm(w, line("a", 0), "a", 0.0), std::invalid_argument);
}

TEST(Reductions, TrajectoryIdentical) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ModelWeights w = model(100 + seed);
    const Image x = line("Lot 4" + std::string(1, static_cast<char>('A' + seed)), seed);
    const std::string t = "Lot 4E";

    AttackConfig one = short_run(1);
    one.alpha = 0.2;
    expect_same_trajectory(fgsm(w, x, t, 0.2, true), bim(w, x, t, one));

    const AttackConfig cfg = short_run(12);
    AttackConfig no_momentum = cfg;
    no_momentum.mu = 0.0;
    expect_same_trajectory(bim(w, x, t, cfg), mim(w, x, t, no_momentum));

    expect_same_trajectory(mim(w, x, t, cfg), wm_attack(w, x, t, Mask(x.height, x.width, true), cfg));
  }
}

TEST(Invariants, EveryVariantRandomized) {
  const ModelWeights w = model(7);
  const char* texts[] = {"AT 1O PM today", "Gate 8B open now", "Lot 4xA 9 west", "Key a7c X door"};
  std::uint64_t seed = 0;
  for (const char* text : texts) {
    const Image x = line(text, seed++);
    std::string t = text;
    t[t.size() / 2] = t[t.size() / 2] == 'O' ? '0' : 'O';
    for (Variant v : kAllVariants) {
      AttackConfig cfg = short_run(25);
      cfg.alpha = 0.03;
      const AttackResult r = run_attack(v, w, x, t, cfg);
      SCOPED_TRACE(variant_name(v) + " on '" + text + "'");
      expect_invariants(r, cfg.epsilon);
      EXPECT_GT(r.wall_time_s, 0.0);
      EXPECT_EQ(r.targeted_success, recognize(w, r.adversarial) == t);
      EXPECT_EQ(r.untargeted_success, recognize(w, r.adversarial) != recognize(w, x));
      for (std::size_t i = 1; i < r.best_trace.size(); ++i) {
        ASSERT_LE(r.best_trace[i], r.best_trace[i - 1]);
      }
      if (v == Variant::kWmNeg) {
        for (const Image& it : r.trajectory) {
          for (std::size_t i = 0; i < x.size(); ++i) ASSERT_LE(it.px[i], r.start.px[i]);
        }
      }
      if (v == Variant::kWmEdge) {
        for (std::size_t i = 0; i < x.size(); ++i) {
          if (r.mask.on[i]) {
            ASSERT_GT(x.px[i], cfg.tau) << i;
          }
        }
      }
      if (v != Variant::kWmInit) {
        EXPECT_EQ(r.start, x);
      }
    }
  }
}

TEST(WmInit, ZeroIterationsIsPastedWatermark) {
  const ModelWeights w = model();
  const Image x = line("Pay 4.00 ok today", 3);
  AttackConfig cfg;
  cfg.iterations = 0;
  const AttackResult r = run_attack(Variant::kWmInit, w, x, "Pay 4.08 ok today", cfg);
  const Image pasted = paste_watermark(x, watermark_mask(cfg.watermark, x.height, x.width), 0.3);
  EXPECT_EQ(r.adversarial, pasted);
  EXPECT_EQ(r.start, pasted);
  EXPECT_EQ(r.iterations, 0);
}

TEST(WmInit, BallIsAnchoredAtPastedImage) {
  const ModelWeights w = model(3);
  const Image x = line("Pay 4.00 ok today", 4);
  AttackConfig cfg = short_run(30);
  cfg.alpha = 0.05;
  const AttackResult r = run_attack(Variant::kWmInit, w, x, "Pay 4.08 ok today", cfg);
  double dev_pasted = 0.0, dev_clean = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dev_pasted = std::max(dev_pasted, std::abs(r.adversarial.px[i] - r.start.px[i]));
    dev_clean = std::max(dev_clean, std::abs(r.adversarial.px[i] - x.px[i]));
  }
  EXPECT_LE(dev_pasted, 0.2 + 1e-12);
  // The paste alone moves background by 0.7.
  EXPECT_GT(dev_clean, 0.2);
}

TEST(WmAttack, EmptyMaskRejected) {
  const ModelWeights w = model();
  const Image x = line("AB", 0);
  EXPECT_THROW(wm_attack(w, x, "AR", Mask(x.height, x.width, false), short_run(3)),
               std::invalid_argument);
}

TEST(EarlyStop, DeclaredSuccessReproduces) {
  // Target the model's own clean reading: success at iteration 0.
  const ModelWeights w = model(9);
  const Image x = line("Gate 8B", 5);
  const std::string clean = recognize(w, x);
  if (clean.empty() || !ctc_feasible(w.charset.encode(clean), timesteps_for(x))) GTEST_SKIP();
  AttackConfig cfg;
  cfg.iterations = 100;
  const AttackResult r = run_attack(Variant::kMim, w, x, clean, cfg);
  EXPECT_TRUE(r.targeted_success);
  EXPECT_EQ(r.iterations, 0);
  EXPECT_EQ(r.adversarial, x);
  EXPECT_EQ(recognize(w, r.adversarial), clean);
}

TEST(Momentum, ZeroGradientOnlyDecays) {
  Image g(1, 3, 0.0);
  EXPECT_EQ(detail::grad_norm(g, 1.0), 0.0);
  g.px = {3.0, -4.0, 0.0};
  EXPECT_DOUBLE_EQ(detail::grad_norm(g, 1.0), 7.0);
  EXPECT_DOUBLE_EQ(detail::grad_norm(g, 2.0), 5.0);
  EXPECT_DOUBLE_EQ(detail::grad_norm(g, INFINITY), 4.0);

  // With a constant model the input gradient is zero at every step, so the
  // iterate never moves.
  ModelWeights w = model();
  for (double& v : w.k1.data()) v = 0.0;
  const Image x = line("ab", 1);
  const AttackResult r = mim(w, x, "ac", short_run(5));
  for (const Image& it : r.trajectory) EXPECT_EQ(it, x);
}
