#include <gtest/gtest.h>

#include <cmath>

#include "featsplat/error.hpp"
#include "featsplat/metrics.hpp"
#include "featsplat/rasterizer.hpp"
#include "test_support.hpp"

using namespace featsplat;
using testsupport::Gen;

namespace {

Image filled(int w, int h, float v) { return Image(w, h, 3, v); }

Image clamp_add(const Image &a, Gen &g, double amp) {
  Image b = a;
  for (auto &v : b.data)
    v = std::clamp(v + static_cast<float>(g.uniform(-amp, amp)), 0.0f, 1.0f);
  return b;
}

} // namespace

TEST(Psnr, IdenticalHitsCap) {
  Gen g(1);
  const auto a = testsupport::random_image(g, 16, 16);
  EXPECT_EQ(metrics::psnr(a, a), metrics::kPsnrCapDb);
}

TEST(Psnr, ConstantOffset) {
  Image a = filled(20, 12, 0.3f), b = filled(20, 12, 0.4f);
  EXPECT_NEAR(metrics::psnr(a, b), 20.0, 1e-5);
  EXPECT_NEAR(metrics::mse(a, b), 0.01, 1e-8);
}

TEST(Psnr, MatchesOracleAndIsSymmetric) {
  Gen g(2);
  for (int trial = 0; trial < 10; ++trial) {
    const auto a = testsupport::random_image(g, g.integer(11, 40), g.integer(11, 40));
    const auto b = clamp_add(a, g, g.uniform(0.01, 0.5));
    EXPECT_NEAR(metrics::psnr(a, b), testsupport::psnr_oracle(a, b), 1e-4);
    EXPECT_EQ(metrics::psnr(a, b), metrics::psnr(b, a));
  }
}

TEST(Psnr, DecreasesWithNoiseAmplitude) {
  Gen g(3);
  const auto base = filled(32, 32, 0.5f);
  Image pattern(32, 32, 3);
  for (auto &v : pattern.data)
    v = g.uniform(-1, 1) > 0 ? 1.0f : -1.0f;
  double prev = metrics::kPsnrCapDb;
  for (int k = 1; k <= 20; ++k) {
    const double amp = 0.01 * k;
    Image noisy = base;
    for (std::size_t i = 0; i < noisy.data.size(); ++i)
      noisy.data[i] += static_cast<float>(amp) * pattern.data[i];
    const double p = metrics::psnr(base, noisy);
    EXPECT_LT(p, prev) << amp;
    prev = p;
  }
}

TEST(Psnr, ShapeMismatch) {
  try {
    metrics::psnr(filled(4, 4, 0), filled(4, 5, 0));
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
}

TEST(Ssim, IdenticalIsOne) {
  Gen g(4);
  for (int trial = 0; trial < 10; ++trial) {
    const auto a = testsupport::random_image(g, g.integer(11, 30), g.integer(11, 30));
    EXPECT_NEAR(metrics::ssim(a, a), 1.0, 1e-12);
  }
}

TEST(Ssim, ConstantImagesClosedForm) {
  const double c1 = 0.01 * 0.01;
  EXPECT_NEAR(metrics::ssim(filled(16, 16, 0), filled(16, 16, 1)), c1 / (1 + c1), 1e-12);
  // Two arbitrary constants: variances vanish, only the luminance term remains.
  const double mu_a = 0.2, mu_b = 0.7;
  EXPECT_NEAR(metrics::ssim(filled(12, 14, 0.2f), filled(12, 14, 0.7f)),
              (2 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1), 1e-6);
}

TEST(Ssim, MatchesDirectWindowOracle) {
  Gen g(5);
  for (int trial = 0; trial < 6; ++trial) {
    const auto a = testsupport::random_image(g, g.integer(11, 24), g.integer(11, 24));
    const auto b = clamp_add(a, g, 0.3);
    EXPECT_NEAR(metrics::ssim(a, b), testsupport::ssim_oracle(a, b), 1e-6);
  }
}

TEST(Ssim, TooSmallAndMismatch) {
  try {
    metrics::ssim(filled(10, 20, 0), filled(10, 20, 0));
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::TooSmall);
  }
  EXPECT_THROW(metrics::ssim(filled(11, 11, 0), filled(12, 11, 0)), Error);
}

TEST(Ssim, GradientMatchesFiniteDifferences) {
  Gen g(6);
  const auto a = testsupport::random_image(g, 13, 12);
  const auto b = clamp_add(a, g, 0.2);
  std::vector<double> grad;
  const double s = metrics::ssim_with_grad(a, b, grad);
  EXPECT_NEAR(s, metrics::ssim(a, b), 1e-12);
  ASSERT_EQ(grad.size(), a.data.size());
  for (int k = 0; k < 30; ++k) {
    const auto i = static_cast<std::size_t>(g.integer(0, static_cast<int>(a.data.size()) - 1));
    // float pixels limit the step; use a large h and a matching tolerance.
    const float h = 1e-2f;
    Image p = a, m = a;
    p.data[i] += h;
    m.data[i] -= h;
    const double numeric = (testsupport::ssim_oracle(p, b) - testsupport::ssim_oracle(m, b)) / (2.0 * h);
    EXPECT_NEAR(grad[i], numeric, 1e-4 + 1e-2 * std::abs(numeric)) << i;
  }
}

TEST(Evaluate, SelfRenderedGroundTruthIsPerfect) {
  Gen g(7);
  const auto set = testsupport::random_scene(g, {30, 2, 0});
  std::vector<metrics::EvalView> views;
  for (int k = 0; k < 3; ++k) {
    auto cam = testsupport::front_camera(24, 20, 20);
    cam.pose.image_name = "v" + std::to_string(k) + ".png";
    cam.pose.tx = 0.1 * k;
    auto gt = render<float>(set, cam).rgb_image();
    views.push_back({cam, gt});
  }
  const auto rep = metrics::evaluate(set, views);
  ASSERT_EQ(rep.per_view.size(), 3u);
  EXPECT_EQ(rep.mean_psnr_db, metrics::kPsnrCapDb);
  EXPECT_NEAR(rep.mean_ssim, 1.0, 1e-12);
  EXPECT_EQ(rep.per_view[1].view_id, "v1");
}

TEST(Evaluate, ReportMatchesRecomputation) {
  Gen g(8);
  const auto set = testsupport::random_scene(g, {30, 2, 0});
  std::vector<metrics::EvalView> views;
  for (int k = 0; k < 4; ++k) {
    auto cam = testsupport::front_camera(20, 20, 20);
    cam.pose.image_name = "w" + std::to_string(k) + ".png";
    views.push_back({cam, testsupport::random_image(g, 20, 20)});
  }
  const auto rep = metrics::evaluate(set, views);
  double sp = 0, ss = 0;
  for (std::size_t k = 0; k < views.size(); ++k) {
    const auto img = render<float>(set, views[k].camera).rgb_image();
    EXPECT_NEAR(rep.per_view[k].psnr_db, testsupport::psnr_oracle(img, *views[k].ground_truth), 1e-4);
    EXPECT_NEAR(rep.per_view[k].ssim, testsupport::ssim_oracle(img, *views[k].ground_truth), 1e-6);
    sp += rep.per_view[k].psnr_db;
    ss += rep.per_view[k].ssim;
  }
  EXPECT_NEAR(rep.mean_psnr_db, sp / 4, 1e-12);
  EXPECT_NEAR(rep.mean_ssim, ss / 4, 1e-12);
  const auto csv = rep.to_csv();
  EXPECT_EQ(csv.rfind("view_id,psnr_db,ssim", 0), 0u);
  EXPECT_NE(csv.find("mean,"), std::string::npos);
}

TEST(Evaluate, ErrorsOnEmptyOrMissingGroundTruth) {
  const GaussianSet set(0, 2);
  EXPECT_THROW(metrics::evaluate(set, {}), Error);
  std::vector<metrics::EvalView> views = {{testsupport::front_camera(16, 16, 16), std::nullopt}};
  views[0].camera.pose.image_name = "x.png";
  try {
    metrics::evaluate(set, views);
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::MissingGroundTruth);
    EXPECT_NE(e.detail().find("x"), std::string::npos);
  }
}
