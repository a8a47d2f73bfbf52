#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "rectattn/equivariance.hpp"
#include "rectattn/errors.hpp"
#include "rectattn/theory.hpp"
#include "test_util.hpp"

using namespace rectattn;
using rectattn::testing::max_abs_diff;
using rectattn::testing::random_tensor;

namespace {

constexpr double kPi = std::numbers::pi;
const Vec2 kCenter{0.5, 0.5};

void expect_params_near(const RectParams& a, const RectParams& b, double tol) {
  EXPECT_NEAR(a.mu[0], b.mu[0], tol);
  EXPECT_NEAR(a.mu[1], b.mu[1], tol);
  EXPECT_NEAR(a.sigma[0], b.sigma[0], tol);
  EXPECT_NEAR(a.sigma[1], b.sigma[1], tol);
  EXPECT_NEAR(wrap_angle(a.alpha - b.alpha), 0.0, tol);
}

}  // namespace

TEST(SampleTransform, DegenerateRangesGiveIdentity) {
  EquivarianceConfig cfg;
  cfg.alpha_range = {0.0, 0.0};
  cfg.sigma_range = {1.0, 1.0};
  cfg.mu_range = {0.0, 0.0};
  Rng rng(1);
  EXPECT_EQ(sample_transform(rng, cfg), TransformSpec{});
}

TEST(SampleTransform, DeterministicAndInRange) {
  EquivarianceConfig cfg;
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) {
    const TransformSpec t = sample_transform(a, cfg);
    EXPECT_EQ(t, sample_transform(b, cfg));
    EXPECT_GE(t.delta_alpha, -kPi / 4);
    EXPECT_LE(t.delta_alpha, kPi / 4);
    EXPECT_GE(t.delta_sigma, 0.8);
    EXPECT_LE(t.delta_sigma, 1.25);
    for (double m : t.delta_mu) {
      EXPECT_GE(m, -0.2);
      EXPECT_LE(m, 0.2);
    }
  }
}

TEST(SampleTransform, AngleMeanWithinThreeStandardErrors) {
  EquivarianceConfig cfg;
  Rng rng(3);
  const int n = 10000;
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += sample_transform(rng, cfg).delta_alpha;
  const double half = kPi / 4;
  const double se = (2 * half / std::sqrt(12.0)) / std::sqrt(static_cast<double>(n));
  EXPECT_LE(std::abs(s / n), 3 * se);
}

TEST(TransformPoint, InverseRoundTrip) {
  Rng rng(4);
  EquivarianceConfig cfg;
  for (int i = 0; i < 100; ++i) {
    const TransformSpec t = sample_transform(rng, cfg);
    const Vec2 p{uniform(rng, 0, 1), uniform(rng, 0, 1)};
    const Vec2 q = inverse_transform_point(t, kCenter, transform_point(t, kCenter, p));
    EXPECT_NEAR(q[0], p[0], 1e-12);
    EXPECT_NEAR(q[1], p[1], 1e-12);
  }
}

TEST(WarpImage, IdentityLeavesImage) {
  Rng rng(5);
  const Tensor img = random_tensor(rng, {2, 7, 9});
  EXPECT_LE(max_abs_diff(warp_image(img, TransformSpec{}, kCenter), img), 1e-12);
  const Tensor batch = random_tensor(rng, {3, 1, 6, 6});
  EXPECT_LE(max_abs_diff(warp_image(batch, TransformSpec{}, kCenter), batch), 1e-12);
}

TEST(WarpImage, HalfFrameTranslation) {
  // A shift of 0.5 on a width of 10 moves content by 4.5 pixels: each output
  // pixel averages columns j-5 and j-4.
  Tensor img(Shape{1, 1, 10});
  for (std::size_t j = 0; j < 10; ++j) img[j] = static_cast<double>(j + 1);
  TransformSpec t;
  t.delta_mu = {0.0, 0.5};
  const Tensor out = warp_image(img, t, kCenter);
  for (std::size_t j = 0; j < 10; ++j) {
    double expect = 0.0;
    const long a = static_cast<long>(j) - 5, b = static_cast<long>(j) - 4;
    if (a >= 0) expect += 0.5 * img[a];
    if (b >= 0) expect += 0.5 * img[b];
    EXPECT_NEAR(out[j], expect, 1e-12) << j;
  }
}

TEST(WarpImage, InverseCompositionInterior) {
  Rng rng(6);
  Tensor img(Shape{1, 32, 32});
  for (std::size_t i = 0; i < 32; ++i)
    for (std::size_t j = 0; j < 32; ++j)
      img[i * 32 + j] = 0.5 + 0.25 * std::sin(0.3 * i) + 0.25 * std::cos(0.2 * j);
  TransformSpec t;
  t.delta_alpha = 0.3;
  t.delta_sigma = 1.1;
  t.delta_mu = {0.03, -0.02};
  const Tensor fwd = warp_image(img, t, kCenter);
  // Resample the warped image through the forward point map.
  Tensor inv(img.shape());
  for (std::size_t i = 0; i < 32; ++i) {
    for (std::size_t j = 0; j < 32; ++j) {
      const Vec2 src = transform_point(t, kCenter, {pixel_coord(i, 32), pixel_coord(j, 32)});
      const double r = src[0] * 31, q = src[1] * 31;
      const long r0 = static_cast<long>(std::floor(r)), q0 = static_cast<long>(std::floor(q));
      const double fr = r - r0, fq = q - q0;
      double acc = 0.0;
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
          const long rr = r0 + a, qq = q0 + b;
          if (rr < 0 || rr >= 32 || qq < 0 || qq >= 32) continue;
          acc += (a ? fr : 1 - fr) * (b ? fq : 1 - fq) * fwd[rr * 32 + qq];
        }
      inv[i * 32 + j] = acc;
    }
  }
  double worst = 0.0;
  for (std::size_t i = 8; i < 24; ++i)
    for (std::size_t j = 8; j < 24; ++j) worst = std::max(worst, std::abs(inv[i * 32 + j] - img[i * 32 + j]));
  EXPECT_LE(worst, 0.05);
}

TEST(WarpImage, OutsideReadsZero) {
  Tensor img(Shape{1, 5, 5}, 1.0);
  TransformSpec t;
  t.delta_mu = {2.0, 0.0};
  EXPECT_EQ(warp_image(img, t, kCenter), Tensor(Shape{1, 5, 5}, 0.0));
  EXPECT_THROW(warp_image(Tensor(Shape{5, 5}), t, kCenter), ShapeError);
}

TEST(TransformParams, Identity) {
  const RectAttentionConfig bounds;
  const RectParams p{{0.3, 0.6}, {0.2, 0.4}, 0.7};
  const RectParams out = transform_params(p, TransformSpec{}, kCenter, bounds);
  expect_params_near(out, p, 1e-15);
  EXPECT_EQ(out.alpha, p.alpha);
  EXPECT_EQ(out.sigma, p.sigma);
}

TEST(TransformParams, PureTranslation) {
  const RectAttentionConfig bounds;
  const RectParams p{{0.3, 0.6}, {0.2, 0.4}, 0.7};
  TransformSpec t;
  t.delta_mu = {0.1, -0.2};
  expect_params_near(transform_params(p, t, kCenter, bounds), RectParams{{0.4, 0.4}, {0.2, 0.4}, 0.7}, 1e-15);
}

TEST(TransformParams, QuarterTurn) {
  const RectAttentionConfig bounds;
  TransformSpec t;
  t.delta_alpha = kPi / 2;
  const RectParams out = transform_params(RectParams{{0.7, 0.5}, {0.2, 0.3}, 0.0}, t, kCenter, bounds);
  expect_params_near(out, RectParams{{0.5, 0.7}, {0.2, 0.3}, kPi / 2}, 1e-12);
}

TEST(TransformParams, ScaleAndClamp) {
  RectAttentionConfig bounds;
  TransformSpec t;
  t.delta_sigma = 1.25;
  const RectParams out = transform_params(RectParams{{0.9, 0.5}, {0.9, 0.1}, 0.0}, t, kCenter, bounds);
  EXPECT_DOUBLE_EQ(out.mu[0], 1.0);
  EXPECT_DOUBLE_EQ(out.mu[1], 0.625);
  EXPECT_DOUBLE_EQ(out.sigma[0], 1.0);
  EXPECT_DOUBLE_EQ(out.sigma[1], 0.125);
}

TEST(TransformParams, RotationsCompose) {
  const RectAttentionConfig bounds;
  const RectParams p{{0.45, 0.55}, {0.2, 0.3}, 0.4};
  TransformSpec a, b, ab;
  a.delta_alpha = 0.3;
  b.delta_alpha = -0.5;
  ab.delta_alpha = -0.2;
  expect_params_near(transform_params(transform_params(p, a, kCenter, bounds), b, kCenter, bounds),
                     transform_params(p, ab, kCenter, bounds), 1e-12);
  TransformSpec ta, tb, tab;
  ta.delta_mu = {0.05, 0.1};
  tb.delta_mu = {-0.02, 0.03};
  tab.delta_mu = {0.03, 0.13};
  expect_params_near(transform_params(transform_params(p, ta, kCenter, bounds), tb, kCenter, bounds),
                     transform_params(p, tab, kCenter, bounds), 1e-12);
}

TEST(TransformParams, AngleWraps) {
  const RectAttentionConfig bounds;
  TransformSpec t;
  t.delta_alpha = 0.5;
  const RectParams out = transform_params(RectParams{{0.5, 0.5}, {0.2, 0.3}, 3.0}, t, kCenter, bounds);
  EXPECT_NEAR(out.alpha, 3.5 - 2 * kPi, 1e-12);
}

TEST(TransformParams, TapeMatchesScalar) {
  Rng rng(8);
  const RectAttentionConfig bounds;
  EquivarianceConfig cfg;
  std::vector<RectParams> ps;
  for (int i = 0; i < 20; ++i)
    ps.push_back({{uniform(rng, 0, 1), uniform(rng, 0, 1)}, {uniform(rng, 0.05, 1), uniform(rng, 0.05, 1)},
                  uniform(rng, -kPi, kPi)});
  const TransformSpec t = sample_transform(rng, cfg);
  Tape tape;
  const RectVars out = transform_params(constant_rect_vars(tape, ps), t, kCenter, bounds);
  for (std::size_t n = 0; n < ps.size(); ++n) expect_params_near(out.at(n), transform_params(ps[n], t, kCenter, bounds), 1e-13);
}

TEST(EquivarianceLoss, Values) {
  const RectParams p{{0.5, 0.5}, {0.2, 0.3}, 0.0};
  EXPECT_EQ(equivariance_loss(p, p), 0.0);
  RectParams q = p;
  q.mu[0] = 0.6;
  EXPECT_NEAR(equivariance_loss(p, q), 0.01, 1e-15);
  q.sigma[1] = 0.2;
  EXPECT_NEAR(equivariance_loss(p, q), 0.02, 1e-15);
  RectParams r = p;
  r.alpha = 0.2;
  EXPECT_NEAR(equivariance_loss(p, r), 0.04, 1e-15);
  EXPECT_EQ(equivariance_loss(p, q), equivariance_loss(q, p));
  RectParams wrapped = p;
  wrapped.alpha = kPi - 0.1;
  RectParams other = p;
  other.alpha = -kPi + 0.1;
  EXPECT_NEAR(equivariance_loss(wrapped, other), 0.04, 1e-12);
}

TEST(EquivarianceLoss, BatchMeanMatchesScalar) {
  Rng rng(9);
  std::vector<RectParams> a, b;
  for (int i = 0; i < 8; ++i) {
    a.push_back({{uniform(rng, 0, 1), uniform(rng, 0, 1)}, {uniform(rng, 0.05, 1), uniform(rng, 0.05, 1)},
                 uniform(rng, -kPi, kPi)});
    b.push_back({{uniform(rng, 0, 1), uniform(rng, 0, 1)}, {uniform(rng, 0.05, 1), uniform(rng, 0.05, 1)},
                 uniform(rng, -kPi, kPi)});
  }
  double expect = 0.0;
  for (int i = 0; i < 8; ++i) expect += equivariance_loss(a[i], b[i]) / 8;
  Tape tape;
  EXPECT_NEAR(equivariance_loss(constant_rect_vars(tape, a), constant_rect_vars(tape, b)).value().item(), expect,
              1e-13);
}

TEST(CombinedLoss, Values) {
  Tape tape;
  const Var main = tape.constant(Tensor(Shape{}, 1.0));
  const Var eq = tape.constant(Tensor(Shape{}, 2.0));
  EXPECT_NEAR(combined_loss(main, eq, 0.1).value().item(), 1.2, 1e-15);
  EXPECT_EQ(combined_loss(main, eq, 0.0).value().item(), 1.0);
  EXPECT_THROW(combined_loss(main, eq, -0.1), DomainError);
}

TEST(TransformSpecJson, Format) {
  TransformSpec t;
  t.delta_alpha = 0.25;
  t.delta_sigma = 1.5;
  t.delta_mu = {-0.125, 0.0};
  EXPECT_EQ(transform_spec_json(t), "{\"delta_alpha\":0.25,\"delta_sigma\":1.5,\"delta_mu\":[-0.125,0]}");
}

// The rectangle transformed in parameter space covers the same pixels as the
// warped rendering of the original rectangle.
TEST(Consistency, RenderedTransformMatchesWarpedRender) {
  Rng rng(10);
  RectAttentionConfig bounds;
  EquivarianceConfig cfg;
  for (int trial = 0; trial < 20; ++trial) {
    const RectParams p{{uniform(rng, 0.35, 0.65), uniform(rng, 0.35, 0.65)},
                       {uniform(rng, 0.15, 0.3), uniform(rng, 0.15, 0.3)}, uniform(rng, -kPi, kPi)};
    const TransformSpec t = sample_transform(rng, cfg);
    const std::size_t n = 48;
    const Tensor warped = warp_image(render_map(p, 50.0, n, n).reshaped({1, n, n}), t, kCenter).reshaped({n, n});
    const BinaryMask a = binarize(warped);
    const BinaryMask b = binarize(render_map(transform_params(p, t, kCenter, bounds), 50.0, n, n));
    EXPECT_GE(iou_bruteforce(a, b), 0.9) << trial;
  }
}
