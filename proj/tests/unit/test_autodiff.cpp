#include <gtest/gtest.h>

#include <cmath>

#include "rectattn/autodiff.hpp"
#include "rectattn/errors.hpp"
#include "rectattn/nn.hpp"
#include "rectattn/rect_attention.hpp"
#include "test_util.hpp"

using namespace rectattn;
using rectattn::testing::random_int_tensor;
using rectattn::testing::random_tensor;

namespace {

double eval_unary(UnaryKind k, double x) {
  Tape tape;
  return unary(k, tape.constant(Tensor::scalar(x))).value().item();
}

}  // namespace

TEST(Tensor, ShapeAndData) {
  Tensor t(Shape{2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.dim(1), 3u);
  EXPECT_EQ(Tensor::scalar(4.0).item(), 4.0);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>(3)), ShapeError);
  EXPECT_THROW(t.reshaped(Shape{4}), ShapeError);
  EXPECT_EQ(t.reshaped(Shape{3, 2}).shape(), (Shape{3, 2}));
}

TEST(Unary, KnownValues) {
  EXPECT_EQ(eval_unary(UnaryKind::sigmoid, 0.0), 0.5);
  EXPECT_NEAR(eval_unary(UnaryKind::sigmoid, 10.0), 0.9999546, 1e-7);
  EXPECT_NEAR(eval_unary(UnaryKind::sigmoid, 10.0), std::exp(10.0) / (std::exp(10.0) + 1.0), 1e-15);
  EXPECT_EQ(eval_unary(UnaryKind::relu, -1.0), 0.0);
  EXPECT_EQ(eval_unary(UnaryKind::relu, 2.5), 2.5);
  EXPECT_NEAR(eval_unary(UnaryKind::softplus, 0.0), std::log(2.0), 1e-15);
  EXPECT_EQ(eval_unary(UnaryKind::square, -3.0), 9.0);
  EXPECT_EQ(eval_unary(UnaryKind::neg, 2.0), -2.0);
}

TEST(Unary, StableAtExtremes) {
  EXPECT_EQ(eval_unary(UnaryKind::sigmoid, -800.0), 0.0);
  EXPECT_EQ(eval_unary(UnaryKind::sigmoid, 800.0), 1.0);
  EXPECT_NEAR(eval_unary(UnaryKind::softplus, 800.0), 800.0, 1e-12);
  EXPECT_TRUE(std::isfinite(eval_unary(UnaryKind::softplus, -800.0)));
}

TEST(Binary, ElementwiseAndBroadcast) {
  Tape tape;
  const Var a = tape.constant(Tensor::vector({1, 2}));
  const Var b = tape.constant(Tensor::vector({3, 4}));
  EXPECT_EQ((a + b).value(), Tensor::vector({4, 6}));
  const Var two = tape.constant(Tensor::scalar(2.0));
  EXPECT_EQ((two * tape.constant(Tensor::vector({1, 2, 3}))).value(), Tensor::vector({2, 4, 6}));
  EXPECT_EQ((a - b).value(), Tensor::vector({-2, -2}));
  EXPECT_EQ((b / a).value(), Tensor::vector({3, 2}));
}

TEST(Binary, Errors) {
  Tape tape;
  EXPECT_THROW(tape.constant(Tensor::vector({1})) / tape.constant(Tensor::vector({0})), DomainError);
  EXPECT_THROW(tape.constant(Tensor::vector({1, 2})) + tape.constant(Tensor::vector({1, 2, 3})), ShapeError);
  EXPECT_THROW(broadcast_shape(Shape{2, 3}, Shape{3, 3}), ShapeError);
  EXPECT_EQ(broadcast_shape(Shape{4, 1, 3}, Shape{2, 1}), (Shape{4, 2, 3}));
}

TEST(Binary, BroadcastMatchesExplicitTiling) {
  Rng rng(7);
  const Tensor a = random_tensor(rng, {3, 4, 5});
  const Tensor b = random_tensor(rng, {4, 1});
  Tensor tiled(Shape{3, 4, 5});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t k = 0; k < 5; ++k) tiled[(i * 4 + j) * 5 + k] = b[j];
  for (BinaryKind kind : {BinaryKind::add, BinaryKind::sub, BinaryKind::mul, BinaryKind::div}) {
    Tape tape;
    const Tensor bc = binary(kind, tape.constant(a), tape.constant(b)).value();
    const Tensor ex = binary(kind, tape.constant(a), tape.constant(tiled)).value();
    EXPECT_EQ(bc, ex);
  }
}

TEST(Matmul, Identity) {
  Tape tape;
  const Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(matmul(tape.constant(Tensor::matrix({{1, 0}, {0, 1}})), tape.constant(m)).value(), m);
  EXPECT_EQ(matmul(tape.constant(Tensor::matrix({{1, 0}})), tape.constant(Tensor::matrix({{5}, {7}}))).value(),
            Tensor::matrix({{5}}));
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = random_int_tensor(rng, {3, 4}), b = random_int_tensor(rng, {4, 2});
    Tensor ref(Shape{3, 2});
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t k = 0; k < 4; ++k) ref[i * 2 + j] += a[i * 4 + k] * b[k * 2 + j];
    Tape tape;
    EXPECT_EQ(matmul(tape.constant(a), tape.constant(b)).value(), ref);
  }
}

TEST(Matmul, DimensionMismatch) {
  Tape tape;
  EXPECT_THROW(matmul(tape.constant(Tensor(Shape{2, 3})), tape.constant(Tensor(Shape{2, 3}))), ShapeError);
}

TEST(Backward, AnalyticGradients) {
  {
    Tape tape;
    const Var x = tape.leaf(Tensor::scalar(3.0));
    EXPECT_NEAR(backward(square(x)).at(x).item(), 6.0, 1e-9);
  }
  {
    Tape tape;
    const Var x = tape.leaf(Tensor::scalar(0.0));
    EXPECT_EQ(backward(sigmoid(x)).at(x).item(), 0.25);
  }
}

TEST(Backward, ParticipationAndErrors) {
  Tape tape;
  const Var x = tape.leaf(Tensor::vector({1, 2}));
  const Var c = tape.constant(Tensor::vector({3, 4}));
  const Gradients g = backward(sum(x * c));
  EXPECT_TRUE(g.contains(x));
  EXPECT_FALSE(g.contains(c));
  EXPECT_EQ(g.at(x), Tensor::vector({3, 4}));
  EXPECT_EQ(g.at(x).shape(), x.shape());
  EXPECT_THROW(backward(x * c), ShapeError);
  EXPECT_THROW(backward(sum(c)), DomainError);
  EXPECT_THROW(backward(Var{}), std::exception);
}

TEST(Backward, ReusedNodeAccumulates) {
  Tape tape;
  const Var x = tape.leaf(Tensor::scalar(2.0));
  // d/dx (x*x + x) = 2x + 1
  EXPECT_EQ(backward(x * x + x).at(x).item(), 5.0);
}

TEST(GradCheck, SumOfSquares) {
  Rng rng(1);
  const double err = grad_check([](Tape&, const Var& x) { return sum(square(x)); }, random_tensor(rng, {4, 3}));
  EXPECT_LE(err, 1e-8);
}

TEST(GradCheck, ConvSigmoidChain) {
  Rng rng(2);
  const Tensor w = random_tensor(rng, {3, 2, 3, 3});
  const Tensor b = random_tensor(rng, {3});
  auto fn = [&](Tape& tape, const Var& x) {
    return sum(sigmoid(conv2d(x, tape.constant(w), tape.constant(b), ConvGeometry{1, 1, 1})));
  };
  EXPECT_LE(grad_check(fn, random_tensor(rng, {2, 5, 5})), 1e-5);
}

TEST(GradCheck, RenderOfSquashedParams) {
  Rng rng(3);
  RectAttentionConfig cfg;
  auto fn = [&](Tape&, const Var& raw) {
    const Var m = render_map(squash_raw_params(raw, cfg), cfg.sharpness, 7, 6);
    return sum(m * m);
  };
  EXPECT_LE(grad_check(fn, random_tensor(rng, {5})), 1e-4);
}

TEST(GradCheck, EveryElementwiseOp) {
  Rng rng(4);
  const Tensor x = random_tensor(rng, {2, 3}, 0.2, 1.5);
  const Tensor y = random_tensor(rng, {3}, 0.5, 2.0);
  for (UnaryKind k : {UnaryKind::sigmoid, UnaryKind::tanh, UnaryKind::softplus, UnaryKind::square, UnaryKind::neg,
                      UnaryKind::sin, UnaryKind::cos, UnaryKind::exp, UnaryKind::relu}) {
    EXPECT_LE(grad_check([k](Tape&, const Var& v) { return sum(unary(k, v)); }, x), 1e-6);
  }
  for (BinaryKind k : {BinaryKind::add, BinaryKind::sub, BinaryKind::mul, BinaryKind::div}) {
    auto lhs = [&, k](Tape& t, const Var& v) { return sum(binary(k, v, t.constant(y))); };
    auto rhs = [&, k](Tape& t, const Var& v) { return sum(binary(k, t.constant(x), v)); };
    EXPECT_LE(grad_check(lhs, x), 1e-6);
    EXPECT_LE(grad_check(rhs, y), 1e-6);
  }
}

TEST(GradCheck, StructuralOps) {
  Rng rng(5);
  const Tensor x = random_tensor(rng, {2, 3, 4});
  const Tensor w = random_tensor(rng, {4, 3});
  EXPECT_LE(grad_check([](Tape&, const Var& v) { return sum(square(sum_axis(v, 1))); }, x), 1e-6);
  EXPECT_LE(grad_check([](Tape&, const Var& v) { return sum(square(select(v, 2, 1))); }, x), 1e-6);
  EXPECT_LE(grad_check([](Tape&, const Var& v) { return mean(square(reshape(v, {6, 4}))); }, x), 1e-6);
  EXPECT_LE(grad_check([&](Tape& t, const Var& v) { return sum(square(matmul(reshape(v, {6, 4}), t.constant(w)))); },
                       x),
            1e-6);
  EXPECT_LE(grad_check(
                [](Tape&, const Var& v) {
                  const Var parts[] = {select(v, 0, 0), square(select(v, 0, 1))};
                  return sum(stack(parts, 1) * stack(parts, 1));
                },
                x),
            1e-6);
  EXPECT_LE(grad_check([](Tape&, const Var& v) { return sum(square(clamp(v, -2.0, 2.0))); }, x), 1e-6);
  EXPECT_LE(grad_check([](Tape&, const Var& v) { return sum(square(wrap_angle(v * 0.5))); }, x), 1e-6);
}

TEST(Clamp, GradientVanishesOutside) {
  Tape tape;
  const Var x = tape.leaf(Tensor::vector({-5, 0.5, 5}));
  EXPECT_EQ(backward(sum(clamp(x, 0.0, 1.0))).at(x), Tensor::vector({0, 1, 0}));
}

TEST(WrapAngle, Range) {
  Tape tape;
  const Var x = tape.constant(Tensor::vector({3.5, -3.5, std::numbers::pi, -std::numbers::pi}));
  const Tensor y = wrap_angle(x).value();
  EXPECT_NEAR(y[0], 3.5 - 2 * std::numbers::pi, 1e-15);
  EXPECT_NEAR(y[1], -3.5 + 2 * std::numbers::pi, 1e-15);
  EXPECT_EQ(y[2], std::numbers::pi);
  EXPECT_EQ(y[3], std::numbers::pi);
}

TEST(Determinism, RepeatedForwardIsBitIdentical) {
  Rng rng(9);
  const Tensor x = random_tensor(rng, {2, 3, 8, 8});
  const Tensor w = random_tensor(rng, {4, 3, 3, 3});
  auto run = [&] {
    Tape tape;
    return sigmoid(conv2d(tape.constant(x), tape.constant(w), Var{}, ConvGeometry{1, 1, 1})).value();
  };
  EXPECT_EQ(run(), run());
}
