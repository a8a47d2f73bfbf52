#include <gtest/gtest.h>

#include "rectattn/errors.hpp"
#include "rectattn/harness.hpp"
#include "rectattn/pw_attention.hpp"
#include "rectattn/rect_attention.hpp"
#include "test_util.hpp"

using namespace rectattn;
using rectattn::testing::max_abs_diff;
using rectattn::testing::param_grad_error;
using rectattn::testing::random_tensor;

TEST(PWModule, PreservesSpatialSize) {
  Rng rng(1);
  const PWModule m = PWModule::create("pw", 3, rng, 6);
  for (std::size_t h : {9, 12, 17}) {
    Tape tape;
    ParamBinder bind(tape, false);
    const Var f = m.forward(bind, tape.constant(random_tensor(rng, {3, h, h + 2})));
    EXPECT_EQ(f.shape(), (Shape{h, h + 2}));
    for (double v : f.value().data()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
  Tape tape;
  ParamBinder bind(tape, false);
  EXPECT_EQ(m.forward(bind, tape.constant(random_tensor(rng, {2, 3, 12, 12}))).shape(), (Shape{2, 12, 12}));
  EXPECT_THROW(m.forward(bind, tape.constant(Tensor(Shape{2, 12, 12}))), ShapeError);
}

TEST(PWModule, ZeroWeightsGiveHalf) {
  Rng rng(2);
  PWModule m = PWModule::create("pw", 3, rng);
  for (Parameter* p : m.parameters())
    for (double& v : p->value.data()) v = 0.0;
  Tape tape;
  ParamBinder bind(tape, false);
  const Tensor f = m.forward(bind, tape.constant(random_tensor(rng, {3, 10, 10}))).value();
  EXPECT_EQ(f, Tensor(Shape{10, 10}, 0.5));
}

TEST(PWModule, LayerStack) {
  Rng rng(3);
  PWModule m = PWModule::create("pw", 32, rng);
  const auto ps = m.parameters();
  ASSERT_EQ(ps.size(), 8u);
  EXPECT_EQ(ps[0]->value.shape(), (Shape{80, 32, 1, 1}));
  EXPECT_EQ(ps[2]->value.shape(), (Shape{80, 80, 3, 3}));
  EXPECT_EQ(ps[4]->value.shape(), (Shape{80, 80, 3, 3}));
  EXPECT_EQ(ps[6]->value.shape(), (Shape{1, 80, 3, 3}));
}

TEST(PWApply, Values) {
  Rng rng(4);
  const Tensor x = random_tensor(rng, {2, 5, 5});
  Tape tape;
  const Var xv = tape.constant(x);
  EXPECT_EQ(pw_apply(xv, tape.constant(Tensor(Shape{5, 5}, 0.0))).value(), x);
  Tensor scaled = x;
  for (double& v : scaled.data()) v *= 1.5;
  EXPECT_LE(max_abs_diff(pw_apply(xv, tape.constant(Tensor(Shape{5, 5}, 0.5))).value(), scaled), 1e-15);
  const Tensor f = random_tensor(rng, {5, 5}, 0.0, 1.0);
  RectAttentionConfig cfg;
  cfg.use_rescale = false;
  EXPECT_EQ(pw_apply(xv, tape.constant(f)).value(), apply_attention(x, f, cfg));
}

TEST(PWModule, GradCheck) {
  Rng rng(5);
  PWModule m = PWModule::create("pw", 2, rng, 3);
  const Tensor x = random_tensor(rng, {2, 9, 9});
  EXPECT_LE(grad_check(
                [&](Tape& tape, const Var& v) {
                  ParamBinder bind(tape, false);
                  return sum(square(m.forward(bind, v)));
                },
                x),
            1e-4);
  for (Parameter* p : m.parameters()) {
    EXPECT_LE(param_grad_error(*p, [&](ParamBinder& b) { return sum(square(m.forward(b, b.tape().constant(x)))); }),
              1e-4)
        << p->name;
  }
}

// The position-wise module costs at least twice the multiply-accumulates of the
// rectangle predictor at the shallow slot (32 channels, 12x12). Its parameter
// count is lower: the predictor's widths grow while its resolution shrinks.
TEST(Complexity, PositionWiseVersusPredictor) {
  Rng rng(6);
  PWModule pw = PWModule::create("pw", 32, rng);
  PredictorNet rect = PredictorNet::create("rect", 32, rng);
  EXPECT_GE(pw.multiply_accumulates(12, 12), 2 * rect.multiply_accumulates(12, 12));
  EXPECT_LT(parameter_count(pw.parameters()), parameter_count(rect.parameters()));
}
