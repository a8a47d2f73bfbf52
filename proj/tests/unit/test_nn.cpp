#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "rectattn/checkpoint.hpp"
#include "rectattn/errors.hpp"
#include "rectattn/nn.hpp"
#include "test_util.hpp"

using namespace rectattn;
using rectattn::testing::max_abs_diff;
using rectattn::testing::random_int_tensor;
using rectattn::testing::random_tensor;

namespace {

// Direct 6-loop cross-correlation over [C,H,W].
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor* b, const ConvGeometry& g) {
  const std::size_t c = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t o = w.dim(0), k = w.dim(2);
  const std::size_t oh = (h + 2 * g.padding - g.dilation * (k - 1) - 1) / g.stride + 1;
  const std::size_t ow = (wd + 2 * g.padding - g.dilation * (k - 1) - 1) / g.stride + 1;
  Tensor y(Shape{o, oh, ow});
  for (std::size_t oc = 0; oc < o; ++oc)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double acc = b ? (*b)[oc] : 0.0;
        for (std::size_t ic = 0; ic < c; ++ic)
          for (std::size_t ki = 0; ki < k; ++ki)
            for (std::size_t kj = 0; kj < k; ++kj) {
              const long r = long(i * g.stride + ki * g.dilation) - long(g.padding);
              const long q = long(j * g.stride + kj * g.dilation) - long(g.padding);
              if (r < 0 || q < 0 || r >= long(h) || q >= long(wd)) continue;
              acc += w[((oc * c + ic) * k + ki) * k + kj] * x[(ic * h + std::size_t(r)) * wd + std::size_t(q)];
            }
        y[(oc * oh + i) * ow + j] = acc;
      }
  return y;
}

Tensor conv_value(const Tensor& x, const Tensor& w, const Tensor* b, const ConvGeometry& g) {
  Tape tape;
  return conv2d(tape.constant(x), tape.constant(w), b ? tape.constant(*b) : Var{}, g).value();
}

}  // namespace

TEST(Conv2d, OneByOneIdentity) {
  Rng rng(1);
  const Tensor x = random_tensor(rng, {1, 5, 4});
  EXPECT_EQ(conv_value(x, Tensor(Shape{1, 1, 1, 1}, 1.0), nullptr, {}), x);
}

TEST(Conv2d, OnesKernelOnConstantImage) {
  const double c = 0.7;
  const Tensor y = conv_value(Tensor(Shape{1, 6, 6}, c), Tensor(Shape{1, 1, 3, 3}, 1.0), nullptr, {1, 1, 1});
  EXPECT_DOUBLE_EQ(y[2 * 6 + 3], 9 * c);
  EXPECT_DOUBLE_EQ(y[0], 4 * c);
  EXPECT_DOUBLE_EQ(y[3], 6 * c);
}

TEST(Conv2d, SamePaddingPreservesExtent) {
  EXPECT_EQ(conv_output_extent(48, 3, {1, 1, 1}), 48u);
  EXPECT_EQ(conv_output_extent(12, 3, {1, 4, 4}), 12u);
  EXPECT_EQ(conv_output_extent(10, 3, {2, 0, 1}), 4u);
  EXPECT_THROW(conv_output_extent(2, 3, {1, 0, 1}), ShapeError);
}

TEST(Conv2d, MatchesNaiveLoopExactlyOnIntegers) {
  Rng rng(2);
  const ConvGeometry geos[] = {{1, 0, 1}, {1, 1, 1}, {2, 1, 1}, {1, 2, 2}, {2, 0, 2}};
  for (const auto& g : geos) {
    const Tensor x = random_int_tensor(rng, {3, 9, 8});
    const Tensor w = random_int_tensor(rng, {4, 3, 3, 3});
    const Tensor b = random_int_tensor(rng, {4});
    EXPECT_EQ(conv_value(x, w, &b, g), naive_conv(x, w, &b, g));
  }
}

TEST(Conv2d, MatchesNaiveLoopOnReals) {
  Rng rng(3);
  const Tensor x = random_tensor(rng, {5, 7, 7});
  const Tensor w = random_tensor(rng, {6, 5, 3, 3});
  const Tensor b = random_tensor(rng, {6});
  EXPECT_LE(max_abs_diff(conv_value(x, w, &b, {1, 1, 1}), naive_conv(x, w, &b, {1, 1, 1})), 1e-13);
}

TEST(Conv2d, BatchedEqualsPerSample) {
  Rng rng(4);
  const Tensor x = random_int_tensor(rng, {3, 2, 6, 6});
  const Tensor w = random_int_tensor(rng, {4, 2, 3, 3});
  const Tensor y = conv_value(x, w, nullptr, {1, 1, 1});
  for (std::size_t n = 0; n < 3; ++n) {
    Tensor xn(Shape{2, 6, 6}, std::vector<double>(x.data().begin() + n * 72, x.data().begin() + (n + 1) * 72));
    const Tensor yn = naive_conv(xn, w, nullptr, {1, 1, 1});
    for (std::size_t i = 0; i < yn.numel(); ++i) EXPECT_EQ(y[n * yn.numel() + i], yn[i]);
  }
}

TEST(Conv2d, ChannelMismatch) {
  EXPECT_THROW(conv_value(Tensor(Shape{2, 5, 5}), Tensor(Shape{1, 3, 3, 3}), nullptr, {}), ShapeError);
}

TEST(Conv2d, GradCheck) {
  Rng rng(5);
  const Tensor x = random_tensor(rng, {2, 2, 6, 5});
  const Tensor w = random_tensor(rng, {3, 2, 3, 3});
  const Tensor b = random_tensor(rng, {3});
  const ConvGeometry g{2, 2, 2};
  EXPECT_LE(grad_check([&](Tape& t, const Var& v) { return sum(square(conv2d(v, t.constant(w), t.constant(b), g))); },
                       x),
            1e-4);
  EXPECT_LE(grad_check([&](Tape& t, const Var& v) { return sum(square(conv2d(t.constant(x), v, t.constant(b), g))); },
                       w),
            1e-4);
  EXPECT_LE(grad_check([&](Tape& t, const Var& v) { return sum(square(conv2d(t.constant(x), t.constant(w), v, g))); },
                       b),
            1e-4);
}

TEST(MaxPool, Values) {
  Tape tape;
  EXPECT_EQ(maxpool2d(tape.constant(Tensor(Shape{1, 2, 2}, {1, 2, 3, 4})), 2).value(), Tensor(Shape{1, 1, 1}, {4}));
  EXPECT_EQ(maxpool2d(tape.constant(Tensor(Shape{2, 4, 4}, 0.3)), 2).value(), Tensor(Shape{2, 2, 2}, 0.3));
  const Var p = maxpool2d(maxpool2d(tape.constant(Tensor(Shape{1, 16, 16})), 2), 2);
  EXPECT_EQ(p.shape(), (Shape{1, 4, 4}));
  EXPECT_THROW(maxpool2d(tape.constant(Tensor(Shape{1, 5, 4})), 2), ShapeError);
}

TEST(MaxPool, TieRoutesToFirstMaximum) {
  Tape tape;
  const Var x = tape.leaf(Tensor(Shape{1, 2, 2}, 1.0));
  EXPECT_EQ(backward(sum(maxpool2d(x, 2))).at(x), Tensor(Shape{1, 2, 2}, {1, 0, 0, 0}));
}

TEST(MaxPool, GradCheck) {
  Rng rng(6);
  EXPECT_LE(grad_check([](Tape&, const Var& v) { return sum(square(maxpool2d(v, 2))); },
                       random_tensor(rng, {2, 3, 4, 6})),
            1e-4);
}

TEST(GlobalAvgPool, Values) {
  Tape tape;
  EXPECT_EQ(global_avg_pool(tape.constant(Tensor(Shape{1, 3, 3}, 2.5))).value(), Tensor::vector({2.5}));
  EXPECT_EQ(global_avg_pool(tape.constant(Tensor(Shape{1, 2, 2}, {0, 2, 4, 6}))).value(), Tensor::vector({3}));
  Rng rng(7);
  const Tensor x = random_tensor(rng, {2, 3, 4, 5});
  const Tensor y = global_avg_pool(tape.constant(x)).value();
  ASSERT_EQ(y.shape(), (Shape{2, 3}));
  for (std::size_t nc = 0; nc < 6; ++nc) {
    double acc = 0.0;
    for (std::size_t k = 0; k < 20; ++k) acc += x[nc * 20 + k];
    EXPECT_EQ(y[nc], acc / 20.0);
  }
  EXPECT_LE(grad_check([](Tape&, const Var& v) { return sum(square(global_avg_pool(v))); }, x), 1e-4);
}

TEST(Linear, Values) {
  Tape tape;
  const Tensor x = Tensor::vector({2, 3});
  EXPECT_EQ(linear(tape.constant(x), tape.constant(Tensor::matrix({{1, 0}, {0, 1}})), tape.constant(Tensor::vector({0, 0})))
                .value(),
            x);
  EXPECT_EQ(linear(tape.constant(x), tape.constant(Tensor::matrix({{1, 1}})), tape.constant(Tensor::vector({1})))
                .value(),
            Tensor::vector({6}));
  EXPECT_THROW(linear(tape.constant(x), tape.constant(Tensor(Shape{2, 3})), tape.constant(Tensor(Shape{2}))),
               ShapeError);
}

TEST(Linear, MatchesMatmulAndGradCheck) {
  Rng rng(8);
  const Tensor x = random_tensor(rng, {4, 3});
  const Tensor w = random_tensor(rng, {5, 3});
  const Tensor b = random_tensor(rng, {5});
  Tape tape;
  const Tensor y = linear(tape.constant(x), tape.constant(w), tape.constant(b)).value();
  Tensor wt(Shape{3, 5});
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) wt[j * 5 + i] = w[i * 3 + j];
  const Tensor ref = (matmul(tape.constant(x), tape.constant(wt)) + tape.constant(b)).value();
  EXPECT_LE(max_abs_diff(y, ref), 1e-15);
  EXPECT_LE(grad_check([&](Tape& t, const Var& v) { return sum(square(linear(v, t.constant(w), t.constant(b)))); }, x),
            1e-4);
  EXPECT_LE(grad_check([&](Tape& t, const Var& v) { return sum(square(linear(t.constant(x), v, t.constant(b)))); }, w),
            1e-4);
}

TEST(CrossEntropy, Values) {
  Tape tape;
  const int label[] = {2};
  EXPECT_NEAR(softmax_cross_entropy(tape.constant(Tensor::vector({0.3, 0.3, 0.3, 0.3})), label).value().item(),
              std::log(4.0), 1e-15);
  EXPECT_LE(softmax_cross_entropy(tape.constant(Tensor::vector({0, 0, 1000, 0})), label).value().item(), 1e-6);
  const int bad[] = {4};
  EXPECT_THROW(softmax_cross_entropy(tape.constant(Tensor::vector({0, 0, 0, 0})), bad), DomainError);
}

TEST(CrossEntropy, GradientSumsToZero) {
  Rng rng(9);
  Tape tape;
  const Var logits = tape.leaf(random_tensor(rng, {3, 5}, -3, 3));
  const int labels[] = {0, 4, 2};
  const Tensor g = backward(softmax_cross_entropy(logits, labels)).at(logits);
  for (std::size_t n = 0; n < 3; ++n) {
    double s = 0.0;
    for (std::size_t k = 0; k < 5; ++k) s += g[n * 5 + k];
    EXPECT_NEAR(s, 0.0, 1e-16);
  }
  EXPECT_LE(grad_check([&](Tape&, const Var& v) { return softmax_cross_entropy(v, labels); }, logits.value()), 1e-4);
}

TEST(Adam, ZeroGradientLeavesParams) {
  Rng rng(10);
  Parameter p{"p", random_tensor(rng, {4})};
  const Tensor before = p.value;
  AdamState st;
  Parameter* ps[] = {&p};
  const Tensor g[] = {Tensor(Shape{4}, 0.0)};
  adam_step(st, ps, g);
  EXPECT_EQ(p.value, before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter p{"p", Tensor::vector({1.0, -2.0, 0.5})};
  AdamState st;
  Parameter* ps[] = {&p};
  const Tensor g[] = {Tensor::vector({3.0, -0.01, 1e-3})};
  adam_step(st, ps, g);
  EXPECT_NEAR(p.value[0], 1.0 - 1e-4, 1e-10);
  EXPECT_NEAR(p.value[1], -2.0 + 1e-4, 1e-9);
  EXPECT_NEAR(p.value[2], 0.5 - 1e-4, 1e-8);
  EXPECT_EQ(st.step_count, 1u);
}

TEST(Adam, TwoStepsMatchHandUnrolled) {
  Parameter p{"p", Tensor::vector({0.4})};
  AdamState st;
  st.lr = 0.01;
  Parameter* ps[] = {&p};
  const double g1 = 0.3, g2 = -0.7;
  const Tensor ga[] = {Tensor::vector({g1})};
  const Tensor gb[] = {Tensor::vector({g2})};
  adam_step(st, ps, ga);
  adam_step(st, ps, gb);
  double theta = 0.4, m = 0.0, v = 0.0;
  int t = 0;
  for (double g : {g1, g2}) {
    ++t;
    m = 0.9 * m + (1.0 - 0.9) * g;
    v = 0.999 * v + (1.0 - 0.999) * g * g;
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    theta -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
  }
  EXPECT_EQ(p.value[0], theta);
}

TEST(Adam, ShapeMismatch) {
  Parameter p{"p", Tensor::vector({1.0, 2.0})};
  AdamState st;
  Parameter* ps[] = {&p};
  const Tensor g[] = {Tensor::vector({1.0})};
  EXPECT_THROW(adam_step(st, ps, g), ShapeError);
}

TEST(Init, DeterministicAndBounded) {
  Rng a(11), b(11), c(12);
  const Conv2D la = Conv2D::create("c", 3, 8, 3, {}, a);
  const Conv2D lb = Conv2D::create("c", 3, 8, 3, {}, b);
  const Conv2D lc = Conv2D::create("c", 3, 8, 3, {}, c);
  EXPECT_EQ(la.weight.value, lb.weight.value);
  EXPECT_NE(la.weight.value, lc.weight.value);
  const double bound = std::sqrt(1.0 / 27.0);
  for (double v : la.weight.value.data()) EXPECT_LE(std::abs(v), bound);
  for (double v : la.bias.value.data()) EXPECT_EQ(v, 0.0);
}

TEST(Training, SeparableToyLossDecreases) {
  int monotone_seeds = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Tensor x(Shape{40, 2});
    std::vector<int> y(40);
    for (std::size_t i = 0; i < 40; ++i) {
      y[i] = int(i % 2);
      x[2 * i] = uniform(rng, 0.2, 1.0) * (y[i] ? 1.0 : -1.0);
      x[2 * i + 1] = uniform(rng, -1.0, 1.0);
    }
    Linear layer = Linear::create("toy", 2, 2, rng);
    auto params = layer.parameters();
    AdamState st;
    st.lr = 0.05;
    double prev = 1e9;
    bool monotone = true;
    for (int step = 0; step < 10; ++step) {
      Tape tape;
      ParamBinder bind(tape);
      const Var loss = softmax_cross_entropy(layer.forward(bind, tape.constant(x)), y);
      if (loss.value().item() >= prev) monotone = false;
      prev = loss.value().item();
      adam_step(st, params, bind.gradients(backward(loss), params));
    }
    if (monotone) ++monotone_seeds;
  }
  EXPECT_GE(monotone_seeds, 9);
}

TEST(ParamBinder, UnusedParameterHasZeroGradient) {
  Parameter used{"u", Tensor::vector({2.0})}, unused{"n", Tensor::vector({1.0, 1.0})};
  Tape tape;
  ParamBinder bind(tape);
  const Var u = bind(used);
  EXPECT_EQ(bind(used).id(), u.id());
  const Gradients g = backward(sum(square(u)));
  EXPECT_EQ(bind.gradient(g, used), Tensor::vector({4.0}));
  EXPECT_EQ(bind.gradient(g, unused), Tensor(Shape{2}, 0.0));
}

TEST(Checkpoint, RoundTripAndErrors) {
  const auto dir = std::filesystem::temp_directory_path() / "rectattn_test_nn";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "a.ckpt").string();
  Rng rng(13);
  Linear l = Linear::create("fc", 3, 2, rng);
  l.bias.value = Tensor::vector({0.25, -1.5});
  save_checkpoint(path, l.parameters());
  const auto read = read_checkpoint(path);
  ASSERT_EQ(read.size(), 2u);
  EXPECT_EQ(read[0].name, "fc.weight");
  EXPECT_EQ(read[0].value, l.weight.value);
  EXPECT_EQ(read[1].value, l.bias.value);

  Rng other(14);
  Linear m = Linear::create("fc", 3, 2, other);
  load_checkpoint(path, m.parameters());
  EXPECT_EQ(m.weight.value, l.weight.value);

  Linear wrong = Linear::create("fc", 4, 2, other);
  EXPECT_THROW(load_checkpoint(path, wrong.parameters()), ShapeError);
  Linear missing = Linear::create("other", 3, 2, other);
  EXPECT_THROW(load_checkpoint(path, missing.parameters()), ShapeError);

  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  EXPECT_THROW(read_checkpoint(path), FormatError);
  EXPECT_THROW(read_checkpoint((dir / "absent.ckpt").string()), IoError);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, ByteLayout) {
  const auto dir = std::filesystem::temp_directory_path() / "rectattn_test_layout";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "b.ckpt").string();
  Parameter p{"ab", Tensor(Shape{2}, {1.0, -2.0})};
  Parameter* ps[] = {&p};
  save_checkpoint(path, ps);
  std::ifstream in(path, std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
  // magic 4 + version 4 + name_len 4 + name 2 + rank 4 + extent 8 + data 16
  ASSERT_EQ(bytes.size(), 42u);
  EXPECT_EQ(std::string(bytes.data(), 4), "RATN");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[8], 2);
  EXPECT_EQ(std::string(bytes.data() + 12, 2), "ab");
  EXPECT_EQ(bytes[14], 1);
  EXPECT_EQ(bytes[18], 2);
  double d;
  std::memcpy(&d, bytes.data() + 34, 8);
  EXPECT_EQ(d, -2.0);
  std::filesystem::remove_all(dir);
}
