#include <benchmark/benchmark.h>

#include "rectattn/harness.hpp"
#include "rectattn/nn.hpp"
#include "rectattn/rect_attention.hpp"
#include "rectattn/theory.hpp"

using namespace rectattn;

namespace {

Tensor random_tensor(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = uniform(rng, -1.0, 1.0);
  return t;
}

// conv forward + backward, args: in channels, out channels, extent
void BM_Conv2dForwardBackward(benchmark::State& state) {
  const auto cin = static_cast<std::size_t>(state.range(0));
  const auto cout = static_cast<std::size_t>(state.range(1));
  const auto hw = static_cast<std::size_t>(state.range(2));
  Rng rng(1);
  Conv2D conv = Conv2D::create("c", cin, cout, 3, {1, 1, 1}, rng);
  const Tensor x = random_tensor(rng, {32, cin, hw, hw});
  for (auto _ : state) {
    Tape tape;
    ParamBinder bind(tape);
    const Var y = conv.forward(bind, tape.constant(x));
    benchmark::DoNotOptimize(backward(sum(y)));
  }
  state.counters["MAC/s"] = benchmark::Counter(double(32 * cout * cin * 9 * hw * hw) * 3.0 * double(state.iterations()),
                                               benchmark::Counter::kIsRate);
}
BENCHMARK(BM_Conv2dForwardBackward)->Args({1, 16, 48})->Args({16, 32, 24})->Args({32, 64, 12})->Unit(benchmark::kMillisecond);

void BM_RenderMap(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const RectParams p{{0.4, 0.6}, {0.2, 0.3}, 0.5};
  for (auto _ : state) benchmark::DoNotOptimize(render_map(p, 6.0, n, n));
}
BENCHMARK(BM_RenderMap)->Arg(12)->Arg(48)->Arg(128);

void BM_RescaleMap(benchmark::State& state) {
  Rng rng(2);
  const Tensor f = random_tensor(rng, {32, 48, 48});
  for (auto _ : state) benchmark::DoNotOptimize(rescale_map(f));
}
BENCHMARK(BM_RescaleMap);

void BM_RelevanceRectangles4x4(benchmark::State& state) {
  const auto rects = MaskFamily::axis_rectangles(4, 4);
  for (auto _ : state) benchmark::DoNotOptimize(relevance_level(rects, rects));
}
BENCHMARK(BM_RelevanceRectangles4x4);

// One epoch over 64 default-size samples (two optimizer steps plus validation).
void BM_TrainEpoch(benchmark::State& state) {
  const Dataset tr = generate_dataset(4, 1, 48, 48, 64, 1);
  const Dataset va = generate_dataset(4, 1, 48, 48, 32, 2);
  TrainConfig cfg;
  cfg.attention_kind = static_cast<AttentionKind>(state.range(0));
  cfg.epochs = 1;
  for (auto _ : state) benchmark::DoNotOptimize(train(cfg, tr, va).rows.back().val_acc);
  state.SetLabel(to_string(cfg.attention_kind));
}
BENCHMARK(BM_TrainEpoch)
    ->Arg(static_cast<int>(AttentionKind::none))
    ->Arg(static_cast<int>(AttentionKind::position_wise))
    ->Arg(static_cast<int>(AttentionKind::rectangular))
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
