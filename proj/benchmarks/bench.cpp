#include <random>

#include <benchmark/benchmark.h>

#include "cssl/codec.hpp"
#include "cssl/data.hpp"
#include "cssl/logging.hpp"
#include "cssl/metrics.hpp"
#include "cssl/netcore.hpp"
#include "cssl/replay.hpp"
#include "cssl/stream.hpp"

using namespace cssl;

namespace {

std::vector<double> unit_vector(std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  std::vector<double> x(d);
  double s = 0.0;
  for (auto& v : x) {
    v = n(rng);
    s += v * v;
  }
  for (auto& v : x) v /= std::sqrt(s);
  return x;
}

void BM_ForwardBackward(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto p = init_params({64, m, 3, 10}, 1, Mode::kPractical);
  const auto x = unit_vector(64, 2);
  for (auto _ : state) {
    auto g = backward(p, forward(p, x), ClassLabel{3});
    benchmark::DoNotOptimize(g);
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(64)->Arg(256)->Arg(1024);

void BM_StreamStep(benchmark::State& state) {
  set_log_level(LogLevel::kError);
  SyntheticSpec spec;
  spec.d = 16;
  spec.per_class = 250;
  const auto data = gen_synthetic(spec);
  StreamConfig cfg;
  cfg.replay_samples = static_cast<std::size_t>(state.range(0));
  const std::vector<TaskData> tasks{{"blobs", 4, data.train, data.test}};
  auto st = initialize(cfg, tasks);
  std::size_t i = 0;
  for (auto _ : state) {
    auto r = step(cfg, st, data.train[i++ % data.train.size()]);
    benchmark::DoNotOptimize(r);
  }
}
BENCHMARK(BM_StreamStep)->Arg(0)->Arg(4)->Arg(16);

void BM_BufferStore(benchmark::State& state) {
  ReplayBuffer b(200, Codec{}, static_cast<EvictionPolicy>(state.range(0)), 3);
  const auto x = unit_vector(16, 4);
  int i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(b.store(Example::vector(x, i++ % 10)));
}
BENCHMARK(BM_BufferStore)->DenseRange(0, 2);

void BM_EncodeImage(benchmark::State& state) {
  std::mt19937_64 rng(5);
  std::vector<double> px(32 * 32 * 3);
  for (auto& v : px) v = static_cast<double>(rng() % 256);
  Example e;
  e.features = px;
  e.kind = FeatureKind::kPixels;
  e.shape = {32, 32, 3};
  const Codec c{static_cast<int>(state.range(0)), 0.5};
  for (auto _ : state) benchmark::DoNotOptimize(encode(e, c));
}
BENCHMARK(BM_EncodeImage)->Arg(4)->Arg(8);

void BM_Ece(benchmark::State& state) {
  std::mt19937_64 rng(6);
  std::vector<Prediction> preds(static_cast<std::size_t>(state.range(0)));
  for (auto& p : preds) {
    p.predicted = static_cast<int>(rng() % 10);
    p.label = static_cast<int>(rng() % 10);
    p.confidence = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  }
  for (auto _ : state) benchmark::DoNotOptimize(ece(preds, 15));
}
BENCHMARK(BM_Ece)->Arg(10000);

}  // namespace

BENCHMARK_MAIN();
