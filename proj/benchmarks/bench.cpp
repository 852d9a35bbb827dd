#include <benchmark/benchmark.h>

#include "ntta/mdm.hpp"
#include "ntta/model.hpp"
#include "ntta/objectives.hpp"
#include "ntta/ops.hpp"
#include "ntta/tta.hpp"

using namespace ntta;

namespace {

Tensor<float> random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.normal());
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_tensor({n, n}, 1);
  const auto b = random_tensor({n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b).data().data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_MdmForward(benchmark::State& state) {
  Rng rng(3);
  Mdm<float> mdm(MdmConfig{}, 128, rng);
  const auto x = random_tensor({32, 8, 128}, 4);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(mdm.forward(x).data().data());
}
BENCHMARK(BM_MdmForward);

void BM_ModelInfer(benchmark::State& state) {
  Model<float> model(ModelConfig{}, 0);
  const auto x = random_tensor({32, 8, 128}, 5);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x, Mode::infer).logits.data().data());
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_ModelInfer)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  Model<float> model(ModelConfig{}, 0);
  const auto x = random_tensor({32, 8, 128}, 6);
  std::vector<int> labels(32);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 10);
  for (auto _ : state) {
    auto loss = training_loss(model, x, labels, SdOptions{});
    backward(loss.total);
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_TentStep(benchmark::State& state) {
  Model<float> model(ModelConfig{}, 0);
  auto adapt = collect_adaptable(model);
  const auto x = random_tensor({32, 8, 128}, 7);
  for (auto _ : state) benchmark::DoNotOptimize(adapt_batch(adapt, model, x).entropy);
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_TentStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
