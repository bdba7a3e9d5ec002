#include <benchmark/benchmark.h>

#include <torch/torch.h>

#include "end2/core/config.hpp"
#include "end2/core/types.hpp"
#include "end2/distortions/distortions.hpp"
#include "end2/evaluation/metrics.hpp"
#include "end2/models/models.hpp"
#include "end2/training/trainer.hpp"

namespace {

end2::ImageBatch images(const end2::RunConfig& c, std::int64_t batch) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(1);
  return end2::ImageBatch{torch::rand({batch, 3, c.height, c.width}, gen)};
}

void BM_Encode(benchmark::State& state) {
  const auto c = end2::preset_config("desk");
  const auto bundle = end2::models::init_models(c, 0);
  const auto x = images(c, state.range(0));
  const auto m = end2::make_message_batch(2, static_cast<int>(state.range(0)), c.message_length);
  torch::NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(bundle.encoder.encode(x, m).data);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Encode)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_Decode(benchmark::State& state) {
  const auto c = end2::preset_config("desk");
  const auto bundle = end2::models::init_models(c, 0);
  const auto x = images(c, state.range(0));
  torch::NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(bundle.decoders[0].decode(x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Decode)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);

// One full END2 step at desk scale: forward, backward, Adam, momentum, swap.
void BM_TrainStep(benchmark::State& state) {
  auto c = end2::preset_config("desk");
  c.distortions = end2::suite_preset(state.range(0) ? "jpeg50" : "identity");
  end2::training::Trainer trainer(c);
  const auto x = images(c, c.train.batch_size);
  const auto m = end2::make_message_batch(3, c.train.batch_size, c.message_length);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.train_step(x, m));
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->ArgNames({"jpeg"})->Unit(benchmark::kMillisecond);

void BM_JpegReal(benchmark::State& state) {
  const auto c = end2::preset_config("desk");
  const auto x = images(c, 16);
  for (auto _ : state) benchmark::DoNotOptimize(end2::distortions::jpeg_real(x, 50).data);
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_JpegReal)->Unit(benchmark::kMicrosecond);

void BM_Ssim(benchmark::State& state) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(4);
  const auto a = torch::rand({16, 3, state.range(0), state.range(0)}, gen);
  const auto b = (a + 0.05 * torch::randn(a.sizes(), gen)).clamp(0, 1);
  for (auto _ : state) benchmark::DoNotOptimize(end2::eval::ssim(a, b));
}
BENCHMARK(BM_Ssim)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
