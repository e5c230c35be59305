#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "ppgn/anchors.hpp"
#include "ppgn/data.hpp"
#include "ppgn/geometry.hpp"
#include "ppgn/model.hpp"
#include "ppgn/numerics/ops.hpp"
#include "ppgn/numerics/optim.hpp"
#include "ppgn/pipeline/train.hpp"

using namespace ppgn;

namespace {

nn::Tensor random_tensor(nn::Shape shape, std::mt19937& rng, bool grad) {
  std::normal_distribution<float> d(0.f, 0.1f);
  std::vector<Scalar> v(nn::numel(shape));
  for (auto& x : v) x = d(rng);
  return nn::Tensor::from(std::move(shape), std::move(v), grad);
}

void BM_Iou(benchmark::State& state) {
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Box> boxes;
  for (int i = 0; i < 1024; ++i) {
    const double x = 0.7 * u(rng), y = 0.7 * u(rng);
    boxes.push_back(Box::from_corners(x, y, x + 0.01 + 0.29 * u(rng), y + 0.01 + 0.29 * u(rng)));
  }
  double acc = 0;
  for (auto _ : state) {
    for (std::size_t i = 0; i + 1 < boxes.size(); ++i) acc += iou(boxes[i], boxes[i + 1]);
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * (boxes.size() - 1));
}
BENCHMARK(BM_Iou);

// Forward and backward of one 3x3 conv, batch 32, 32x32 map.
void BM_Conv2d(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  std::mt19937 rng(2);
  auto x = random_tensor({32, 32, 32, c}, rng, true);
  auto w = random_tensor({3, 3, c, c}, rng, true);
  auto b = random_tensor({c}, rng, true);
  for (auto _ : state) {
    nn::Tape tape;
    nn::TapeScope scope(tape);
    auto y = nn::sum(nn::conv2d(x, w, b, 1, 1));
    tape.backward(y);
    benchmark::DoNotOptimize(w.grad().data());
  }
}
BENCHMARK(BM_Conv2d)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_KMeans(benchmark::State& state) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(0.02, 0.9);
  std::vector<AnchorWh> sizes;
  for (int i = 0; i < 5000; ++i) sizes.push_back({u(rng), u(rng)});
  for (auto _ : state) {
    benchmark::DoNotOptimize(kmeans_anchors(sizes, 9, 7));
  }
}
BENCHMARK(BM_KMeans)->Unit(benchmark::kMillisecond);

// One full optimizer step at the default model size.
void BM_TrainStep(benchmark::State& state) {
  static const Dataset data(generate_world(64, 5), 128);
  RunConfig config;
  config.batch_size = static_cast<int>(state.range(0));
  const auto anchors = build_anchor_set(resolve_anchors(config, data.world()), config.scales);
  PpgnModel model(config.model_config(data.vocabulary().size()));
  nn::RmsProp optim(model.param_groups(config.backbone_lr_divisor));
  const auto samples = data.samples(Split::kTrain);
  const std::span<const Sample> batch(samples.data(),
                                      std::min<std::size_t>(samples.size(), config.batch_size));
  for (auto _ : state) {
    nn::Tape tape;
    nn::TapeScope scope(tape);
    auto loss = compute_batch_loss(model, data, batch, anchors, config, true);
    optim.zero_grad();
    tape.backward(loss.total);
    optim.step(config.base_lr);
  }
}
BENCHMARK(BM_TrainStep)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
