#include <benchmark/benchmark.h>

#include "bmfia/nn/network.hpp"

using namespace bmfia;
using namespace bmfia::nn;

namespace {

Architecture desk_arch() {
  Architecture a;
  a.rows = 20;
  a.cols = 20;
  a.channels = {8, 16, 32};
  a.bottleneck = 64;
  return a;
}

Tensor filled(int batch, Shape s) {
  Tensor t(batch, s);
  for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = 0.01 * static_cast<double>(i % 97);
  return t;
}

void BM_NetworkForward(benchmark::State& state) {
  Network net(desk_arch(), 3);
  Tensor in = filled(static_cast<int>(state.range(0)), net.input_shape());
  for (auto _ : state) {
    Network::Tape tape;
    benchmark::DoNotOptimize(net.forward(in, tape, {}).data.data());
  }
}
BENCHMARK(BM_NetworkForward)->Arg(1)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_NetworkTrainStep(benchmark::State& state) {
  Network net(desk_arch(), 3);
  const int batch = static_cast<int>(state.range(0));
  Tensor in = filled(batch, net.input_shape());
  Tensor g = filled(batch, net.output_shape());
  Rng rng(5);
  ForwardContext ctx{true, &rng};
  for (auto _ : state) {
    Network::Tape tape;
    net.forward(in, tape, ctx);
    auto grads = net.zero_grads();
    benchmark::DoNotOptimize(net.backward(tape, g, &grads).data.data());
  }
}
BENCHMARK(BM_NetworkTrainStep)->Arg(32)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
