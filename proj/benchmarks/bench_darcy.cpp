#include <benchmark/benchmark.h>

#include "bmfia/darcy.hpp"
#include "bmfia/markov_prior.hpp"

using namespace bmfia;

namespace {

Vector field(const Mesh& mesh) {
  MarkovPrior prior(mesh, 0.0, 1.0, 1.0, 0.05);
  Rng rng(1);
  return prior.sample(8.0, rng, 1).front();
}

void BM_DarcySolve(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Mesh mesh(n, n);
  DarcySolver solver(mesh, PressureBC(BcKind::hf_quadratic), ObservationGrid(20, 20));
  Vector x = field(mesh);
  for (auto _ : state) benchmark::DoNotOptimize(solver.solve(x).y.data());
}
BENCHMARK(BM_DarcySolve)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_DarcyAdjoint(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Mesh mesh(n, n);
  DarcySolver solver(mesh, PressureBC(BcKind::hf_quadratic), ObservationGrid(20, 20));
  auto sol = solver.solve(field(mesh));
  VelocityMatrix seed = VelocityMatrix::Ones(sol.y.rows(), 2);
  for (auto _ : state) benchmark::DoNotOptimize(solver.adjoint(sol, seed).data());
}
BENCHMARK(BM_DarcyAdjoint)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace
