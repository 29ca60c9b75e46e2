#include <difficp/geodesic.hpp>
#include <difficp/gmm.hpp>
#include <difficp/random.hpp>

#include <benchmark/benchmark.h>

namespace {

using namespace difficp;

struct Instance {
  ShootingProblem problem;
  MomentumField a0;
};

Instance make_instance(int n, bool logdet) {
  Rng rng(42);
  PointSet x(n, 2), y(n, 2);
  MomentumField a0(n, 2);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < 2; ++k) {
      x(i, k) = rng.uniform(-0.8, 0.8);
      y(i, k) = x(i, k) + 0.1 * rng.normal();
      a0(i, k) = 0.05 * rng.normal();
    }
  }
  return {ShootingProblem(x, y, 0.1, 500.0, logdet, KernelParams{0.2, 2}, 10), a0};
}

void BM_Shoot(benchmark::State& state) {
  const auto inst = make_instance(static_cast<int>(state.range(0)), true);
  for (auto _ : state) benchmark::DoNotOptimize(shoot(inst.problem, inst.a0));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Shoot)->RangeMultiplier(2)->Range(25, 400)->Complexity(benchmark::oNSquared);

void BM_EnergyGradient(benchmark::State& state) {
  const auto inst = make_instance(static_cast<int>(state.range(0)), state.range(1) != 0);
  for (auto _ : state) benchmark::DoNotOptimize(shooting_energy_grad(inst.problem, inst.a0));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_EnergyGradient)->ArgsProduct({{25, 50, 100, 200, 400}, {0, 1}});

void BM_FlowApply(benchmark::State& state) {
  const auto inst = make_instance(100, true);
  const auto path = shoot(inst.problem, inst.a0);
  Rng rng(7);
  PointSet z(state.range(0), 2);
  for (Eigen::Index i = 0; i < z.rows(); ++i) z.row(i) << rng.uniform(-1, 1), rng.uniform(-1, 1);
  for (auto _ : state) benchmark::DoNotOptimize(flow_apply(path, inst.problem, z));
}
BENCHMARK(BM_FlowApply)->Arg(441)->Arg(2500);

void BM_EStep(benchmark::State& state) {
  Rng rng(3);
  GmmModel m;
  m.means = PointSet(4, 2);
  m.means << 0.5, 0.5, -0.5, 0.5, -0.5, -0.5, 0.5, -0.5;
  m.weights = Vector::Constant(4, 0.25);
  m.sigma = 0.1;
  PointSet z(state.range(0), 2);
  for (Eigen::Index i = 0; i < z.rows(); ++i) z.row(i) << rng.uniform(-1, 1), rng.uniform(-1, 1);
  for (auto _ : state) benchmark::DoNotOptimize(e_step(m, z));
}
BENCHMARK(BM_EStep)->Arg(100)->Arg(1000);

}  // namespace

BENCHMARK_MAIN();
