#include <benchmark/benchmark.h>

#include "piflow/flow.hpp"
#include "piflow/solvers.hpp"

namespace {

using namespace piflow;

void BM_tape_matmul_grad(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Matrix A = Matrix::Random(n, n), B = Matrix::Random(n, n);
  for (auto _ : state) {
    Tape tape;
    Value a = tape.input(A), b = tape.input(B);
    Value loss = tape.sum(tape.matmul(a, b));
    benchmark::DoNotOptimize(tape.gradients(loss));
  }
}
BENCHMARK(BM_tape_matmul_grad)->Arg(64)->Arg(256);

void BM_flow_forward(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  ParamStore store;
  FlowModel model = flow_create(store, "flow", 10, 5, 8, 100, 1, 7);
  Matrix lambda = Matrix::Random(batch, 10);
  for (auto _ : state) benchmark::DoNotOptimize(flow_forward_eval(store, model, lambda));
}
BENCHMARK(BM_flow_forward)->Arg(64)->Arg(1000);

void BM_fem_diffusion_1d(benchmark::State& state) {
  Eigen::VectorXd D = Eigen::VectorXd::Constant(201, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(fem_diffusion_1d(D, 5.0, 0.0, 1.0));
}
BENCHMARK(BM_fem_diffusion_1d);

void BM_fast_sweep(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Eigen::MatrixXd v = Eigen::MatrixXd::Constant(n, n, 2.0);
  const double h = 4.0 / (n - 1);
  for (auto _ : state)
    benchmark::DoNotOptimize(fast_sweep_eikonal(v, h, (n - 1) / 2, 0));
}
BENCHMARK(BM_fast_sweep)->Arg(51)->Arg(101);

}  // namespace

BENCHMARK_MAIN();
