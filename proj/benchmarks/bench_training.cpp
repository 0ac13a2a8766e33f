#include <benchmark/benchmark.h>

#include "rcpm/diffengine.hpp"
#include "rcpm/flow.hpp"
#include "rcpm/potential.hpp"
#include "rcpm/training.hpp"

using namespace rcpm;

namespace {

TrainConfig sphere_config() {
  TrainConfig c;
  c.manifold = "S2";
  c.blocks = 5;
  c.components = 500;
  c.gamma = 0.1;
  c.gamma2 = 0.1;
  return c;
}

TrainConfig torus_config() {
  TrainConfig c;
  c.manifold = "T2";
  c.target = "torus_3modal";
  c.blocks = 6;
  c.components = 200;
  c.gamma = 0.5;
  c.learning_rate = 6e-4;
  return c;
}

// One Adam iteration: batch draw, loss and gradient, parameter update.
void train_step(benchmark::State& state, const TrainConfig& cfg, DensityPtr target) {
  const Manifold m = cfg.make_manifold();
  const UniformDensity base(m);
  Rng rng(1);
  Flow f = init_flow(cfg, m, rng);
  AdamState adam(f, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
  const auto spec = LossSpec::reverse_kl(base, *target);
  const auto batch_size = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    const auto batch = m.sample_uniform(rng, batch_size);
    auto lr = loss_and_grad(f, spec, batch);
    lr.grad.project_to_tangent(f);
    adam.step(f, lr.grad);
    benchmark::DoNotOptimize(lr.loss);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch_size));
}

void BM_TrainStepSphere(benchmark::State& state) {
  train_step(state, sphere_config(), sphere_mixture4());
}

void BM_TrainStepTorus(benchmark::State& state) {
  train_step(state, torus_config(), std::make_shared<Torus3Modal>());
}

void BM_EvaluateFlow(benchmark::State& state) {
  const auto cfg = sphere_config();
  const Manifold m = cfg.make_manifold();
  Rng rng(2);
  const Flow f = init_flow(cfg, m, rng);
  const auto xs = m.sample_uniform(rng, 256);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(evaluate_flow(f, xs[i++ % xs.size()]));
  }
  state.SetItemsProcessed(state.iterations());
}

void BM_GradPotential(benchmark::State& state) {
  const auto m = Manifold::sphere(2);
  Rng rng(3);
  const auto p = random_potential(m, static_cast<std::size_t>(state.range(0)), 0.1, 0.1, 0.5, rng);
  const auto xs = m.sample_uniform(rng, 256);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(grad_potential(p, xs[i++ % xs.size()]));
  }
  state.SetItemsProcessed(state.iterations());
}

}  // namespace

BENCHMARK(BM_TrainStepSphere)->Arg(256)->Unit(benchmark::kMillisecond)->MinTime(2.0);
BENCHMARK(BM_TrainStepTorus)->Arg(256)->Unit(benchmark::kMillisecond)->MinTime(2.0);
BENCHMARK(BM_EvaluateFlow)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_GradPotential)->Arg(50)->Arg(200)->Arg(500)->Unit(benchmark::kMicrosecond);
BENCHMARK_MAIN();
