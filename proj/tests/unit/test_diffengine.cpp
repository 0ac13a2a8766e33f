#include <gtest/gtest.h>

#include <cmath>

#include "rcpm/diffengine.hpp"
#include "rcpm/error.hpp"
#include "rcpm/training.hpp"

using namespace rcpm;

namespace {

Flow random_flow(const Manifold& m, std::size_t T, std::size_t K, double gamma, std::uint64_t seed,
                 std::optional<double> gamma2 = 0.1) {
  TrainConfig c;
  c.blocks = T;
  c.layers = K;
  c.components = 6;
  c.gamma = gamma;
  c.gamma2 = gamma2;
  Rng rng(seed);
  return init_flow(c, m, rng);
}

const GradCheckClass& cls(const GradCheckReport& r, const std::string& name) {
  for (const auto& c : r.classes)
    if (c.name == name) return c;
  throw std::runtime_error("missing class " + name);
}

}  // namespace

TEST(DiffEngine, GradCheckPassesOnSoftFlows) {
  const auto m = Manifold::sphere(2);
  const UniformDensity base(m);
  const auto target = sphere_mixture4();
  Rng rng(1);
  const auto batch = m.sample_uniform(rng, 16);
  for (std::size_t K : {1u, 3u}) {
    const Flow f = random_flow(m, 2, K, 0.1, 10 + K);
    const auto rep = grad_check(f, LossSpec::reverse_kl(base, *target), batch, 1e-4);
    EXPECT_TRUE(rep.pass) << rep.to_json().dump();
    EXPECT_FALSE(cls(rep, "center").identically_zero);
    EXPECT_FALSE(cls(rep, "alpha").identically_zero);
  }
}

TEST(DiffEngine, NllGradCheckOnTorus) {
  const auto m = Manifold::torus(2);
  const UniformDensity base(m);
  const Torus3Modal data;
  Rng rng(2);
  const auto batch = data.sample(rng, 16);
  const Flow f = random_flow(m, 2, 1, 0.5, 3, std::nullopt);
  const auto rep = grad_check(f, LossSpec::nll(base), batch, 1e-4);
  EXPECT_TRUE(rep.pass) << rep.to_json().dump();
}

TEST(DiffEngine, SingleAlphaCentralDifference) {
  const auto m = Manifold::sphere(2);
  const UniformDensity base(m);
  const auto target = sphere_mixture4();
  const auto spec = LossSpec::reverse_kl(base, *target);
  Rng rng(3);
  const auto batch = m.sample_uniform(rng, 32);
  Flow f = random_flow(m, 1, 1, 0.5, 4);
  const auto g = loss_and_grad(f, spec, batch).grad;
  const double h = 1e-5;
  for (std::size_t i = 0; i < 6; ++i) {
    Flow p = f, q = f;
    p.blocks[0].layers[0].offsets[i] += h;
    q.blocks[0].layers[0].offsets[i] -= h;
    const double fd = (loss_value(p, spec, batch) - loss_value(q, spec, batch)) / (2 * h);
    const double an = g.blocks[0].d_offsets[0][i];
    EXPECT_LE(std::abs(an - fd), 1e-4 * std::max({std::abs(an), std::abs(fd), 1e-3}));
  }
}

TEST(DiffEngine, HardMinAlphaGradientsIdenticallyZero) {
  const auto m = Manifold::sphere(2);
  const UniformDensity base(m);
  const auto target = sphere_mixture4();
  Rng rng(4);
  const auto batch = m.sample_uniform(rng, 64);
  for (std::size_t K : {1u, 3u}) {
    const Flow f = random_flow(m, 2, K, 0.0, 5, 0.0);
    const auto lr = loss_and_grad(f, LossSpec::reverse_kl(base, *target), batch);
    for (const auto& b : lr.grad.blocks)
      for (const auto& layer : b.d_offsets)
        for (double v : layer) EXPECT_EQ(v, 0.0);
  }
}

TEST(DiffEngine, LossMatchesDefinition) {
  const auto m = Manifold::torus(2);
  const UniformDensity base(m);
  const Torus3Modal target;
  Rng rng(5);
  const auto batch = m.sample_uniform(rng, 40);
  const Flow f = random_flow(m, 2, 1, 0.5, 6);
  double want = 0.0;
  for (const auto& x : batch) {
    const auto e = evaluate_flow(f, x);
    want += base.log_density(x) - e.logdet - target.log_density(e.y);
  }
  want /= batch.size();
  EXPECT_NEAR(loss_value(f, LossSpec::reverse_kl(base, target), batch), want, 1e-12);
  const auto lr = loss_and_grad(f, LossSpec::reverse_kl(base, target), batch);
  EXPECT_NEAR(lr.loss, want, 1e-12);
  EXPECT_EQ(lr.used, batch.size());
  EXPECT_EQ(lr.rejected, 0u);
}

TEST(DiffEngine, IdentityFlowWithMatchingTargetHasZeroLoss) {
  const auto m = Manifold::sphere(2);
  const UniformDensity base(m);
  Rng rng(6);
  const auto batch = m.sample_uniform(rng, 32);
  const Flow f = random_flow(m, 2, 1, 0.0, 7, 0.0);
  const auto lr = loss_and_grad(f, LossSpec::reverse_kl(base, base), batch);
  EXPECT_EQ(lr.loss, 0.0);
  EXPECT_TRUE(lr.grad.all_zero());
}

TEST(DiffEngine, CustomLossAndNonFiniteAbort) {
  const auto m = Manifold::sphere(2);
  Rng rng(7);
  const auto batch = m.sample_uniform(rng, 20);
  const Flow f = random_flow(m, 1, 1, 0.1, 8);
  const auto ok = LossSpec::from_function([](const Point&, const Point& y, double) {
    return SampleLoss{y[2], {0.0, 0.0, 1.0}, 0.0};
  });
  const auto rep = grad_check(f, ok, batch, 1e-4);
  EXPECT_TRUE(rep.pass) << rep.to_json().dump();

  const auto bad = LossSpec::from_function([&](const Point& x, const Point&, double) {
    return SampleLoss{x == batch[13] ? std::nan("") : 0.0, {}, 0.0};
  });
  try {
    loss_and_grad(f, bad, batch);
    FAIL() << "expected NonFiniteLoss";
  } catch (const NonFiniteLoss& e) {
    EXPECT_EQ(e.sample(), 13);
  }
  EXPECT_THROW(loss_and_grad(f, ok, std::span<const Point>{}), InvalidBatch);
}

TEST(DiffEngine, BatchResultIndependentOfThreadCount) {
  const auto m = Manifold::sphere(2);
  const UniformDensity base(m);
  const auto target = sphere_mixture4();
  Rng rng(8);
  const auto batch = m.sample_uniform(rng, 100);
  const Flow f = random_flow(m, 2, 1, 0.1, 9);
  const auto a = loss_and_grad(f, LossSpec::reverse_kl(base, *target), batch);
  const auto b = loss_and_grad(f, LossSpec::reverse_kl(base, *target), batch);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.grad.blocks[1].d_centers[0], b.grad.blocks[1].d_centers[0]);
}

TEST(DiffEngine, ParamGradientAlgebra) {
  const auto m = Manifold::sphere(2);
  const Flow f = random_flow(m, 2, 3, 0.1, 10);
  auto g = ParamGradient::zeros_like(f);
  EXPECT_TRUE(g.all_zero());
  ASSERT_EQ(g.blocks.size(), 2u);
  ASSERT_EQ(g.blocks[0].d_centers.size(), 3u);
  g.blocks[0].d_centers[0][0] = 1.0;
  g.blocks[0].d_centers[0][1] = 2.0;
  g.blocks[0].d_centers[0][2] = 3.0;
  auto h = g;
  h.add(g);
  h.scale(0.5);
  EXPECT_EQ(h.blocks[0].d_centers[0][2], 3.0);
  g.project_to_tangent(f);
  const auto y = f.blocks[0].layers[0].center(0);
  double radial = 0.0;
  for (int c = 0; c < 3; ++c) radial += g.blocks[0].d_centers[0][c] * y[c];
  EXPECT_NEAR(radial, 0.0, 1e-14);
}

TEST(DiffEngine, ReportJsonShape) {
  const auto m = Manifold::sphere(2);
  const UniformDensity base(m);
  Rng rng(11);
  const auto batch = m.sample_uniform(rng, 8);
  const Flow f = random_flow(m, 1, 3, 0.5, 12);
  const auto rep = grad_check(f, LossSpec::reverse_kl(base, *sphere_mixture4()), batch, 1e-4);
  const auto j = rep.to_json();
  EXPECT_TRUE(j.contains("pass"));
  EXPECT_EQ(j["classes"].size(), 3u);
  EXPECT_EQ(cls(rep, "mix_logit").count, 3u);
}
