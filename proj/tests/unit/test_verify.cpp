#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "rcpm/quadrature.hpp"
#include "rcpm/training.hpp"
#include "rcpm/verify.hpp"

using namespace rcpm;

namespace {

Flow identity_flow(const Manifold& m, std::size_t T) {
  TrainConfig c;
  c.blocks = T;
  c.components = 20;
  c.gamma = 0.0;
  c.gamma2 = 0.0;
  Rng rng(1);
  return init_flow(c, m, rng);
}

}  // namespace

TEST(Verify, CTransformIsLipschitz) {
  const auto m = Manifold::sphere(1);
  Rng rng(2);
  const auto p = random_potential(m, 7, 0.0, 0.0, 1.0, rng);
  for (int res : {128, 512}) {
    const auto g = GridFunction::sample(m, res, [&](const Point& x) { return eval_potential(p, x); });
    const auto gc = c_transform(g);
    EXPECT_LE(discrete_lipschitz(gc), m.diameter() + 2 * m.diameter() * g.spacing() + 1e-12);
  }
}

TEST(Verify, CTransformPointsBruteForce) {
  const auto m = Manifold::sphere(2);
  Rng rng(3);
  const auto xs = m.sample_uniform(rng, 50);
  const auto ys = m.sample_uniform(rng, 10);
  std::vector<double> psi(xs.size());
  for (auto& v : psi) v = uniform01(rng);
  const auto out = c_transform_points(m, xs, psi, ys);
  for (std::size_t j = 0; j < ys.size(); ++j) {
    double best = 1e300;
    for (std::size_t i = 0; i < xs.size(); ++i) best = std::min(best, m.cost(xs[i], ys[j]) - psi[i]);
    EXPECT_DOUBLE_EQ(out[j], best);
  }
}

TEST(Verify, InvolutionWithinBoundAndHalving) {
  const auto target = involution_target();
  const auto a = involution_check(target, 512);
  const auto b = involution_check(target, 1024);
  EXPECT_TRUE(a.pass) << a.to_json().dump();
  EXPECT_TRUE(b.pass);
  EXPECT_GT(a.defect, 0.0);
  EXPECT_NEAR(b.defect / a.defect, 0.5, 0.05);
  EXPECT_NEAR(a.bound, 2 * std::numbers::pi * 2 * std::numbers::pi / 512, 1e-12);
}

TEST(Verify, EpsilonNetOnCircle) {
  const std::vector<std::size_t> sizes{16, 64, 256};
  const auto rep = epsilon_net_s1(epsilon_net_target(), sizes, 4096, 300);
  EXPECT_TRUE(rep.pass) << rep.to_json().dump(2);
  ASSERT_EQ(rep.rows.size(), 3u);
  for (const auto& r : rep.rows) {
    EXPECT_NEAR(r.epsilon, std::numbers::pi / r.m, 1e-15);
    EXPECT_LE(r.sup_error, r.bound);
    EXPECT_GE(r.min_gap, -1e-12);
  }
  EXPECT_LT(rep.skipped_fraction, 0.5);
}

TEST(Verify, EpsilonNetOnSphere) {
  Rng rng(4);
  const auto target = random_potential(Manifold::sphere(2), 8, 0.0, 0.1, 0.5, rng);
  const std::vector<std::size_t> sizes{16, 64, 256};
  const auto rep = epsilon_net_s2(target, sizes, 48);
  EXPECT_TRUE(rep.pass) << rep.to_json().dump(2);
}

TEST(Verify, FibonacciCoveringShrinks) {
  const auto m = Manifold::sphere(2);
  double prev = 10.0;
  for (std::size_t n : {16u, 64u, 256u}) {
    const auto net = fibonacci_sphere(n);
    ASSERT_EQ(net.size(), n);
    for (const auto& p : net) EXPECT_TRUE(m.contains(p, 1e-12));
    const double r = covering_radius(m, net, 64);
    EXPECT_LT(r, prev);
    // area argument: n caps of radius r cover the sphere
    EXPECT_GE(n * 2 * std::numbers::pi * (1 - std::cos(r)), 4 * std::numbers::pi * 0.99);
    prev = r;
  }
}

TEST(Verify, LogdetAuditIdentityAndHardFlows) {
  const auto m = Manifold::sphere(2);
  const auto id = logdet_positivity_audit(identity_flow(m, 2), 2000, 5);
  EXPECT_TRUE(id.all_zero);
  EXPECT_TRUE(id.all_positive);
  EXPECT_EQ(id.min_logdet, 0.0);

  Rng rng(6);
  Flow hard;
  hard.manifold = m;
  hard.blocks.push_back(BlockPotential(random_potential(m, 10, 0.0, 0.1, 0.5, rng)));
  const auto h = logdet_positivity_audit(hard, 500, 7);
  EXPECT_FALSE(h.all_positive);
  EXPECT_GT(h.degenerate, 0u);
  EXPECT_FALSE(h.first_bad.empty());
}

TEST(Verify, PushforwardIdentityWithinNoise) {
  const auto m = Manifold::sphere(2);
  const UniformDensity u(m);
  const auto rep = pushforward_check(identity_flow(m, 1), u, u, 16, 20000, 8, 10);
  EXPECT_LE(rep.tv, rep.noise_mean + 3 * rep.noise_sd) << rep.to_json().dump();
  EXPECT_EQ(rep.bins_u, 16);
  EXPECT_EQ(rep.bins_v, 32);
}

TEST(Verify, PushforwardNegativeControl) {
  const auto m = Manifold::torus(2);
  const UniformDensity u(m);
  const Torus3Modal t;
  const auto rep = pushforward_check(identity_flow(m, 1), u, t, 32, 20000, 9, 5);
  EXPECT_GT(rep.tv, rep.noise_mean + 20 * rep.noise_sd) << rep.to_json().dump();
  // continuous TV(uniform, target) by quadrature; binning can only lower it
  const double flat = 1.0 / m.volume();
  const double tv =
      0.5 * integrate(m, 400, [&](const Point& x) { return std::abs(std::exp(t.log_density(x)) - flat); });
  EXPECT_NEAR(tv, 0.2891, 5e-4);
  EXPECT_LE(rep.tv, tv + rep.noise_mean + 3 * rep.noise_sd);
  EXPECT_GE(rep.tv, tv - 0.01);
}
