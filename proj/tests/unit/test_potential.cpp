#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "rcpm/error.hpp"
#include "rcpm/potential.hpp"

using namespace rcpm;

TEST(SoftMin, BoundsAndLimit) {
  Rng rng(1);
  for (int t = 0; t < 2000; ++t) {
    const std::size_t n = 1 + rng() % 50;
    std::vector<double> a(n);
    for (auto& v : a) v = 10.0 * standard_normal(rng);
    const double mn = *std::min_element(a.begin(), a.end());
    for (double g : {1.0, 0.1, 1e-3}) {
      const double s = soft_min(a, g);
      EXPECT_LE(s, mn + 1e-12);
      EXPECT_GE(s, mn - g * std::log(static_cast<double>(n)) - 1e-12);
    }
    EXPECT_EQ(soft_min(a, 0.0), mn);
  }
}

TEST(SoftMin, NoOverflowOnLargeInputs) {
  const std::vector<double> a{1e6, 1e6 + 1.0, 2e6};
  EXPECT_NEAR(soft_min(a, 0.01), 1e6, 1e-9);
  const std::vector<double> b{-1e300, 0.0};
  EXPECT_EQ(soft_min(b, 0.1), -1e300);
}

TEST(SoftMin, EqualEntries) {
  const std::vector<double> a(8, 2.0);
  EXPECT_NEAR(soft_min(a, 0.5), 2.0 - 0.5 * std::log(8.0), 1e-14);
}

TEST(ConcaveRelu, HardAndSoft) {
  EXPECT_EQ(concave_relu(-1.5, 0.0), -1.5);
  EXPECT_EQ(concave_relu(2.0, 0.0), 0.0);
  for (double s : {-3.0, -0.1, 0.0, 0.1, 3.0}) {
    const double v = concave_relu(s, 0.1);
    EXPECT_LE(v, std::min(0.0, s) + 1e-15);
    EXPECT_GE(v, std::min(0.0, s) - 0.1 * std::log(2.0) - 1e-15);
  }
}

TEST(DiscretePotential, HardValueIsMinOverComponents) {
  const auto m = Manifold::sphere(2);
  Rng rng(2);
  const auto p = random_potential(m, 20, 0.0, 0.1, 0.5, rng);
  for (const auto& x : m.sample_uniform(rng, 200)) {
    double best = 1e300;
    for (std::size_t i = 0; i < p.size(); ++i)
      best = std::min(best, m.cost(x, p.center_point(i)) + p.offsets[i]);
    EXPECT_NEAR(eval_potential(p, x), best, 1e-13);
  }
}

TEST(DiscretePotential, SoftValueWithinBounds) {
  const auto m = Manifold::torus(2);
  Rng rng(3);
  auto p = random_potential(m, 30, 0.1, 0.1, 0.5, rng);
  auto hard = p;
  hard.gamma = 0.0;
  for (const auto& x : m.sample_uniform(rng, 200)) {
    const double s = eval_potential(p, x), h = eval_potential(hard, x);
    EXPECT_LE(s, h + 1e-12);
    EXPECT_GE(s, h - 0.1 * std::log(30.0) - 1e-12);
  }
}

TEST(DiscretePotential, GradientMatchesFiniteDifferences) {
  for (const auto& m : {Manifold::sphere(2), Manifold::torus(2)}) {
    Rng rng(4);
    const auto p = random_potential(m, 15, 0.1, 0.1, 0.5, rng);
    const auto f = [&](const Point& x) { return eval_potential(p, x); };
    for (const auto& x : m.sample_uniform(rng, 100)) {
      const Tangent g = grad_potential(p, x);
      for (const auto& e : m.tangent_basis(x)) {
        const double fd = test::directional_fd(m, f, x, e.v);
        EXPECT_LT(test::rel_err(test::dot(g.v, e.v), fd, 1e-6), 1e-5) << m.name();
      }
    }
  }
}

TEST(DiscretePotential, HardGradientIsMinusLogToActiveCenter) {
  const auto m = Manifold::sphere(2);
  Rng rng(5);
  const auto p = random_potential(m, 10, 0.0, 0.1, 0.5, rng);
  for (const auto& x : m.sample_uniform(rng, 100)) {
    const std::size_t i = active_component(p, x);
    const Tangent lg = m.log(x, p.center_point(i));
    const Tangent g = grad_potential(p, x);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(g.v[c], -lg.v[c], 1e-12);
  }
}

TEST(DiscretePotential, SoftminWeightsFormSimplex) {
  const auto m = Manifold::sphere(2);
  Rng rng(6);
  const auto p = random_potential(m, 12, 0.05, 0.1, 0.5, rng);
  for (const auto& x : m.sample_uniform(rng, 50)) {
    const auto w = softmin_weights(p, x);
    double s = 0.0;
    for (double v : w) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  auto hard = p;
  hard.gamma = 0.0;
  const Point x = m.sample_uniform(rng, 1)[0];
  const auto w = softmin_weights(hard, x);
  EXPECT_EQ(w[active_component(hard, x)], 1.0);
}

TEST(DiscretePotential, TiesResolveToLowestIndex) {
  const auto m = Manifold::sphere(2);
  const Point y{0.0, 0.0, 1.0};
  DiscretePotential p(m, {y, y, y}, {0.2, 0.2, 0.2}, 0.0);
  EXPECT_EQ(active_component(p, Point{1.0, 0.0, 0.0}), 0u);
}

TEST(DiscretePotential, ValidateRejectsBadInput) {
  const auto m = Manifold::sphere(2);
  DiscretePotential p(m, {Point{0.0, 0.0, 1.0}}, {0.1}, 0.1);
  EXPECT_NO_THROW(p.validate());
  p.gamma = -1.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p.gamma = 0.1;
  p.offsets.push_back(0.3);
  EXPECT_THROW(p.validate(), ConfigError);
  EXPECT_THROW(DiscretePotential(m, {Point{0.0, 0.0, 2.0}}, {0.1}, 0.1), ConfigError);
}

TEST(DiscretePotential, AntipodalActiveComponentThrows) {
  const auto m = Manifold::sphere(2);
  DiscretePotential p(m, {Point{0.0, 0.0, 1.0}}, {0.0}, 0.0);
  EXPECT_THROW(grad_potential(p, Point{0.0, 0.0, -1.0}), CutLocus);
}

TEST(DiscretePotential, SoftGradientResolvedNearAntipodeOnCircle) {
  // inside the log-map tolerance band but away from the exact antipode
  const auto m = Manifold::sphere(1);
  const double a = std::numbers::pi - 1e-6;
  DiscretePotential p(m, {Point{1.0, 0.0}, Point{std::cos(2.0), std::sin(2.0)}}, {0.3, 0.1}, 0.5);
  const Point x{std::cos(a), std::sin(a)};
  EXPECT_THROW(m.log(x, Point{1.0, 0.0}), CutLocus);
  const auto g = grad_potential(p, x);
  const auto e = m.tangent_basis(x)[0];
  const auto f = [&](const Point& z) { return eval_potential(p, z); };
  const double fd = test::directional_fd(m, f, x, e.v, 1e-8);
  EXPECT_LT(test::rel_err(test::dot(g.v, e.v), fd, 1e-6), 1e-5);
  EXPECT_THROW(grad_potential(p, Point{-1.0, 0.0}), CutLocus);
}

TEST(BlockPotential, IdentityInitIsExactlyZero) {
  for (const auto& m : {Manifold::sphere(2), Manifold::torus(2)}) {
    Rng rng(7);
    for (std::size_t K : {1u, 3u}) {
      BlockPotential b;
      for (std::size_t k = 0; k < K; ++k) b.layers.push_back(random_potential(m, 40, 0.0, 0.1, 0.5, rng));
      b.mix_logits.assign(K, 0.0);
      b.identity_relu = true;
      b.relu_gamma = 0.0;
      for (const auto& x : m.sample_uniform(rng, 1000)) {
        EXPECT_EQ(eval_block_potential(b, x), 0.0);
        for (double c : grad_block_potential(b, x).v) EXPECT_EQ(c, 0.0);
      }
    }
  }
}

TEST(BlockPotential, SingleLayerWithoutReluIsThePotential) {
  const auto m = Manifold::sphere(2);
  Rng rng(8);
  const auto p = random_potential(m, 10, 0.1, 0.1, 0.5, rng);
  const BlockPotential b(p);
  EXPECT_EQ(b.mix_weight(0), 0.0);
  for (const auto& x : m.sample_uniform(rng, 50)) {
    EXPECT_NEAR(eval_block_potential(b, x), eval_potential(p, x), 1e-14);
    const auto g1 = grad_block_potential(b, x), g2 = grad_potential(p, x);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(g1.v[c], g2.v[c], 1e-13);
  }
}

TEST(BlockPotential, RecursionMatchesDefinition) {
  const auto m = Manifold::torus(2);
  Rng rng(9);
  BlockPotential b;
  for (int k = 0; k < 3; ++k) b.layers.push_back(random_potential(m, 8, 0.1, -0.3, 0.6, rng));
  b.mix_logits = {0.3, -0.4, 1.1};
  b.identity_relu = true;
  b.relu_gamma = 0.05;
  for (const auto& x : m.sample_uniform(rng, 50)) {
    double psi = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      const double w = b.mix_weight(k);
      psi = (1.0 - w) * eval_potential(b.layers[k], x) + w * concave_relu(psi, 0.05);
    }
    psi = concave_relu(psi, 0.05);
    EXPECT_NEAR(eval_block_potential(b, x), psi, 1e-13);
  }
}

TEST(BlockPotential, GradientMatchesFiniteDifferences) {
  for (const auto& m : {Manifold::sphere(2), Manifold::torus(2)}) {
    Rng rng(10);
    BlockPotential b;
    for (int k = 0; k < 3; ++k) b.layers.push_back(random_potential(m, 10, 0.1, -0.2, 0.6, rng));
    b.mix_logits = {0.2, -0.5, 0.7};
    b.identity_relu = true;
    b.relu_gamma = 0.1;
    const auto f = [&](const Point& x) { return eval_block_potential(b, x); };
    for (const auto& x : m.sample_uniform(rng, 100)) {
      const Tangent g = grad_block_potential(b, x);
      for (const auto& e : m.tangent_basis(x)) {
        const double fd = test::directional_fd(m, f, x, e.v);
        EXPECT_LT(test::rel_err(test::dot(g.v, e.v), fd, 1e-6), 1e-5) << m.name();
      }
    }
  }
}

TEST(BlockPotential, MixWeightRoundTrip) {
  const auto m = Manifold::sphere(2);
  Rng rng(11);
  BlockPotential b(random_potential(m, 3, 0.1, 0.1, 0.5, rng));
  for (double w : {0.0, 0.25, 0.5, 0.9}) {
    b.set_mix_weight(0, w);
    EXPECT_NEAR(b.mix_weight(0), w, 1e-15);
  }
}

TEST(RandomPotential, RespectsRanges) {
  const auto m = Manifold::torus(2);
  Rng rng(12);
  const auto p = random_potential(m, 500, 0.1, 0.1, 0.5, rng);
  EXPECT_EQ(p.size(), 500u);
  for (double a : p.offsets) {
    EXPECT_GE(a, 0.1);
    EXPECT_LE(a, 0.6);
  }
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_TRUE(m.contains(p.center_point(i), 1e-12));
}
