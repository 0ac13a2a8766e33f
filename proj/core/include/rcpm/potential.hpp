#pragma once

#include <span>
#include <vector>

#include "rcpm/manifold.hpp"

namespace rcpm {

/// -gamma * log(sum exp(-a_i / gamma)), evaluated with a max-shift.
/// gamma == 0 gives the exact minimum.
double soft_min(std::span<const double> values, double gamma);

/// Softened min{0, s}; gamma2 == 0 is the hard concave ReLU.
double concave_relu(double s, double gamma2);

/// phi(x) = min_i (c(x, y_i) + alpha_i), with min replaced by soft_min when gamma > 0.
///
/// Centers are stored contiguously (m rows of ambient_dim coordinates).
struct DiscretePotential {
  Manifold manifold;
  std::vector<double> centers;
  std::vector<double> offsets;
  double gamma = 0.0;

  DiscretePotential() = default;
  DiscretePotential(Manifold m, std::vector<Point> ys, std::vector<double> alphas, double gamma);

  std::size_t size() const { return offsets.size(); }
  std::span<const double> center(std::size_t i) const {
    const auto D = static_cast<std::size_t>(manifold.ambient_dim());
    return {centers.data() + i * D, D};
  }
  std::span<double> center(std::size_t i) {
    const auto D = static_cast<std::size_t>(manifold.ambient_dim());
    return {centers.data() + i * D, D};
  }
  Point center_point(std::size_t i) const {
    auto c = center(i);
    return Point(std::vector<double>(c.begin(), c.end()));
  }

  /// Throws ConfigError when sizes disagree, m == 0, gamma < 0 or a center is off the manifold.
  void validate() const;
};

/// Multi-layer block potential on spaces where c-concave functions form a convex set:
///   psi_0 = 0,  psi_k = (1 - w_{k-1}) phi_{k-1} + w_{k-1} sigma(psi_{k-1}),
/// optionally wrapped by an outer sigma ("identity ReLU"). sigma is softened by relu_gamma.
/// Mixing weights are stored as logits; w_k = 1 / (1 + exp(-logit_k)).
struct BlockPotential {
  std::vector<DiscretePotential> layers;
  std::vector<double> mix_logits;
  bool identity_relu = false;
  double relu_gamma = 0.0;

  BlockPotential() = default;
  explicit BlockPotential(DiscretePotential single);

  const Manifold& manifold() const { return layers.front().manifold; }
  double mix_weight(std::size_t k) const;
  void set_mix_weight(std::size_t k, double w);
  void validate() const;
};

double eval_potential(const DiscretePotential& p, const Point& x);
Tangent grad_potential(const DiscretePotential& p, const Point& x);

/// Convex weights of the soft-min at x (one-hot at the lowest-index argmin when gamma == 0).
std::vector<double> softmin_weights(const DiscretePotential& p, const Point& x);

/// Index of the hard-min active component (lowest index on ties).
std::size_t active_component(const DiscretePotential& p, const Point& x);

double eval_block_potential(const BlockPotential& b, const Point& x);
Tangent grad_block_potential(const BlockPotential& b, const Point& x);

/// Draw a discrete potential with centers uniform on the manifold and
/// offsets uniform on [alpha_min, alpha_min + alpha_range].
DiscretePotential random_potential(const Manifold& m, std::size_t components, double gamma,
                                   double alpha_min, double alpha_range, Rng& rng);

}  // namespace rcpm
