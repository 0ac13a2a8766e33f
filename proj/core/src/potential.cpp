#include "rcpm/potential.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "kernels.hpp"
#include "rcpm/error.hpp"

namespace rcpm {

double soft_min(std::span<const double> values, double gamma) {
  if (values.empty()) throw InvalidBatch("soft_min of an empty list");
  const double m = *std::min_element(values.begin(), values.end());
  if (gamma <= 0.0) return m;
  double z = 0.0;
  for (double v : values) z += std::exp(-(v - m) / gamma);
  return m - gamma * std::log(z);
}

double concave_relu(double s, double gamma2) { return detail::relu_coeffs(s, gamma2).sigma; }

DiscretePotential::DiscretePotential(Manifold m, std::vector<Point> ys, std::vector<double> alphas,
                                     double g)
    : manifold(std::move(m)), offsets(std::move(alphas)), gamma(g) {
  const auto D = static_cast<std::size_t>(manifold.ambient_dim());
  centers.reserve(ys.size() * D);
  for (const auto& y : ys) {
    if (y.size() != D) throw ConfigError("center has wrong ambient dimension");
    centers.insert(centers.end(), y.coords.begin(), y.coords.end());
  }
  validate();
}

void DiscretePotential::validate() const {
  const auto D = static_cast<std::size_t>(manifold.ambient_dim());
  if (offsets.empty()) throw ConfigError("potential needs at least one component");
  if (centers.size() != offsets.size() * D) throw ConfigError("centers/offsets size mismatch");
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be nonnegative");
  for (std::size_t i = 0; i < size(); ++i) {
    if (!manifold.contains(center_point(i), 1e-9)) throw ConfigError("center is off the manifold");
    if (!std::isfinite(offsets[i])) throw ConfigError("offset is not finite");
  }
}

BlockPotential::BlockPotential(DiscretePotential single)
    : layers{std::move(single)}, mix_logits{-std::numeric_limits<double>::infinity()} {}

double BlockPotential::mix_weight(std::size_t k) const {
  const double z = mix_logits[k];
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void BlockPotential::set_mix_weight(std::size_t k, double w) {
  if (!(w >= 0.0 && w <= 1.0)) throw ConfigError("mixing weight must lie in [0, 1]");
  mix_logits[k] = std::log(w) - std::log1p(-w);
}

void BlockPotential::validate() const {
  if (layers.empty()) throw ConfigError("block needs at least one layer");
  if (mix_logits.size() != layers.size()) throw ConfigError("one mixing weight per layer");
  if (!(relu_gamma >= 0.0)) throw ConfigError("relu gamma must be nonnegative");
  for (const auto& l : layers) {
    l.validate();
    if (!(l.manifold == layers.front().manifold)) throw ConfigError("layers disagree on manifold");
  }
}

namespace {

Tangent as_tangent(const Point& x, const std::vector<double>& g) { return Tangent{x, g}; }

}  // namespace

double eval_potential(const DiscretePotential& p, const Point& x) {
  detail::LayerRecord rec;
  detail::layer_forward(p, x.coords.data(), nullptr, 0, false, rec);
  return rec.value;
}

Tangent grad_potential(const DiscretePotential& p, const Point& x) {
  detail::LayerRecord rec;
  detail::layer_forward(p, x.coords.data(), nullptr, 0, true, rec);
  return as_tangent(x, rec.grad);
}

std::vector<double> softmin_weights(const DiscretePotential& p, const Point& x) {
  detail::LayerRecord rec;
  detail::layer_forward(p, x.coords.data(), nullptr, 0, false, rec);
  std::vector<double> w(p.size(), 0.0);
  const double amin = *std::min_element(rec.costs.begin(), rec.costs.end());
  if (p.gamma <= 0.0) {
    w[active_component(p, x)] = 1.0;
    return w;
  }
  double z = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = std::exp(-(rec.costs[i] - amin) / p.gamma);
    z += w[i];
  }
  for (double& v : w) v /= z;
  return w;
}

std::size_t active_component(const DiscretePotential& p, const Point& x) {
  detail::LayerRecord rec;
  detail::layer_forward(p, x.coords.data(), nullptr, 0, false, rec);
  return static_cast<std::size_t>(std::min_element(rec.costs.begin(), rec.costs.end()) -
                                  rec.costs.begin());
}

double eval_block_potential(const BlockPotential& b, const Point& x) {
  detail::BlockRecord rec;
  detail::block_potential_forward(b, x.coords.data(), nullptr, 0, rec, false);
  return rec.states.back().psi;
}

Tangent grad_block_potential(const BlockPotential& b, const Point& x) {
  detail::BlockRecord rec;
  detail::block_potential_forward(b, x.coords.data(), nullptr, 0, rec);
  return as_tangent(x, rec.states.back().G);
}

DiscretePotential random_potential(const Manifold& m, std::size_t components, double gamma,
                                   double alpha_min, double alpha_range, Rng& rng) {
  auto ys = m.sample_uniform(rng, components);
  std::vector<double> alphas(components);
  for (auto& a : alphas) a = alpha_min + alpha_range * uniform01(rng);
  return DiscretePotential(m, std::move(ys), std::move(alphas), gamma);
}

}  // namespace rcpm
