#pragma once

#include <memory>
#include <vector>

#include "rcpm/density.hpp"
#include "rcpm/potential.hpp"

namespace rcpm {

/// Forward: the flow maps base samples to the target (sampling path).
/// Backward: the flow maps data to the base (likelihood path).
enum class Direction { Forward, Backward };

const char* to_string(Direction d);
Direction direction_from_string(const std::string& s);

/// s = s_T o ... o s_1 with s_j(x) = exp_x(-grad phi_j(x)).
struct Flow {
  Manifold manifold;
  std::vector<BlockPotential> blocks;
  Direction direction = Direction::Forward;

  std::size_t size() const { return blocks.size(); }
  void validate() const;
};

Point apply_block(const BlockPotential& b, const Point& x);
Point apply_flow(const Flow& f, const Point& x);

/// log|det J| with J_ab = <e'_a, Ds(e_b)> in tangent bases at x and s(x).
/// Exactly 0 when the block does not move x to first order. Throws SingularJacobian
/// when |det J| < 1e-12.
double block_jacobian_logdet(const BlockPotential& b, const Point& x);

/// Sum of block log-determinants along the composition.
double flow_logdet(const Flow& f, const Point& x);

struct FlowEval {
  Point y;
  /// log|det J| of the whole composition.
  double logdet = 0.0;
  /// Orientation sign of det J (+1 preserves orientation, 0 if singular).
  double sign = 1.0;
};

/// Image and log-determinant in one forward pass (tangent columns pushed through every block).
FlowEval evaluate_flow(const Flow& f, const Point& x);

/// eta(l) = exp_x(-l grad phi(x)) at l = 0, 1/steps, ..., 1.
std::vector<Point> transport_geodesic(const BlockPotential& b, const Point& x, std::size_t steps);

struct PushedSample {
  Point x;
  double log_density = 0.0;
};

/// Density of a flow applied to a base density.
/// Forward flows can be sampled; backward flows have a pointwise log-density.
class PushedDensity : public Density {
 public:
  PushedDensity(DensityPtr base, Flow flow);

  const Manifold& manifold() const override { return flow_.manifold; }
  std::string kind() const override { return "pushed"; }
  bool can_sample() const override;
  bool has_log_density() const override;

  /// Backward only: log mu(s(y)) + logdet(y). Returns -inf when the flow hits a cut locus.
  double log_density(const Point& y) const override;
  std::vector<Point> sample(Rng& rng, std::size_t n) const override;
  /// Forward only. Draws that hit a cut locus are redrawn; the count goes to *rejected.
  std::vector<PushedSample> sample_with_density(Rng& rng, std::size_t n,
                                                std::size_t* rejected = nullptr) const;
  nlohmann::json to_json() const override;

  const Flow& flow() const { return flow_; }
  const Density& base() const { return *base_; }

 private:
  DensityPtr base_;
  Flow flow_;
};

}  // namespace rcpm
