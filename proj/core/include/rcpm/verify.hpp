#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "rcpm/density.hpp"
#include "rcpm/flow.hpp"
#include "rcpm/quadrature.hpp"

namespace rcpm {

/// Function sampled on the chart grid of quadrature_grid (S^1: res nodes, S^2: res x 2res).
struct GridFunction {
  Manifold manifold;
  int res = 0;
  std::vector<QuadNode> nodes;
  std::vector<double> values;

  static GridFunction sample(const Manifold& m, int res, const std::function<double(const Point&)>& f);
  /// Grid spacing in the chart (largest step along any chart axis).
  double spacing() const;
};

/// psi^c(y) = min over source nodes x of c(x, y) - psi(x), evaluated at every target.
std::vector<double> c_transform_points(const Manifold& m, std::span<const Point> xs,
                                       std::span<const double> psi, std::span<const Point> ys);

/// Brute-force c-transform on the grid (sources and targets are the grid nodes).
GridFunction c_transform(const GridFunction& g);

/// Max |f(a) - f(b)| / d(a, b) over grid-neighbor pairs.
double discrete_lipschitz(const GridFunction& g);

struct InvolutionReport {
  int res = 0;
  double defect = 0.0;
  /// 2 |M| h.
  double bound = 0.0;
  bool pass = false;
  nlohmann::json to_json() const;
};

/// max over grid nodes of |phi^cc - phi| for a hard discrete potential.
InvolutionReport involution_check(const DiscretePotential& p, int res);

/// S^1 test target with components placed a third of a cell off a 2^k grid, so the
/// involution defect halves exactly under grid doubling. Deterministic.
DiscretePotential involution_target(std::size_t components = 3, std::uint64_t seed = 7);

struct EpsilonNetRow {
  std::size_t m = 0;
  double epsilon = 0.0;
  double sup_error = 0.0;
  /// min over the test grid of phi_eps - phi_hat (>= 0 up to rounding).
  double min_gap = 0.0;
  double bound = 0.0;
  double grad_error = 0.0;
  bool within_bound = false;
};

struct EpsilonNetReport {
  std::vector<EpsilonNetRow> rows;
  double slack = 0.0;
  bool monotone = false;
  bool grad_monotone = false;
  bool upper = false;  // phi_eps >= phi_hat everywhere
  bool pass = false;
  double skipped_fraction = 0.0;
  nlohmann::json to_json() const;
};

/// Epsilon-net construction phi_eps(x) = min_j c(x, y_j) - phi_hat^c(y_j) over uniform
/// nets y_j = 2 pi j / m on S^1 (epsilon = pi / m). phi_hat^c is computed by an exact
/// piecewise search (dense grid plus the breakpoints of phi_hat), so phi_eps >= phi_hat
/// holds up to rounding. Errors are sup norms over a dense test grid.
EpsilonNetReport epsilon_net_s1(const DiscretePotential& target, std::span<const std::size_t> net_sizes,
                                int test_res = 8192, int grad_points = 1000, std::uint64_t seed = 11);

/// S^2 variant on Fibonacci lattices. Covering radius by brute force over a probe grid and
/// phi_hat^c by a dense grid transform; `slack` carries the grid error |M| h.
EpsilonNetReport epsilon_net_s2(const DiscretePotential& target, std::span<const std::size_t> net_sizes,
                                int grid_res = 96);

std::vector<Point> fibonacci_sphere(std::size_t n);
/// max over probe points of the distance to the nearest net point.
double covering_radius(const Manifold& m, std::span<const Point> net, int probe_res);

/// Default S^1 target for the epsilon-net oracle.
DiscretePotential epsilon_net_target(std::uint64_t seed = 5);

struct PushforwardReport {
  std::size_t samples = 0;
  int bins_u = 0, bins_v = 0;
  double tv = 0.0;
  /// Mean and standard deviation of TV between n exact target draws and the bin masses.
  double noise_mean = 0.0;
  double noise_sd = 0.0;
  std::size_t rejected = 0;
  nlohmann::json to_json() const;
};

/// Total variation between binned forward samples of the flow and the target's bin masses.
/// Bins are chart cells: S^2 res x 2res, T^2 res x res.
PushforwardReport pushforward_check(const Flow& f, const Density& base, const Density& target,
                                    int res, std::size_t n, std::uint64_t seed,
                                    int noise_reps = 20);

struct LogdetAudit {
  std::size_t n = 0;
  double min_logdet = 0.0;
  double max_logdet = 0.0;
  std::size_t nonpositive = 0;
  /// |det J| below 1e-12: piecewise-constant (non-smooth) transport.
  std::size_t degenerate = 0;
  std::size_t cut_locus = 0;
  bool all_positive = false;
  bool all_zero = false;
  std::vector<double> first_bad;
  nlohmann::json to_json() const;
};

LogdetAudit logdet_positivity_audit(const Flow& f, std::size_t n, std::uint64_t seed);

}  // namespace rcpm
