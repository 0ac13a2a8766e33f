#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rcpm/manifold.hpp"

namespace rcpm {

/// Probability density on a manifold with respect to the Riemannian volume.
class Density {
 public:
  virtual ~Density() = default;

  virtual const Manifold& manifold() const = 0;
  virtual std::string kind() const = 0;

  virtual bool can_sample() const { return false; }
  virtual bool has_log_density() const { return true; }

  /// May return -inf outside the support.
  virtual double log_density(const Point& x) const;
  /// Ambient gradient of log_density; only its tangential part is meaningful.
  virtual std::vector<double> grad_log_density(const Point& x) const;
  virtual std::vector<Point> sample(Rng& rng, std::size_t n) const;

  virtual nlohmann::json to_json() const = 0;
};

using DensityPtr = std::shared_ptr<const Density>;

class UniformDensity : public Density {
 public:
  explicit UniformDensity(Manifold m) : m_(std::move(m)), logp_(-std::log(m_.volume())) {}
  const Manifold& manifold() const override { return m_; }
  std::string kind() const override { return "uniform"; }
  bool can_sample() const override { return true; }
  double log_density(const Point&) const override { return logp_; }
  std::vector<double> grad_log_density(const Point& x) const override;
  std::vector<Point> sample(Rng& rng, std::size_t n) const override;
  nlohmann::json to_json() const override;

 private:
  Manifold m_;
  double logp_;
};

/// Mixture of wrapped Gaussians on a single sphere S^n. Each component is the image of
/// N(0, scale^2 I) on T_c M under exp_c; the density keeps the principal branch
/// (tangent radius < pi) with the volume factor (r / sin r)^(n-1), renormalized.
class WrappedGaussianMixture : public Density {
 public:
  WrappedGaussianMixture(Manifold m, std::vector<Point> centers, std::vector<double> scales,
                         std::vector<double> weights);
  const Manifold& manifold() const override { return m_; }
  std::string kind() const override { return "wrapped_gaussian_mixture"; }
  bool can_sample() const override { return true; }
  double log_density(const Point& x) const override;
  std::vector<double> grad_log_density(const Point& x) const override;
  std::vector<Point> sample(Rng& rng, std::size_t n) const override;
  nlohmann::json to_json() const override;

  const std::vector<Point>& centers() const { return centers_; }

 private:
  Manifold m_;
  std::vector<Point> centers_;
  std::vector<double> scales_;
  std::vector<double> weights_;
  std::vector<double> log_norm_;  // per component, includes the weight
};

/// Four equal wrapped Gaussians (scale 0.3) at the vertices of a regular tetrahedron on S^2.
std::shared_ptr<WrappedGaussianMixture> sphere_mixture4(double scale = 0.3);

/// Checkerboard on S^2 in the (colatitude, longitude) chart: 4 x 8 cells, uniform on
/// the cells with even index sum. The active cells cover exactly half the sphere.
class SphereCheckerboard : public Density {
 public:
  SphereCheckerboard() : m_(Manifold::sphere(2)) {}
  const Manifold& manifold() const override { return m_; }
  std::string kind() const override { return "sphere_checkerboard"; }
  bool can_sample() const override { return true; }
  double log_density(const Point& x) const override;
  std::vector<double> grad_log_density(const Point& x) const override;
  std::vector<Point> sample(Rng& rng, std::size_t n) const override;
  nlohmann::json to_json() const override;

  static bool active(double colatitude, double longitude);

 private:
  Manifold m_;
};

/// p(t1, t2) proportional to (1/3) sum_i exp[cos(t1 - a_i1) + cos(t2 - a_i2)] on T^2.
class Torus3Modal : public Density {
 public:
  Torus3Modal();
  const Manifold& manifold() const override { return m_; }
  std::string kind() const override { return "torus_3modal"; }
  bool can_sample() const override { return true; }
  double log_density(const Point& x) const override;
  std::vector<double> grad_log_density(const Point& x) const override;
  std::vector<Point> sample(Rng& rng, std::size_t n) const override;
  nlohmann::json to_json() const override;

  /// Normalizer of the unnormalized form above, from grid quadrature.
  double normalizer() const { return z_; }
  static constexpr double kModes[3][2] = {{4.18, 6.7}, {4.18, 4.7}, {4.18, 2.7}};

 private:
  double log_unnormalized(const Point& x) const;
  Manifold m_;
  double z_ = 1.0;
};

/// Gaussian kernel exp(-d^2 / 2h^2) in intrinsic distance, averaged over the points and
/// normalized by quadrature of the kernel mass.
class KdeDensity : public Density {
 public:
  KdeDensity(Manifold m, std::vector<Point> points, double bandwidth);
  const Manifold& manifold() const override { return m_; }
  std::string kind() const override { return "kde"; }
  double log_density(const Point& x) const override;
  std::vector<double> grad_log_density(const Point& x) const override;
  nlohmann::json to_json() const override;

  double bandwidth() const { return h_; }
  double log_kernel_mass() const { return log_mass_; }

 private:
  Manifold m_;
  std::vector<Point> points_;
  double h_;
  double log_mass_;
};

/// Bootstrap resampling of a fixed point cloud (data for likelihood training).
class EmpiricalDensity : public Density {
 public:
  EmpiricalDensity(Manifold m, std::vector<Point> points);
  const Manifold& manifold() const override { return m_; }
  std::string kind() const override { return "points"; }
  bool can_sample() const override { return true; }
  bool has_log_density() const override { return false; }
  std::vector<Point> sample(Rng& rng, std::size_t n) const override;
  nlohmann::json to_json() const override;

  const std::vector<Point>& points() const { return points_; }

 private:
  Manifold m_;
  std::vector<Point> points_;
};

/// v ~ N(0, scale^2) in T_center M, x = exp_center(v).
std::vector<Point> sample_wrapped_gaussian(const Manifold& m, Rng& rng, const Point& center,
                                           double scale, std::size_t n);

double kde_log_density(const Manifold& m, std::span<const Point> points, double bandwidth,
                       const Point& x);

/// log of the kernel mass of exp(-d^2 / 2h^2) integrated over the manifold.
double log_gaussian_kernel_mass(const Manifold& m, double bandwidth);

}  // namespace rcpm
