#pragma once

#include <span>
#include <string>
#include <vector>

#include "rcpm/rng.hpp"

namespace rcpm {

/// Point on a manifold, stored in ambient (embedding) coordinates.
struct Point {
  std::vector<double> coords;

  Point() = default;
  explicit Point(std::vector<double> c) : coords(std::move(c)) {}
  Point(std::initializer_list<double> c) : coords(c) {}

  std::size_t size() const { return coords.size(); }
  double operator[](std::size_t i) const { return coords[i]; }
  double& operator[](std::size_t i) { return coords[i]; }
  bool operator==(const Point&) const = default;
};

/// Vector in T_x M, ambient representation.
struct Tangent {
  Point base;
  std::vector<double> v;

  double norm() const;
};

/// One round-sphere factor S^n occupying ambient slots [offset, offset + n + 1).
struct SphereFactor {
  int n = 0;
  int offset = 0;
  int ambient() const { return n + 1; }
};

/// Sphere or finite product of spheres. Products are flattened into a list of
/// sphere factors for computation; the nested descriptor is kept for I/O.
class Manifold {
 public:
  enum class Kind { Sphere, Product };

  /// Defaults to S^2.
  Manifold() : n_(2) { finalize(); }

  static Manifold sphere(int n);
  static Manifold product(std::vector<Manifold> parts);
  /// Flat torus T^k = (S^1)^k.
  static Manifold torus(int k = 2);

  Kind kind() const { return kind_; }
  int sphere_n() const { return n_; }
  const std::vector<Manifold>& parts() const { return parts_; }
  std::span<const SphereFactor> factors() const { return factors_; }

  int dim() const { return dim_; }
  int ambient_dim() const { return ambient_; }
  /// Diameter |M|.
  double diameter() const { return diameter_; }
  /// Riemannian volume (4*pi for S^2, 4*pi^2 for T^2).
  double volume() const;

  bool is_sphere(int n) const { return factors_.size() == 1 && factors_[0].n == n; }
  bool is_torus() const;
  std::string name() const;

  bool operator==(const Manifold& o) const;

  // -- geometry -------------------------------------------------------------

  Point exp(const Point& x, std::span<const double> v) const;
  Point exp(const Tangent& v) const { return exp(v.base, v.v); }
  /// Throws CutLocus when y is (numerically) antipodal to x in any factor.
  Tangent log(const Point& x, const Point& y) const;
  double distance(const Point& x, const Point& y) const;
  double cost(const Point& x, const Point& y) const;
  /// Deterministic orthonormal basis of T_x M, d vectors.
  std::vector<Tangent> tangent_basis(const Point& x) const;
  std::vector<Point> sample_uniform(Rng& rng, std::size_t n) const;
  /// Nearest manifold point (per-factor normalization). Throws DegenerateInput.
  Point project(std::span<const double> raw) const;
  /// Orthogonal projection of an ambient vector onto T_x M.
  std::vector<double> project_tangent(const Point& x, std::span<const double> v) const;

  /// True when every factor slice has unit norm within tol.
  bool contains(const Point& x, double tol = 1e-12) const;

 private:
  void finalize();

  Kind kind_ = Kind::Sphere;
  int n_ = 0;
  std::vector<Manifold> parts_;
  std::vector<SphereFactor> factors_;
  int dim_ = 0;
  int ambient_ = 0;
  double diameter_ = 0.0;
};

namespace geom {

/// Inner product inside one factor slice.
inline double dot(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

/// Great-circle angle between unit vectors, accurate near 0 and pi.
double sphere_angle(const double* x, const double* y, int n);

constexpr double kCutLocusTol = 1e-9;

/// Potential kernels resolve log_x(y) down to this angular distance from the antipode.
/// On S^1 factors the kCutLocusTol band is ~4.5e-5 rad wide, which adds up to percent-level
/// mass over many centers.
constexpr double kKernelAntipodalAngle = 1e-7;

}  // namespace geom

}  // namespace rcpm
