#include "rcpm/quadrature.hpp"

#include <cmath>
#include <numbers>

#include "rcpm/error.hpp"

namespace rcpm {

using std::numbers::pi;

Point sphere_point(double colatitude, double longitude) {
  const double s = std::sin(colatitude);
  return Point{s * std::cos(longitude), s * std::sin(longitude), std::cos(colatitude)};
}

Point torus_point(double a, double b) {
  return Point{std::cos(a), std::sin(a), std::cos(b), std::sin(b)};
}

std::pair<double, double> sphere_chart(const Point& x) {
  const double th = std::atan2(std::hypot(x[0], x[1]), x[2]);
  double ph = std::atan2(x[1], x[0]);
  if (ph < 0.0) ph += 2.0 * pi;
  if (ph >= 2.0 * pi) ph = 0.0;
  return {th, ph};
}

std::vector<QuadNode> quadrature_grid(const Manifold& m, int res) {
  if (res < 1) throw ConfigError("quadrature resolution must be positive");
  std::vector<QuadNode> nodes;
  if (m.is_sphere(2)) {
    const int nl = 2 * res;
    const double dth = pi / res, dph = 2.0 * pi / nl;
    nodes.reserve(static_cast<std::size_t>(res) * nl);
    for (int i = 0; i < res; ++i) {
      const double th = (i + 0.5) * dth;
      // exact band area, so constants integrate without error
      const double w = (std::cos(i * dth) - std::cos((i + 1) * dth)) * dph;
      for (int j = 0; j < nl; ++j) {
        const double ph = j * dph;
        nodes.push_back({sphere_point(th, ph), th, ph, w});
      }
    }
  } else if (m.is_sphere(1)) {
    const double h = 2.0 * pi / res;
    for (int i = 0; i < res; ++i) {
      const double a = i * h;
      nodes.push_back({Point{std::cos(a), std::sin(a)}, a, 0.0, h});
    }
  } else if (m.is_torus()) {
    const double h = 2.0 * pi / res;
    nodes.reserve(static_cast<std::size_t>(res) * res);
    for (int i = 0; i < res; ++i)
      for (int j = 0; j < res; ++j)
        nodes.push_back({torus_point(i * h, j * h), i * h, j * h, h * h});
  } else {
    throw ConfigError("no quadrature grid for " + m.name());
  }
  return nodes;
}

double integrate(const Manifold& m, int res, const std::function<double(const Point&)>& f) {
  double acc = 0.0;
  for (const auto& q : quadrature_grid(m, res)) acc += q.weight * f(q.x);
  return acc;
}

}  // namespace rcpm
