#pragma once

#include <functional>
#include <vector>

#include "rcpm/manifold.hpp"

namespace rcpm {

/// One node of a chart grid. (u, v) are chart coordinates: colatitude / longitude on S^2,
/// angles on S^1 and T^2 (v unused on S^1).
struct QuadNode {
  Point x;
  double u = 0.0;
  double v = 0.0;
  double weight = 0.0;
};

/// Tensor grid with volume weights. S^2: res colatitude midpoints x 2*res longitudes,
/// weights are the exact band areas (cos theta_i - cos theta_{i+1}) dphi. S^1: res angles.
/// T^2: res x res angles.
/// Throws ConfigError for other manifolds.
std::vector<QuadNode> quadrature_grid(const Manifold& m, int res);

double integrate(const Manifold& m, int res, const std::function<double(const Point&)>& f);

/// Point on S^2 from colatitude and longitude.
Point sphere_point(double colatitude, double longitude);
/// Point on T^2 from two angles.
Point torus_point(double a, double b);
/// (colatitude, longitude in [0, 2pi)) of a point on S^2.
std::pair<double, double> sphere_chart(const Point& x);

}  // namespace rcpm
