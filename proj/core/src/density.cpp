#include "rcpm/density.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "rcpm/error.hpp"
#include "rcpm/quadrature.hpp"

namespace rcpm {

using nlohmann::json;
using std::numbers::pi;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Composite Simpson on [a, b] with an even number of panels.
template <class F>
double simpson(F f, double a, double b, int panels = 4000) {
  const double h = (b - a) / panels;
  double s = f(a) + f(b);
  for (int i = 1; i < panels; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
  return s * h / 3.0;
}

double log_sphere_area(int n) {
  // area of the unit S^n embedded in R^(n+1)
  const double a = 0.5 * (n + 1);
  return std::log(2.0) + a * std::log(pi) - std::lgamma(a);
}

// log(r / sin r), finite up to (but not at) r = pi
double log_r_over_sin(double r) {
  if (r < 1e-4) return r * r / 6.0;
  return std::log(r) - std::log(std::max(std::sin(r), 1e-300));
}

// (1/r - cot r) / r
double inv_minus_cot_over_r(double r) {
  if (r < 1e-2) {
    const double r2 = r * r;
    return 1.0 / 3.0 + r2 / 45.0 + 2.0 * r2 * r2 / 945.0;
  }
  return (1.0 / r - std::cos(r) / std::max(std::sin(r), 1e-300)) / r;
}

double r_over_sin(double r) {
  if (r < 1e-4) return 1.0 + r * r / 6.0;
  return r / std::max(std::sin(r), 1e-300);
}

json point_json(const Point& p) { return p.coords; }

double logsumexp(const std::vector<double>& a, std::vector<double>* softmax) {
  const double m = *std::max_element(a.begin(), a.end());
  if (m == kNegInf) {
    if (softmax) softmax->assign(a.size(), 0.0);
    return kNegInf;
  }
  double s = 0.0;
  for (double v : a) s += std::exp(v - m);
  if (softmax) {
    softmax->resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) (*softmax)[i] = std::exp(a[i] - m) / s;
  }
  return m + std::log(s);
}

}  // namespace

double Density::log_density(const Point&) const {
  throw Error("density '" + kind() + "' has no pointwise log-density");
}

std::vector<double> Density::grad_log_density(const Point&) const {
  throw Error("density '" + kind() + "' has no log-density gradient");
}

std::vector<Point> Density::sample(Rng&, std::size_t) const {
  throw Error("density '" + kind() + "' cannot be sampled");
}

// -- uniform ----------------------------------------------------------------

std::vector<double> UniformDensity::grad_log_density(const Point& x) const {
  return std::vector<double>(x.size(), 0.0);
}

std::vector<Point> UniformDensity::sample(Rng& rng, std::size_t n) const {
  return m_.sample_uniform(rng, n);
}

json UniformDensity::to_json() const { return {{"kind", kind()}}; }

// -- wrapped Gaussians --------------------------------------------------------

std::vector<Point> sample_wrapped_gaussian(const Manifold& m, Rng& rng, const Point& center,
                                           double scale, std::size_t n) {
  if (!(scale > 0.0)) throw ConfigError("wrapped Gaussian scale must be positive");
  const auto basis = m.tangent_basis(center);
  std::vector<Point> out;
  out.reserve(n);
  std::vector<double> v(center.size());
  for (std::size_t k = 0; k < n; ++k) {
    std::fill(v.begin(), v.end(), 0.0);
    for (const auto& e : basis) {
      const double z = scale * standard_normal(rng);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += z * e.v[i];
    }
    out.push_back(m.exp(center, v));
  }
  return out;
}

WrappedGaussianMixture::WrappedGaussianMixture(Manifold m, std::vector<Point> centers,
                                               std::vector<double> scales,
                                               std::vector<double> weights)
    : m_(std::move(m)),
      centers_(std::move(centers)),
      scales_(std::move(scales)),
      weights_(std::move(weights)) {
  if (m_.factors().size() != 1) throw ConfigError("wrapped Gaussian mixture needs a single sphere");
  if (centers_.empty() || centers_.size() != scales_.size() || centers_.size() != weights_.size())
    throw ConfigError("mixture centers, scales and weights must have equal nonzero length");
  double wsum = 0.0;
  for (double w : weights_) {
    if (!(w >= 0.0)) throw ConfigError("mixture weights must be nonnegative");
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-9) throw ConfigError("mixture weights must sum to 1");
  const int n = m_.dim();
  for (std::size_t j = 0; j < centers_.size(); ++j) {
    if (!m_.contains(centers_[j], 1e-9)) throw ConfigError("mixture center is off the manifold");
    const double s = scales_[j];
    if (!(s > 0.0)) throw ConfigError("mixture scales must be positive");
    // mass of the tangent Gaussian inside the injectivity ball |v| < pi
    const double inside = simpson(
        [&](double r) {
          return std::exp(log_sphere_area(n - 1) + (n - 1) * std::log(std::max(r, 1e-300)) -
                          r * r / (2 * s * s) - 0.5 * n * std::log(2 * pi * s * s));
        },
        0.0, pi);
    log_norm_.push_back(std::log(weights_[j]) - 0.5 * n * std::log(2 * pi * s * s) -
                        std::log(inside));
  }
}

double WrappedGaussianMixture::log_density(const Point& x) const {
  const int n = m_.dim();
  std::vector<double> terms(centers_.size());
  for (std::size_t j = 0; j < centers_.size(); ++j) {
    const double r = geom::sphere_angle(x.coords.data(), centers_[j].coords.data(), n + 1);
    const double s = scales_[j];
    terms[j] = log_norm_[j] - r * r / (2 * s * s) + (n - 1) * log_r_over_sin(r);
  }
  return logsumexp(terms, nullptr);
}

std::vector<double> WrappedGaussianMixture::grad_log_density(const Point& x) const {
  const int n = m_.dim();
  const std::size_t J = centers_.size();
  std::vector<double> terms(J), dt(J), w;
  for (std::size_t j = 0; j < J; ++j) {
    const double r = geom::sphere_angle(x.coords.data(), centers_[j].coords.data(), n + 1);
    const double s = scales_[j];
    terms[j] = log_norm_[j] - r * r / (2 * s * s) + (n - 1) * log_r_over_sin(r);
    // derivative with respect to t = <x, c_j>
    dt[j] = r_over_sin(r) * (1.0 / (s * s) - (n - 1) * inv_minus_cot_over_r(r));
  }
  logsumexp(terms, &w);
  std::vector<double> g(x.size(), 0.0);
  for (std::size_t j = 0; j < J; ++j)
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += w[j] * dt[j] * centers_[j][i];
  return g;
}

std::vector<Point> WrappedGaussianMixture::sample(Rng& rng, std::size_t n) const {
  std::discrete_distribution<std::size_t> pick(weights_.begin(), weights_.end());
  std::vector<Point> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = pick(rng);
    out.push_back(sample_wrapped_gaussian(m_, rng, centers_[j], scales_[j], 1).front());
  }
  return out;
}

json WrappedGaussianMixture::to_json() const {
  json c = json::array();
  for (const auto& p : centers_) c.push_back(point_json(p));
  return {{"kind", kind()}, {"centers", c}, {"scales", scales_}, {"weights", weights_}};
}

std::shared_ptr<WrappedGaussianMixture> sphere_mixture4(double scale) {
  const double a = 1.0 / std::sqrt(3.0);
  std::vector<Point> c = {{a, a, a}, {a, -a, -a}, {-a, a, -a}, {-a, -a, a}};
  return std::make_shared<WrappedGaussianMixture>(Manifold::sphere(2), std::move(c),
                                                  std::vector<double>(4, scale),
                                                  std::vector<double>(4, 0.25));
}

// -- checkerboard ---------------------------------------------------------------

bool SphereCheckerboard::active(double colatitude, double longitude) {
  const int i = std::clamp(static_cast<int>(std::floor(colatitude / pi * 4.0)), 0, 3);
  const int j = std::clamp(static_cast<int>(std::floor(longitude / (2 * pi) * 8.0)), 0, 7);
  return (i + j) % 2 == 0;
}

double SphereCheckerboard::log_density(const Point& x) const {
  const auto [th, ph] = sphere_chart(x);
  return active(th, ph) ? -std::log(2 * pi) : kNegInf;
}

std::vector<double> SphereCheckerboard::grad_log_density(const Point& x) const {
  return std::vector<double>(x.size(), 0.0);
}

std::vector<Point> SphereCheckerboard::sample(Rng& rng, std::size_t n) const {
  std::vector<Point> out;
  out.reserve(n);
  while (out.size() < n) {
    Point p = m_.sample_uniform(rng, 1).front();
    const auto [th, ph] = sphere_chart(p);
    if (active(th, ph)) out.push_back(std::move(p));
  }
  return out;
}

json SphereCheckerboard::to_json() const { return {{"kind", kind()}}; }

// -- torus ----------------------------------------------------------------------

Torus3Modal::Torus3Modal() : m_(Manifold::torus(2)) {
  z_ = integrate(m_, 400, [&](const Point& x) { return std::exp(log_unnormalized(x)); });
}

double Torus3Modal::log_unnormalized(const Point& x) const {
  std::vector<double> t(3);
  for (int i = 0; i < 3; ++i) {
    t[i] = x[0] * std::cos(kModes[i][0]) + x[1] * std::sin(kModes[i][0]) +
           x[2] * std::cos(kModes[i][1]) + x[3] * std::sin(kModes[i][1]) - std::log(3.0);
  }
  return logsumexp(t, nullptr);
}

double Torus3Modal::log_density(const Point& x) const { return log_unnormalized(x) - std::log(z_); }

std::vector<double> Torus3Modal::grad_log_density(const Point& x) const {
  std::vector<double> t(3), w;
  for (int i = 0; i < 3; ++i) {
    t[i] = x[0] * std::cos(kModes[i][0]) + x[1] * std::sin(kModes[i][0]) +
           x[2] * std::cos(kModes[i][1]) + x[3] * std::sin(kModes[i][1]);
  }
  logsumexp(t, &w);
  std::vector<double> g(4, 0.0);
  for (int i = 0; i < 3; ++i) {
    g[0] += w[i] * std::cos(kModes[i][0]);
    g[1] += w[i] * std::sin(kModes[i][0]);
    g[2] += w[i] * std::cos(kModes[i][1]);
    g[3] += w[i] * std::sin(kModes[i][1]);
  }
  return g;
}

std::vector<Point> Torus3Modal::sample(Rng& rng, std::size_t n) const {
  // rejection from uniform; the unnormalized density is bounded by e^2
  std::vector<Point> out;
  out.reserve(n);
  while (out.size() < n) {
    Point p = m_.sample_uniform(rng, 1).front();
    if (std::log(uniform01(rng)) < log_unnormalized(p) - 2.0) out.push_back(std::move(p));
  }
  return out;
}

json Torus3Modal::to_json() const { return {{"kind", kind()}}; }

// -- KDE ------------------------------------------------------------------------

double log_gaussian_kernel_mass(const Manifold& m, double h) {
  if (!(h > 0.0)) throw ConfigError("bandwidth must be positive");
  double acc = 0.0;
  for (const auto& f : m.factors()) {
    const int n = f.n;
    const double radial = simpson(
        [&](double r) { return std::exp(-r * r / (2 * h * h)) * std::pow(std::sin(r), n - 1); }, 0.0,
        pi);
    acc += log_sphere_area(n - 1) + std::log(radial);
  }
  return acc;
}

double kde_log_density(const Manifold& m, std::span<const Point> points, double h, const Point& x) {
  if (points.empty()) throw InvalidBatch("kde needs at least one point");
  std::vector<double> t(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double c = m.cost(x, points[i]);
    t[i] = -c / (h * h);
  }
  return logsumexp(t, nullptr) - std::log(static_cast<double>(points.size())) -
         log_gaussian_kernel_mass(m, h);
}

KdeDensity::KdeDensity(Manifold m, std::vector<Point> points, double bandwidth)
    : m_(std::move(m)), points_(std::move(points)), h_(bandwidth) {
  if (points_.empty()) throw ConfigError("kde needs at least one point");
  log_mass_ = log_gaussian_kernel_mass(m_, h_);
}

double KdeDensity::log_density(const Point& x) const {
  std::vector<double> t(points_.size());
  for (std::size_t i = 0; i < points_.size(); ++i) t[i] = -m_.cost(x, points_[i]) / (h_ * h_);
  return logsumexp(t, nullptr) - std::log(static_cast<double>(points_.size())) - log_mass_;
}

std::vector<double> KdeDensity::grad_log_density(const Point& x) const {
  const std::size_t N = points_.size();
  std::vector<double> t(N), w;
  for (std::size_t i = 0; i < N; ++i) t[i] = -m_.cost(x, points_[i]) / (h_ * h_);
  logsumexp(t, &w);
  std::vector<double> g(x.size(), 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    for (const auto& f : m_.factors()) {
      const double* p = points_[i].coords.data() + f.offset;
      const double r = geom::sphere_angle(x.coords.data() + f.offset, p, f.ambient());
      const double c = w[i] * r_over_sin(r) / (h_ * h_);
      for (int k = 0; k < f.ambient(); ++k) g[f.offset + k] += c * p[k];
    }
  }
  return g;
}

json KdeDensity::to_json() const {
  json pts = json::array();
  for (const auto& p : points_) pts.push_back(point_json(p));
  return {{"kind", kind()}, {"bandwidth", h_}, {"points", pts}};
}

// -- point cloud ------------------------------------------------------------------

EmpiricalDensity::EmpiricalDensity(Manifold m, std::vector<Point> points)
    : m_(std::move(m)), points_(std::move(points)) {
  if (points_.empty()) throw ConfigError("point cloud is empty");
  for (const auto& p : points_)
    if (!m_.contains(p, 1e-6)) throw ConfigError("point cloud contains a point off the manifold");
}

std::vector<Point> EmpiricalDensity::sample(Rng& rng, std::size_t n) const {
  std::uniform_int_distribution<std::size_t> pick(0, points_.size() - 1);
  std::vector<Point> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) out.push_back(points_[pick(rng)]);
  return out;
}

json EmpiricalDensity::to_json() const {
  json pts = json::array();
  for (const auto& p : points_) pts.push_back(point_json(p));
  return {{"kind", kind()}, {"points", pts}};
}

}  // namespace rcpm
