#include "rcpm/manifold.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "rcpm/error.hpp"

namespace rcpm {

namespace geom {

double sphere_angle(const double* x, const double* y, int n) {
  double t = dot(x, y, n);
  if (t > 0.9) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    return 2.0 * std::asin(std::min(1.0, 0.5 * std::sqrt(s)));
  }
  if (t < -0.9) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += (x[i] + y[i]) * (x[i] + y[i]);
    return std::numbers::pi - 2.0 * std::asin(std::min(1.0, 0.5 * std::sqrt(s)));
  }
  return std::acos(std::clamp(t, -1.0, 1.0));
}

}  // namespace geom

double Tangent::norm() const {
  return std::sqrt(geom::dot(v.data(), v.data(), static_cast<int>(v.size())));
}

Manifold Manifold::sphere(int n) {
  if (n < 1) throw ConfigError("sphere dimension must be >= 1");
  Manifold m;
  m.kind_ = Kind::Sphere;
  m.n_ = n;
  m.parts_.clear();
  m.finalize();
  return m;
}

Manifold Manifold::product(std::vector<Manifold> parts) {
  if (parts.empty()) throw ConfigError("product manifold needs at least one factor");
  Manifold m;
  m.kind_ = Kind::Product;
  m.n_ = 0;
  m.parts_ = std::move(parts);
  m.finalize();
  return m;
}

Manifold Manifold::torus(int k) {
  std::vector<Manifold> parts(static_cast<std::size_t>(k), sphere(1));
  return product(std::move(parts));
}

void Manifold::finalize() {
  factors_.clear();
  if (kind_ == Kind::Sphere) {
    factors_.push_back({n_, 0});
  } else {
    int offset = 0;
    for (const auto& p : parts_) {
      for (const auto& f : p.factors()) {
        factors_.push_back({f.n, offset + f.offset});
      }
      offset += p.ambient_dim();
    }
  }
  dim_ = 0;
  ambient_ = 0;
  double d2 = 0.0;
  for (const auto& f : factors_) {
    dim_ += f.n;
    ambient_ += f.ambient();
    d2 += std::numbers::pi * std::numbers::pi;
  }
  diameter_ = std::sqrt(d2);
}

double Manifold::volume() const {
  double v = 1.0;
  for (const auto& f : factors_) {
    double a = 0.5 * (f.n + 1);
    v *= 2.0 * std::pow(std::numbers::pi, a) / std::tgamma(a);
  }
  return v;
}

bool Manifold::is_torus() const {
  return factors_.size() == 2 &&
         std::all_of(factors_.begin(), factors_.end(), [](const SphereFactor& f) { return f.n == 1; });
}

std::string Manifold::name() const {
  std::string s;
  for (std::size_t i = 0; i < factors_.size(); ++i) {
    if (i) s += " x ";
    s += "S^" + std::to_string(factors_[i].n);
  }
  return s;
}

bool Manifold::operator==(const Manifold& o) const {
  if (kind_ != o.kind_) return false;
  if (kind_ == Kind::Sphere) return n_ == o.n_;
  return parts_ == o.parts_;
}

bool Manifold::contains(const Point& x, double tol) const {
  if (static_cast<int>(x.size()) != ambient_) return false;
  for (const auto& f : factors_) {
    const double* p = x.coords.data() + f.offset;
    if (std::abs(std::sqrt(geom::dot(p, p, f.ambient())) - 1.0) > tol) return false;
  }
  return true;
}

Point Manifold::exp(const Point& x, std::span<const double> v) const {
  if (std::all_of(v.begin(), v.end(), [](double c) { return c == 0.0; })) return x;
  Point out(std::vector<double>(x.coords.size()));
  for (const auto& f : factors_) {
    const int n = f.ambient();
    const double* xs = x.coords.data() + f.offset;
    const double* vs = v.data() + f.offset;
    double* os = out.coords.data() + f.offset;
    const double nv = std::sqrt(geom::dot(vs, vs, n));
    if (nv < 1e-8) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) {
        os[i] = xs[i] + vs[i];
        s += os[i] * os[i];
      }
      s = std::sqrt(s);
      for (int i = 0; i < n; ++i) os[i] /= s;
    } else {
      const double c = std::cos(nv), sn = std::sin(nv) / nv;
      for (int i = 0; i < n; ++i) os[i] = xs[i] * c + vs[i] * sn;
    }
  }
  return out;
}

Tangent Manifold::log(const Point& x, const Point& y) const {
  Tangent out{x, std::vector<double>(x.coords.size(), 0.0)};
  for (const auto& f : factors_) {
    const int n = f.ambient();
    const double* xs = x.coords.data() + f.offset;
    const double* ys = y.coords.data() + f.offset;
    double* os = out.v.data() + f.offset;
    const double t = geom::dot(xs, ys, n);
    if (t <= -1.0 + geom::kCutLocusTol) {
      throw CutLocus("log_map: point lies on the cut locus (antipodal factor)");
    }
    const double r = geom::sphere_angle(xs, ys, n);
    double un = 0.0;
    for (int i = 0; i < n; ++i) {
      os[i] = ys[i] - t * xs[i];
      un += os[i] * os[i];
    }
    un = std::sqrt(un);
    if (r == 0.0 || un == 0.0) {
      std::fill(os, os + n, 0.0);
      continue;
    }
    const double scale = r / un;
    for (int i = 0; i < n; ++i) os[i] *= scale;
  }
  return out;
}

double Manifold::distance(const Point& x, const Point& y) const {
  double d2 = 0.0;
  for (const auto& f : factors_) {
    const double r = geom::sphere_angle(x.coords.data() + f.offset, y.coords.data() + f.offset, f.ambient());
    d2 += r * r;
  }
  return std::sqrt(d2);
}

double Manifold::cost(const Point& x, const Point& y) const {
  double d2 = 0.0;
  for (const auto& f : factors_) {
    const double r = geom::sphere_angle(x.coords.data() + f.offset, y.coords.data() + f.offset, f.ambient());
    d2 += r * r;
  }
  return 0.5 * d2;
}

std::vector<Tangent> Manifold::tangent_basis(const Point& x) const {
  std::vector<Tangent> basis;
  basis.reserve(static_cast<std::size_t>(dim_));
  for (const auto& f : factors_) {
    const int n = f.ambient();
    const double* xs = x.coords.data() + f.offset;
    std::vector<int> axes(static_cast<std::size_t>(n));
    std::iota(axes.begin(), axes.end(), 0);
    // Least-aligned axes first; stable so ties resolve by index.
    std::stable_sort(axes.begin(), axes.end(),
                     [&](int a, int b) { return std::abs(xs[a]) < std::abs(xs[b]); });
    std::vector<std::vector<double>> local;
    for (int j = 0; j < f.n; ++j) {
      std::vector<double> e(static_cast<std::size_t>(n), 0.0);
      e[static_cast<std::size_t>(axes[static_cast<std::size_t>(j)])] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        double c = geom::dot(e.data(), xs, n);
        for (int i = 0; i < n; ++i) e[i] -= c * xs[i];
        for (const auto& q : local) {
          c = geom::dot(e.data(), q.data(), n);
          for (int i = 0; i < n; ++i) e[i] -= c * q[i];
        }
      }
      const double en = std::sqrt(geom::dot(e.data(), e.data(), n));
      for (auto& c : e) c /= en;
      local.push_back(std::move(e));
    }
    for (const auto& e : local) {
      Tangent t{x, std::vector<double>(x.coords.size(), 0.0)};
      std::copy(e.begin(), e.end(), t.v.begin() + f.offset);
      basis.push_back(std::move(t));
    }
  }
  return basis;
}

std::vector<Point> Manifold::sample_uniform(Rng& rng, std::size_t n) const {
  std::vector<Point> out;
  out.reserve(n);
  std::vector<double> raw(static_cast<std::size_t>(ambient_));
  while (out.size() < n) {
    for (auto& c : raw) c = standard_normal(rng);
    try {
      out.push_back(project(raw));
    } catch (const DegenerateInput&) {
      // probability zero; redraw
    }
  }
  return out;
}

Point Manifold::project(std::span<const double> raw) const {
  if (static_cast<int>(raw.size()) != ambient_) throw DegenerateInput("project: wrong ambient dimension");
  Point out(std::vector<double>(raw.begin(), raw.end()));
  for (const auto& f : factors_) {
    double* s = out.coords.data() + f.offset;
    const double nrm = std::sqrt(geom::dot(s, s, f.ambient()));
    if (nrm < 1e-12) throw DegenerateInput("project: sphere factor has (near) zero norm");
    for (int i = 0; i < f.ambient(); ++i) s[i] /= nrm;
  }
  return out;
}

std::vector<double> Manifold::project_tangent(const Point& x, std::span<const double> v) const {
  std::vector<double> out(v.begin(), v.end());
  for (const auto& f : factors_) {
    const double* xs = x.coords.data() + f.offset;
    double* os = out.data() + f.offset;
    const double c = geom::dot(xs, os, f.ambient()) / geom::dot(xs, xs, f.ambient());
    for (int i = 0; i < f.ambient(); ++i) os[i] -= c * xs[i];
  }
  return out;
}

}  // namespace rcpm
