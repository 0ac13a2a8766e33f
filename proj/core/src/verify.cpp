#include "rcpm/verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "rcpm/error.hpp"
#include "rcpm/parallel.hpp"

namespace rcpm {

using nlohmann::json;
using std::numbers::pi;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// signed angle difference in (-pi, pi]
double wrap(double a) {
  a = std::remainder(a, 2.0 * pi);
  if (a <= -pi) a += 2.0 * pi;
  return a;
}

double angle_of(const Point& x) { return std::atan2(x[1], x[0]); }

double circle_cost(double a, double b) {
  const double d = wrap(a - b);
  return 0.5 * d * d;
}

DensityPtr borrow(const Density& d) { return DensityPtr(&d, [](const Density*) {}); }

}  // namespace

// -- grid functions ------------------------------------------------------------

GridFunction GridFunction::sample(const Manifold& m, int res, const std::function<double(const Point&)>& f) {
  GridFunction g;
  g.manifold = m;
  g.res = res;
  g.nodes = quadrature_grid(m, res);
  g.values.resize(g.nodes.size());
  for (std::size_t i = 0; i < g.nodes.size(); ++i) g.values[i] = f(g.nodes[i].x);
  return g;
}

double GridFunction::spacing() const {
  if (manifold.is_sphere(2)) return pi / res;
  return 2.0 * pi / res;
}

std::vector<double> c_transform_points(const Manifold& m, std::span<const Point> xs,
                                       std::span<const double> psi, std::span<const Point> ys) {
  std::vector<double> out(ys.size(), kInf);
  parallel_chunks(ys.size(), 64, [&](std::size_t, std::size_t lo, std::size_t hi) {
    for (std::size_t j = lo; j < hi; ++j) {
      double best = kInf;
      for (std::size_t i = 0; i < xs.size(); ++i) best = std::min(best, m.cost(xs[i], ys[j]) - psi[i]);
      out[j] = best;
    }
  });
  return out;
}

GridFunction c_transform(const GridFunction& g) {
  GridFunction out = g;
  std::vector<Point> pts;
  pts.reserve(g.nodes.size());
  for (const auto& n : g.nodes) pts.push_back(n.x);
  out.values = c_transform_points(g.manifold, pts, g.values, pts);
  return out;
}

double discrete_lipschitz(const GridFunction& g) {
  double L = 0.0;
  auto pair = [&](std::size_t a, std::size_t b) {
    const double d = g.manifold.distance(g.nodes[a].x, g.nodes[b].x);
    if (d > 0) L = std::max(L, std::abs(g.values[a] - g.values[b]) / d);
  };
  if (g.manifold.is_sphere(1)) {
    const std::size_t n = g.nodes.size();
    for (std::size_t i = 0; i < n; ++i) pair(i, (i + 1) % n);
  } else if (g.manifold.is_sphere(2)) {
    const std::size_t R = static_cast<std::size_t>(g.res), C = 2 * R;
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < C; ++j) {
        pair(i * C + j, i * C + (j + 1) % C);
        if (i + 1 < R) pair(i * C + j, (i + 1) * C + j);
      }
  } else {
    const std::size_t R = static_cast<std::size_t>(g.res);
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < R; ++j) {
        pair(i * R + j, i * R + (j + 1) % R);
        pair(i * R + j, ((i + 1) % R) * R + j);
      }
  }
  return L;
}

// -- involution -------------------------------------------------------------------

json InvolutionReport::to_json() const {
  return {{"oracle", "involution"}, {"res", res}, {"defect", defect}, {"bound", bound}, {"pass", pass}};
}

InvolutionReport involution_check(const DiscretePotential& p, int res) {
  if (p.gamma != 0.0) throw ConfigError("involution check needs a hard-min potential");
  const GridFunction phi = GridFunction::sample(p.manifold, res, [&](const Point& x) {
    double best = kInf;
    for (std::size_t i = 0; i < p.size(); ++i) best = std::min(best, p.manifold.cost(x, p.center_point(i)) + p.offsets[i]);
    return best;
  });
  const GridFunction phicc = c_transform(c_transform(phi));
  InvolutionReport r;
  r.res = res;
  for (std::size_t i = 0; i < phi.values.size(); ++i)
    r.defect = std::max(r.defect, std::abs(phicc.values[i] - phi.values[i]));
  r.bound = 2.0 * p.manifold.diameter() * phi.spacing();
  r.pass = r.defect <= r.bound;
  return r;
}

DiscretePotential involution_target(std::size_t components, std::uint64_t seed) {
  Rng rng(seed);
  const int base_res = 16;  // any power-of-two grid of at least this size
  std::vector<Point> ys;
  std::vector<double> alphas;
  std::uniform_int_distribution<int> cell(0, base_res - 1);
  for (std::size_t i = 0; i < components; ++i) {
    const double a = 2.0 * pi * (cell(rng) + 1.0 / 3.0) / base_res;
    ys.push_back(Point{std::cos(a), std::sin(a)});
    alphas.push_back(uniform01(rng));
  }
  return DiscretePotential(Manifold::sphere(1), std::move(ys), std::move(alphas), 0.0);
}

// -- epsilon nets -------------------------------------------------------------------

json EpsilonNetReport::to_json() const {
  json rs = json::array();
  for (const auto& r : rows)
    rs.push_back({{"m", r.m},
                  {"epsilon", r.epsilon},
                  {"sup_error", r.sup_error},
                  {"min_gap", r.min_gap},
                  {"bound", r.bound},
                  {"grad_error", r.grad_error},
                  {"within_bound", r.within_bound}});
  return {{"oracle", "epsilon_net"},
          {"rows", rs},
          {"slack", slack},
          {"monotone", monotone},
          {"grad_monotone", grad_monotone},
          {"upper", upper},
          {"skipped_fraction", skipped_fraction},
          {"pass", pass}};
}

DiscretePotential epsilon_net_target(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Point> ys;
  std::vector<double> alphas;
  for (int i = 0; i < 5; ++i) {
    const double a = 2.0 * pi * uniform01(rng);
    ys.push_back(Point{std::cos(a), std::sin(a)});
    alphas.push_back(0.5 * uniform01(rng));
  }
  return DiscretePotential(Manifold::sphere(1), std::move(ys), std::move(alphas), 0.0);
}

namespace {

struct CirclePotential {
  std::vector<double> theta, alpha;

  explicit CirclePotential(const DiscretePotential& p) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      theta.push_back(angle_of(p.center_point(i)));
      alpha.push_back(p.offsets[i]);
    }
  }
  double piece(std::size_t i, double x) const { return circle_cost(x, theta[i]) + alpha[i]; }
  std::size_t active(double x) const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < theta.size(); ++i)
      if (piece(i, x) < piece(best, x)) best = i;
    return best;
  }
  double value(double x) const { return piece(active(x), x); }
};

// Points where the active piece changes, located by bisection between grid nodes.
std::vector<double> breakpoints(const CirclePotential& p, int n) {
  std::vector<double> out;
  const double h = 2.0 * pi / n;
  std::size_t prev = p.active(0.0);
  for (int k = 1; k <= n; ++k) {
    const double x = k * h;
    const std::size_t cur = p.active(x);
    if (cur != prev) {
      double lo = x - h, hi = x;
      for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (p.active(mid) == prev) lo = mid;
        else hi = mid;
      }
      out.push_back(0.5 * (lo + hi));
    }
    prev = cur;
  }
  return out;
}

}  // namespace

EpsilonNetReport epsilon_net_s1(const DiscretePotential& target, std::span<const std::size_t> sizes,
                                int test_res, int grad_points, std::uint64_t seed) {
  if (!target.manifold.is_sphere(1) || target.gamma != 0.0)
    throw ConfigError("epsilon-net oracle needs a hard potential on S^1");
  const CirclePotential phi(target);
  const double diam = target.manifold.diameter();

  // Candidate minimizers of x -> c(x, y) - phi(x): between consecutive candidates the active
  // piece and both wrap branches are fixed, so the function is linear there.
  const int dense = 1 << 16;
  const auto bps = breakpoints(phi, dense);
  std::vector<double> cand;
  for (int k = 0; k < dense; ++k) cand.push_back(2.0 * pi * k / dense);
  cand.insert(cand.end(), bps.begin(), bps.end());
  for (double t : phi.theta) cand.push_back(t + pi);
  std::vector<double> cand_val(cand.size());
  for (std::size_t i = 0; i < cand.size(); ++i) cand_val[i] = phi.value(cand[i]);

  auto conj = [&](double y) {
    double best = circle_cost(y + pi, y) - phi.value(y + pi);
    for (std::size_t i = 0; i < cand.size(); ++i) best = std::min(best, circle_cost(cand[i], y) - cand_val[i]);
    return best;
  };

  std::vector<double> test(static_cast<std::size_t>(test_res)), test_val(test.size());
  for (int k = 0; k < test_res; ++k) {
    test[k] = 2.0 * pi * (k + 0.5) / test_res;
    test_val[k] = phi.value(test[k]);
  }

  // gradient probe points away from the breakpoints of phi
  Rng rng(seed);
  const double margin = 0.02;
  std::vector<double> gx;
  int skipped = 0;
  for (int k = 0; k < grad_points; ++k) {
    const double x = 2.0 * pi * uniform01(rng);
    bool near = false;
    for (double b : bps) near = near || std::abs(wrap(x - b)) < margin;
    for (double t : phi.theta) near = near || std::abs(std::abs(wrap(x - t)) - pi) < margin;
    if (near) {
      ++skipped;
      continue;
    }
    gx.push_back(x);
  }

  EpsilonNetReport rep;
  rep.skipped_fraction = grad_points > 0 ? static_cast<double>(skipped) / grad_points : 0.0;
  rep.upper = true;
  for (std::size_t m : sizes) {
    std::vector<double> net(m), net_conj(m);
    for (std::size_t j = 0; j < m; ++j) net[j] = 2.0 * pi * static_cast<double>(j) / static_cast<double>(m);
    parallel_chunks(m, 8, [&](std::size_t, std::size_t lo, std::size_t hi) {
      for (std::size_t j = lo; j < hi; ++j) net_conj[j] = conj(net[j]);
    });
    auto eps_argmin = [&](double x) {
      std::size_t best = 0;
      double bv = kInf;
      for (std::size_t j = 0; j < m; ++j) {
        const double v = circle_cost(x, net[j]) - net_conj[j];
        if (v < bv) {
          bv = v;
          best = j;
        }
      }
      return std::pair{best, bv};
    };
    EpsilonNetRow row;
    row.m = m;
    row.epsilon = pi / static_cast<double>(m);
    row.bound = 2.0 * diam * row.epsilon;
    row.min_gap = kInf;
    for (std::size_t k = 0; k < test.size(); ++k) {
      const double gap = eps_argmin(test[k]).second - test_val[k];
      row.sup_error = std::max(row.sup_error, std::abs(gap));
      row.min_gap = std::min(row.min_gap, gap);
    }
    for (double x : gx) {
      const double ge = -wrap(net[eps_argmin(x).first] - x);
      const double gh = -wrap(phi.theta[phi.active(x)] - x);
      row.grad_error = std::max(row.grad_error, std::abs(ge - gh));
    }
    row.within_bound = row.sup_error <= row.bound + rep.slack;
    rep.upper = rep.upper && row.min_gap >= -1e-12;
    rep.rows.push_back(row);
  }
  rep.monotone = true;
  rep.grad_monotone = true;
  for (std::size_t i = 1; i < rep.rows.size(); ++i) {
    rep.monotone = rep.monotone && rep.rows[i].sup_error <= rep.rows[i - 1].sup_error + 1e-12;
    rep.grad_monotone = rep.grad_monotone && rep.rows[i].grad_error <= rep.rows[i - 1].grad_error + 1e-12;
  }
  rep.pass = rep.monotone && rep.upper && rep.grad_monotone &&
             std::all_of(rep.rows.begin(), rep.rows.end(), [](const EpsilonNetRow& r) { return r.within_bound; });
  return rep;
}

std::vector<Point> fibonacci_sphere(std::size_t n) {
  std::vector<Point> out;
  out.reserve(n);
  const double golden = pi * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < n; ++i) {
    const double z = 1.0 - (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(n);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double a = golden * static_cast<double>(i);
    out.push_back(Point{r * std::cos(a), r * std::sin(a), z});
  }
  return out;
}

double covering_radius(const Manifold& m, std::span<const Point> net, int probe_res) {
  const auto probes = quadrature_grid(m, probe_res);
  std::vector<double> best(probes.size(), kInf);
  parallel_chunks(probes.size(), 256, [&](std::size_t, std::size_t lo, std::size_t hi) {
    for (std::size_t k = lo; k < hi; ++k)
      for (const auto& y : net) best[k] = std::min(best[k], m.distance(probes[k].x, y));
  });
  return *std::max_element(best.begin(), best.end());
}

EpsilonNetReport epsilon_net_s2(const DiscretePotential& target, std::span<const std::size_t> sizes,
                                int grid_res) {
  if (!target.manifold.is_sphere(2) || target.gamma != 0.0)
    throw ConfigError("S^2 epsilon-net oracle needs a hard potential on S^2");
  const Manifold& m = target.manifold;
  auto phi = [&](const Point& x) {
    double best = kInf;
    for (std::size_t i = 0; i < target.size(); ++i) best = std::min(best, m.cost(x, target.center_point(i)) + target.offsets[i]);
    return best;
  };
  const GridFunction g = GridFunction::sample(m, grid_res, phi);
  std::vector<Point> pts;
  for (const auto& n : g.nodes) pts.push_back(n.x);
  EpsilonNetReport rep;
  rep.slack = m.diameter() * g.spacing();
  rep.upper = true;
  for (std::size_t n : sizes) {
    const auto net = fibonacci_sphere(n);
    const auto conj = c_transform_points(m, pts, g.values, net);
    EpsilonNetRow row;
    row.m = n;
    row.epsilon = covering_radius(m, net, 2 * grid_res);
    row.bound = 2.0 * m.diameter() * row.epsilon;
    row.min_gap = kInf;
    for (std::size_t k = 0; k < pts.size(); ++k) {
      double v = kInf;
      for (std::size_t j = 0; j < n; ++j) v = std::min(v, m.cost(pts[k], net[j]) - conj[j]);
      const double gap = v - g.values[k];
      row.sup_error = std::max(row.sup_error, std::abs(gap));
      row.min_gap = std::min(row.min_gap, gap);
    }
    row.within_bound = row.sup_error <= row.bound + rep.slack;
    rep.upper = rep.upper && row.min_gap >= -rep.slack;
    rep.rows.push_back(row);
  }
  rep.monotone = true;
  for (std::size_t i = 1; i < rep.rows.size(); ++i)
    rep.monotone = rep.monotone && rep.rows[i].sup_error <= rep.rows[i - 1].sup_error + rep.slack;
  rep.grad_monotone = true;
  rep.pass = rep.monotone && rep.upper &&
             std::all_of(rep.rows.begin(), rep.rows.end(), [](const EpsilonNetRow& r) { return r.within_bound; });
  return rep;
}

// -- pushforward ---------------------------------------------------------------------

json PushforwardReport::to_json() const {
  return {{"oracle", "pushforward"}, {"samples", samples},     {"bins_u", bins_u},
          {"bins_v", bins_v},        {"tv", tv},               {"noise_mean", noise_mean},
          {"noise_sd", noise_sd},    {"rejected", rejected}};
}

namespace {

struct Binning {
  int nu = 0, nv = 0;
  bool sphere = false;

  Binning(const Manifold& m, int res) {
    if (m.is_sphere(2)) {
      sphere = true;
      nu = res;
      nv = 2 * res;
    } else if (m.is_torus()) {
      nu = nv = res;
    } else {
      throw ConfigError("pushforward binning supports S^2 and T^2");
    }
  }
  std::pair<double, double> chart(const Point& x) const {
    if (sphere) return sphere_chart(x);
    double a = std::atan2(x[1], x[0]), b = std::atan2(x[3], x[2]);
    if (a < 0) a += 2 * pi;
    if (b < 0) b += 2 * pi;
    return {a, b};
  }
  double umax() const { return sphere ? pi : 2 * pi; }
  std::size_t bin(const Point& x) const {
    const auto [u, v] = chart(x);
    const int i = std::clamp(static_cast<int>(u / umax() * nu), 0, nu - 1);
    const int j = std::clamp(static_cast<int>(v / (2 * pi) * nv), 0, nv - 1);
    return static_cast<std::size_t>(i * nv + j);
  }
  Point point(double u, double v) const { return sphere ? sphere_point(u, v) : torus_point(u, v); }
};

}  // namespace

PushforwardReport pushforward_check(const Flow& f, const Density& base, const Density& target,
                                    int res, std::size_t n, std::uint64_t seed, int noise_reps) {
  const Binning bins(f.manifold, res);
  const std::size_t nb = static_cast<std::size_t>(bins.nu * bins.nv);

  // target bin masses by midpoint sub-quadrature
  std::vector<double> q(nb, 0.0);
  const int sub = 6;
  const double du = bins.umax() / bins.nu, dv = 2 * pi / bins.nv;
  parallel_chunks(static_cast<std::size_t>(bins.nu), 1, [&](std::size_t, std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i)
      for (int j = 0; j < bins.nv; ++j) {
        double acc = 0.0;
        for (int a = 0; a < sub; ++a)
          for (int b = 0; b < sub; ++b) {
            const double u = (static_cast<double>(i) + (a + 0.5) / sub) * du;
            const double v = (j + (b + 0.5) / sub) * dv;
            const double w = (bins.sphere ? std::sin(u) : 1.0) * du * dv / (sub * sub);
            acc += w * std::exp(target.log_density(bins.point(u, v)));
          }
        q[i * bins.nv + j] = acc;
      }
  });
  double qs = 0.0;
  for (double v : q) qs += v;
  for (double& v : q) v /= qs;

  PushforwardReport r;
  r.samples = n;
  r.bins_u = bins.nu;
  r.bins_v = bins.nv;
  Rng rng(seed);
  PushedDensity pd(borrow(base), f);
  const auto samples = pd.sample_with_density(rng, n, &r.rejected);
  std::vector<double> counts(nb, 0.0);
  for (const auto& s : samples) counts[bins.bin(s.x)] += 1.0;
  auto tv_of = [&](const std::vector<double>& c) {
    double t = 0.0;
    for (std::size_t b = 0; b < nb; ++b) t += std::abs(c[b] / static_cast<double>(n) - q[b]);
    return 0.5 * t;
  };
  r.tv = tv_of(counts);

  std::discrete_distribution<std::size_t> pick(q.begin(), q.end());
  std::vector<double> tvs;
  for (int k = 0; k < noise_reps; ++k) {
    std::vector<double> c(nb, 0.0);
    for (std::size_t s = 0; s < n; ++s) c[pick(rng)] += 1.0;
    tvs.push_back(tv_of(c));
  }
  if (!tvs.empty()) {
    for (double t : tvs) r.noise_mean += t;
    r.noise_mean /= static_cast<double>(tvs.size());
    for (double t : tvs) r.noise_sd += (t - r.noise_mean) * (t - r.noise_mean);
    r.noise_sd = std::sqrt(r.noise_sd / std::max<double>(1.0, static_cast<double>(tvs.size()) - 1.0));
  }
  return r;
}

// -- log-det audit -----------------------------------------------------------------------

json LogdetAudit::to_json() const {
  return {{"oracle", "logdet_audit"},
          {"n", n},
          {"min_logdet", min_logdet},
          {"max_logdet", max_logdet},
          {"nonpositive", nonpositive},
          {"degenerate", degenerate},
          {"cut_locus", cut_locus},
          {"all_positive", all_positive},
          {"all_zero", all_zero},
          {"first_bad", first_bad}};
}

LogdetAudit logdet_positivity_audit(const Flow& f, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const auto xs = f.manifold.sample_uniform(rng, n);
  constexpr double kDegenerate = -27.631021115928547;  // log(1e-12)
  std::vector<double> ld(n, 0.0), sg(n, 0.0);
  std::vector<char> status(n, 0);  // 0 ok, 1 singular, 2 cut locus
  parallel_chunks(n, 256, [&](std::size_t, std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      try {
        const FlowEval e = evaluate_flow(f, xs[i]);
        ld[i] = e.logdet;
        sg[i] = e.sign;
      } catch (const SingularJacobian&) {
        status[i] = 1;
      } catch (const CutLocus&) {
        status[i] = 2;
      }
    }
  });
  LogdetAudit a;
  a.n = n;
  a.min_logdet = kInf;
  a.max_logdet = -kInf;
  a.all_zero = true;
  for (std::size_t i = 0; i < n; ++i) {
    bool bad = false;
    if (status[i] == 2) {
      ++a.cut_locus;
      continue;
    }
    if (status[i] == 1) {
      ++a.degenerate;
      a.min_logdet = -kInf;
      bad = true;
    } else {
      a.min_logdet = std::min(a.min_logdet, ld[i]);
      a.max_logdet = std::max(a.max_logdet, ld[i]);
      if (ld[i] != 0.0) a.all_zero = false;
      if (ld[i] < kDegenerate) {
        ++a.degenerate;
        bad = true;
      }
      if (!(sg[i] > 0.0)) {
        ++a.nonpositive;
        bad = true;
      }
    }
    if (bad && a.first_bad.empty()) a.first_bad = xs[i].coords;
  }
  a.all_zero = a.all_zero && a.degenerate == 0;
  a.all_positive = a.nonpositive == 0 && a.degenerate == 0 && a.cut_locus == 0;
  return a;
}

}  // namespace rcpm
