#include "kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "rcpm/error.hpp"

namespace rcpm::detail {

namespace {

// Taylor coefficients in r^2 (r = great-circle angle or |v|).
constexpr double kQ[] = {1.0 / 3, 2.0 / 15, 2.0 / 63, 4.0 / 675, 2.0 / 2079, 2764.0 / 19348875,
                         4.0 / 200475};
constexpr double kP[] = {-4.0 / 15,           -6.0 / 35,           -13.0 / 210,
                         -1153.0 / 69300,     -187619.0 / 50450400, -3325549.0 / 4540536000,
                         -121835513.0 / 926269344000};
constexpr double kSu[] = {-1.0 / 6,        1.0 / 60,          -1.0 / 1680,         1.0 / 90720,
                          -1.0 / 7983360,  1.0 / 1037836800,  -1.0 / 186810624000};
constexpr double kSuu[] = {1.0 / 60,          -1.0 / 840,         1.0 / 30240,
                           -1.0 / 1995840,    1.0 / 207567360,    -1.0 / 31135104000,
                           1.0 / 6351561216000};

constexpr double kSeriesCut = 0.3;

template <std::size_t N>
double series(const double (&c)[N], double r2) {
  double acc = 0.0;
  for (std::size_t i = N; i-- > 0;) acc = acc * r2 + c[i];
  return acc;
}

inline double dotn(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

AngleCoeffs angle_coeffs(double r) {
  AngleCoeffs c{};
  const double r2 = r * r;
  if (r < kSeriesCut) {
    c.k = (r < 1e-8) ? 1.0 + r2 / 6.0 : r / std::sin(r);
    c.q = series(kQ, r2);
    c.p = series(kP, r2);
    return c;
  }
  const double s = std::sin(r), co = std::cos(r);
  c.k = r / s;
  c.q = (s - r * co) / (s * s * s);
  const double s2 = s * s;
  c.p = (-r * std::cos(2.0 * r) - 2.0 * r + 1.5 * std::sin(2.0 * r)) / (s2 * s2 * s);
  return c;
}

ExpCoeffs exp_coeffs(double n) {
  ExpCoeffs c{};
  const double n2 = n * n;
  c.C = std::cos(n);
  if (n < kSeriesCut) {
    c.S = (n < 1e-8) ? 1.0 - n2 / 6.0 : std::sin(n) / n;
    c.Su = series(kSu, n2);
    c.Suu = series(kSuu, n2);
    return c;
  }
  const double s = std::sin(n);
  c.S = s / n;
  c.Su = (n * c.C - s) / (2.0 * n2 * n);
  c.Suu = (-n2 * s - 3.0 * n * c.C + 3.0 * s) / (4.0 * n2 * n2 * n);
  return c;
}

ReluCoeffs relu_coeffs(double s, double g) {
  ReluCoeffs c{};
  if (g <= 0.0) {
    c.sigma = std::min(0.0, s);
    c.rho = s < 0.0 ? 1.0 : 0.0;
    return c;
  }
  const double z = s / g;
  if (z >= 0.0) {
    const double e = std::exp(-z);
    c.sigma = -g * std::log1p(e);
    c.rho = e / (1.0 + e);
  } else {
    const double e = std::exp(z);
    c.sigma = s - g * std::log1p(e);
    c.rho = 1.0 / (1.0 + e);
  }
  const double rr = c.rho * (1.0 - c.rho);
  c.rho_s = -rr / g;
  c.rho_ss = rr * (1.0 - 2.0 * c.rho) / (g * g);
  return c;
}

// ---------------------------------------------------------------------------
// Layer (one discrete potential)

namespace {

// Per-factor geometry of one component: fills u, l (slice), tp[b], adds into ap[b],
// lp columns (stride D). Returns coefficients through kqp.
inline void factor_forward(const double* x, const double* dx, int D, int n, int d, const double* y,
                           double t, double r, double* kqp, double* u, double* l, double* tp,
                           double* ap, double* lp) {
  const AngleCoeffs c = angle_coeffs(r);
  kqp[0] = c.k;
  kqp[1] = c.q;
  kqp[2] = c.p;
  for (int i = 0; i < n; ++i) {
    u[i] = y[i] - t * x[i];
    l[i] = c.k * u[i];
  }
  for (int b = 0; b < d; ++b) {
    const double* xb = dx + b * D;
    const double tpb = dotn(xb, y, n);
    tp[b] = tpb;
    ap[b] += -c.k * tpb;
    double* lpb = lp + b * D;
    for (int i = 0; i < n; ++i) {
      const double upi = -tpb * x[i] - t * xb[i];
      lpb[i] = c.k * upi - c.q * tpb * u[i];
    }
  }
}

inline void factor_backward(const double* x, const double* dx, int D, int n, int d, const double* y,
                            double t, double k, double q, double p, const double* u,
                            const double* tp, double abar, const double* apbar, const double* lbar,
                            const double* lpbar, double* xbar, double* dxbar, double* ybar) {
  double kbar = 0.0, qbar = 0.0, tbar = 0.0;
  double ubar[8];
  double* ub = ubar;
  std::vector<double> big;
  if (n > 8) {
    big.assign(static_cast<std::size_t>(n), 0.0);
    ub = big.data();
  } else {
    std::fill(ubar, ubar + n, 0.0);
  }
  for (int b = 0; b < d; ++b) {
    const double* xb = dx + b * D;
    const double* lpb = lpbar + b * D;
    double* dxb = dxbar + b * D;
    const double tpb = tp[b];
    double tpbar = 0.0;
    double lpu = 0.0, lp_up = 0.0, upbar_x = 0.0, upbar_xb = 0.0;
    for (int i = 0; i < n; ++i) {
      const double upi = -tpb * x[i] - t * xb[i];
      lp_up += lpb[i] * upi;
      lpu += lpb[i] * u[i];
      const double upbar = k * lpb[i];
      upbar_x += upbar * x[i];
      upbar_xb += upbar * xb[i];
      ub[i] += -q * tpb * lpb[i];
      xbar[i] += -tpb * upbar;
      dxb[i] += -t * upbar;
    }
    kbar += lp_up;
    qbar += -tpb * lpu;
    tpbar += -q * lpu;
    tpbar += -upbar_x;
    tbar += -upbar_xb;
    kbar += -apbar[b] * tpb;
    tpbar += -k * apbar[b];
    for (int i = 0; i < n; ++i) {
      dxb[i] += tpbar * y[i];
      ybar[i] += tpbar * xb[i];
    }
  }
  double lu = 0.0;
  for (int i = 0; i < n; ++i) {
    lu += lbar[i] * u[i];
    ub[i] += k * lbar[i];
  }
  kbar += lu;
  double ubx = 0.0;
  for (int i = 0; i < n; ++i) {
    ybar[i] += ub[i];
    ubx += ub[i] * x[i];
    xbar[i] += -t * ub[i];
  }
  tbar += -ubx;
  tbar += -k * abar;
  tbar += -q * kbar + p * qbar;
  for (int i = 0; i < n; ++i) {
    xbar[i] += tbar * y[i];
    ybar[i] += tbar * x[i];
  }
}

}  // namespace

void layer_forward(const DiscretePotential& pot, const double* x, const double* dx, int d,
                   bool want_grad, LayerRecord& rec) {
  const auto& fac = pot.manifold.factors();
  const int F = static_cast<int>(fac.size());
  const int D = pot.manifold.ambient_dim();
  const std::size_t m = pot.size();
  const double gamma = pot.gamma;

  rec.costs.resize(m);
  rec.angles.resize(m * F);
  rec.dots.resize(m * F);
  const double* Y = pot.centers.data();
  for (std::size_t i = 0; i < m; ++i) {
    double a = pot.offsets[i];
    const double* yi = Y + i * D;
    for (int f = 0; f < F; ++f) {
      const int o = fac[f].offset, n = fac[f].ambient();
      const double t = dotn(x + o, yi + o, n);
      const double r = geom::sphere_angle(x + o, yi + o, n);
      rec.dots[i * F + f] = t;
      rec.angles[i * F + f] = r;
      a += 0.5 * r * r;
    }
    rec.costs[i] = a;
  }

  // soft-min weights / hard argmin
  rec.active.clear();
  rec.w.clear();
  double amin = std::numeric_limits<double>::infinity();
  std::size_t imin = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (rec.costs[i] < amin) {
      amin = rec.costs[i];
      imin = i;
    }
  }
  if (gamma > 0.0) {
    double Z = 0.0;
    for (std::size_t i = 0; i < m; ++i) Z += std::exp(-(rec.costs[i] - amin) / gamma);
    rec.value = amin - gamma * std::log(Z);
    if (want_grad) {
      for (std::size_t i = 0; i < m; ++i) {
        const double wi = std::exp(-(rec.costs[i] - amin) / gamma) / Z;
        if (wi >= kWeightFloor) {
          rec.active.push_back(static_cast<int>(i));
          rec.w.push_back(wi);
        }
      }
    }
  } else {
    rec.value = amin;
    if (want_grad) {
      rec.active.push_back(static_cast<int>(imin));
      rec.w.push_back(1.0);
    }
  }
  if (!want_grad) return;

  const std::size_t na = rec.active.size();
  rec.t.resize(na * F);
  rec.k.resize(na * F);
  rec.q.resize(na * F);
  rec.p.resize(na * F);
  rec.u.resize(na * D);
  rec.l.resize(na * D);
  rec.tp.resize(na * F * d);
  rec.ap.assign(na * d, 0.0);
  rec.lp.resize(na * d * D);
  rec.dvalue.assign(d, 0.0);
  rec.grad.assign(D, 0.0);
  rec.dgrad.assign(D * d, 0.0);
  rec.L.assign(D, 0.0);

  // M_b = sum w a'_b l, P_b = sum w l'_b accumulate into dgrad at the end.
  std::vector<double> M(static_cast<std::size_t>(D * d), 0.0);
  std::vector<double> P(static_cast<std::size_t>(D * d), 0.0);

  for (std::size_t j = 0; j < na; ++j) {
    const std::size_t i = static_cast<std::size_t>(rec.active[j]);
    const double* yi = Y + i * D;
    double* u = rec.u.data() + j * D;
    double* l = rec.l.data() + j * D;
    double* ap = rec.ap.data() + j * d;
    double* lp = rec.lp.data() + j * d * D;
    for (int f = 0; f < F; ++f) {
      const int o = fac[f].offset, n = fac[f].ambient();
      const double t = rec.dots[i * F + f];
      if (std::numbers::pi - rec.angles[i * F + f] < geom::kKernelAntipodalAngle) {
        throw CutLocus("potential gradient: point is antipodal to an active component");
      }
      double kqp[3];
      factor_forward(x + o, dx + o, D, n, d, yi + o, t, rec.angles[i * F + f], kqp, u + o, l + o,
                     rec.tp.data() + (j * F + f) * d, ap, lp + o);
      rec.t[j * F + f] = t;
      rec.k[j * F + f] = kqp[0];
      rec.q[j * F + f] = kqp[1];
      rec.p[j * F + f] = kqp[2];
    }
    const double wj = rec.w[j];
    for (int c = 0; c < D; ++c) rec.L[c] += wj * l[c];
    for (int b = 0; b < d; ++b) {
      rec.dvalue[b] += wj * ap[b];
      const double wa = wj * ap[b];
      double* Mb = M.data() + b * D;
      double* Pb = P.data() + b * D;
      const double* lpb = lp + b * D;
      for (int c = 0; c < D; ++c) {
        Mb[c] += wa * l[c];
        Pb[c] += wj * lpb[c];
      }
    }
  }
  for (int c = 0; c < D; ++c) rec.grad[c] = -rec.L[c];
  if (gamma > 0.0) {
    const double ig = 1.0 / gamma;
    for (int b = 0; b < d; ++b) {
      for (int c = 0; c < D; ++c) {
        rec.dgrad[b * D + c] = ig * (M[b * D + c] - rec.dvalue[b] * rec.L[c]) - P[b * D + c];
      }
    }
  } else {
    for (int b = 0; b < d; ++b)
      for (int c = 0; c < D; ++c) rec.dgrad[b * D + c] = -P[b * D + c];
  }
}

void layer_backward(const DiscretePotential& pot, const LayerRecord& rec, const double* x,
                    const double* dx, int d, double vbar, const double* dvbar, const double* gbar,
                    const double* dgbar, double* xbar, double* dxbar, double* center_bar,
                    double* offset_bar) {
  const auto& fac = pot.manifold.factors();
  const int F = static_cast<int>(fac.size());
  const int D = pot.manifold.ambient_dim();
  const double gamma = pot.gamma;
  const std::size_t na = rec.active.size();
  const double* Y = pot.centers.data();

  std::vector<double> abar(na), apbar(na * d), lbar(na * D), lpbar(na * d * D);

  if (gamma > 0.0) {
    const double ig = 1.0 / gamma;
    // adjoint of dvalue including its use inside the soft-min weight derivatives
    std::vector<double> dvtot(static_cast<std::size_t>(d));
    for (int b = 0; b < d; ++b) dvtot[b] = dvbar[b] - ig * dotn(dgbar + b * D, rec.L.data(), D);

    std::vector<double> wbar(na), wbp(na * d);
    double S = 0.0;
    for (std::size_t j = 0; j < na; ++j) {
      const double* l = rec.l.data() + j * D;
      const double* ap = rec.ap.data() + j * d;
      const double* lp = rec.lp.data() + j * d * D;
      double wb = -dotn(gbar, l, D);
      for (int b = 0; b < d; ++b) {
        const double wpb = -dotn(dgbar + b * D, l, D);
        wbp[j * d + b] = wpb;
        wb += -dotn(dgbar + b * D, lp + b * D, D);
        wb += -ig * wpb * (ap[b] - rec.dvalue[b]);
        wb += dvtot[b] * ap[b];
      }
      wbar[j] = wb;
      S += rec.w[j] * wb;
    }
    for (std::size_t j = 0; j < na; ++j) {
      const double wj = rec.w[j];
      const double* ap = rec.ap.data() + j * d;
      abar[j] = wj * vbar - wj * ig * (wbar[j] - S);
      double* lb = lbar.data() + j * D;
      for (int c = 0; c < D; ++c) lb[c] = -wj * gbar[c];
      for (int b = 0; b < d; ++b) {
        apbar[j * d + b] = -wj * ig * wbp[j * d + b] + wj * dvtot[b];
        const double wp = -wj * ig * (ap[b] - rec.dvalue[b]);
        const double* dgb = dgbar + b * D;
        double* lpb = lpbar.data() + (j * d + b) * D;
        for (int c = 0; c < D; ++c) {
          lb[c] += -wp * dgb[c];
          lpb[c] = -wj * dgb[c];
        }
      }
    }
  } else {
    for (std::size_t j = 0; j < na; ++j) {
      abar[j] = vbar;
      for (int b = 0; b < d; ++b) apbar[j * d + b] = dvbar[b];
      for (int c = 0; c < D; ++c) lbar[j * D + c] = -gbar[c];
      for (int b = 0; b < d; ++b)
        for (int c = 0; c < D; ++c) lpbar[(j * d + b) * D + c] = -dgbar[b * D + c];
    }
  }

  for (std::size_t j = 0; j < na; ++j) {
    const std::size_t i = static_cast<std::size_t>(rec.active[j]);
    offset_bar[i] += abar[j];
    const double* yi = Y + i * D;
    double* ybar = center_bar + i * D;
    for (int f = 0; f < F; ++f) {
      const int o = fac[f].offset, n = fac[f].ambient();
      const std::size_t jf = j * F + f;
      factor_backward(x + o, dx + o, D, n, d, yi + o, rec.t[jf], rec.k[jf], rec.q[jf], rec.p[jf],
                      rec.u.data() + j * D + o, rec.tp.data() + jf * d, abar[j],
                      apbar.data() + j * d, lbar.data() + j * D + o,
                      lpbar.data() + j * d * D + o, xbar + o, dxbar + o, ybar + o);
    }
  }
}

// ---------------------------------------------------------------------------
// Block

void block_potential_forward(const BlockPotential& blk, const double* x, const double* dx, int d,
                             BlockRecord& rec, bool want_grad) {
  const int D = blk.manifold().ambient_dim();
  const std::size_t K = blk.layers.size();
  const std::size_t steps = K + (blk.identity_relu ? 1 : 0);
  rec.layers.resize(K);
  rec.states.resize(steps + 1);
  rec.relu.resize(steps);
  for (std::size_t k = 0; k < K; ++k)
    layer_forward(blk.layers[k], x, dx, d, want_grad, rec.layers[k]);
  if (!want_grad) {
    double psi = 0.0;
    for (std::size_t j = 0; j < steps; ++j) {
      const double sig = relu_coeffs(psi, blk.relu_gamma).sigma;
      if (j < K) {
        const double w = blk.mix_weight(j);
        psi = (1.0 - w) * rec.layers[j].value + w * sig;
      } else {
        psi = sig;
      }
      rec.states[j + 1].psi = psi;
    }
    return;
  }

  auto& s0 = rec.states[0];
  s0.psi = 0.0;
  s0.dpsi.assign(d, 0.0);
  s0.G.assign(D, 0.0);
  s0.dG.assign(D * d, 0.0);
  for (std::size_t j = 0; j < steps; ++j) {
    const auto& cur = rec.states[j];
    auto& nxt = rec.states[j + 1];
    const bool mix = j < K;
    const double w = mix ? blk.mix_weight(j) : 1.0;
    const double a = mix ? 1.0 - w : 0.0;
    const ReluCoeffs rc = relu_coeffs(cur.psi, blk.relu_gamma);
    rec.relu[j] = rc;
    nxt.dpsi.resize(d);
    nxt.G.resize(D);
    nxt.dG.resize(D * d);
    if (mix) {
      const auto& L = rec.layers[j];
      nxt.psi = a * L.value + w * rc.sigma;
      for (int b = 0; b < d; ++b) nxt.dpsi[b] = a * L.dvalue[b] + w * rc.rho * cur.dpsi[b];
      for (int c = 0; c < D; ++c) nxt.G[c] = a * L.grad[c] + w * rc.rho * cur.G[c];
      for (int b = 0; b < d; ++b)
        for (int c = 0; c < D; ++c)
          nxt.dG[b * D + c] = a * L.dgrad[b * D + c] +
                              w * (rc.rho * cur.dG[b * D + c] + rc.rho_s * cur.dpsi[b] * cur.G[c]);
    } else {
      nxt.psi = rc.sigma;
      for (int b = 0; b < d; ++b) nxt.dpsi[b] = rc.rho * cur.dpsi[b];
      for (int c = 0; c < D; ++c) nxt.G[c] = rc.rho * cur.G[c];
      for (int b = 0; b < d; ++b)
        for (int c = 0; c < D; ++c)
          nxt.dG[b * D + c] = rc.rho * cur.dG[b * D + c] + rc.rho_s * cur.dpsi[b] * cur.G[c];
    }
  }
}

void block_forward(const BlockPotential& blk, BlockRecord& rec) {
  const Manifold& M = blk.manifold();
  const int D = M.ambient_dim();
  const int d = rec.in.d;
  const double* x = rec.in.x.data();
  const double* dx = rec.in.dx.data();
  block_potential_forward(blk, x, dx, d, rec);
  const auto& fin = rec.states.back();

  rec.v.resize(D);
  rec.dv.resize(D * d);
  for (int c = 0; c < D; ++c) rec.v[c] = -fin.G[c];
  for (int c = 0; c < D * d; ++c) rec.dv[c] = -fin.dG[c];

  rec.out.resize(D, d);
  const auto& fac = M.factors();
  rec.expc.resize(fac.size());
  for (std::size_t f = 0; f < fac.size(); ++f) {
    const int o = fac[f].offset, n = fac[f].ambient();
    const double* v = rec.v.data() + o;
    const double uu = dotn(v, v, n);
    const ExpCoeffs ec = exp_coeffs(std::sqrt(uu));
    rec.expc[f] = ec;
    double* s = rec.out.x.data() + o;
    for (int i = 0; i < n; ++i) s[i] = x[o + i] * ec.C + v[i] * ec.S;
    const double Cu = -0.5 * ec.S;
    for (int b = 0; b < d; ++b) {
      const double* dvb = rec.dv.data() + b * D + o;
      const double* dxb = dx + b * D + o;
      const double up = 2.0 * dotn(v, dvb, n);
      double* sb = rec.out.dx.data() + b * D + o;
      for (int i = 0; i < n; ++i)
        sb[i] = dxb[i] * ec.C + x[o + i] * Cu * up + dvb[i] * ec.S + v[i] * ec.Su * up;
    }
  }
}

void block_backward(const BlockPotential& blk, const BlockRecord& rec, const double* sbar,
                    const double* dsbar, double* xbar, double* dxbar, BlockGradient& grad) {
  const Manifold& M = blk.manifold();
  const int D = M.ambient_dim();
  const int d = rec.in.d;
  const double* x = rec.in.x.data();
  const double* dx = rec.in.dx.data();

  // exp map
  std::vector<double> vbar(D, 0.0), dvbar(D * d, 0.0);
  const auto& fac = M.factors();
  for (std::size_t f = 0; f < fac.size(); ++f) {
    const int o = fac[f].offset, n = fac[f].ambient();
    const ExpCoeffs& ec = rec.expc[f];
    const double Cu = -0.5 * ec.S;
    const double* v = rec.v.data() + o;
    double Cbar = 0.0, Sbar = 0.0, Cubar = 0.0, Subar = 0.0;
    for (int b = 0; b < d; ++b) {
      const double* dvb = rec.dv.data() + b * D + o;
      const double* dxb = dx + b * D + o;
      const double* sb = dsbar + b * D + o;
      const double up = 2.0 * dotn(v, dvb, n);
      const double xd = dotn(x + o, sb, n);
      const double vd = dotn(v, sb, n);
      Cbar += dotn(dxb, sb, n);
      Sbar += dotn(dvb, sb, n);
      Cubar += up * xd;
      Subar += up * vd;
      const double upbar = Cu * xd + ec.Su * vd;
      double* dxbb = dxbar + b * D + o;
      double* dvbb = dvbar.data() + b * D + o;
      for (int i = 0; i < n; ++i) {
        dxbb[i] += ec.C * sb[i];
        xbar[o + i] += Cu * up * sb[i];
        dvbb[i] += ec.S * sb[i] + 2.0 * upbar * v[i];
        vbar[o + i] += ec.Su * up * sb[i] + 2.0 * upbar * dvb[i];
      }
    }
    const double* s0 = sbar + o;
    Cbar += dotn(x + o, s0, n);
    Sbar += dotn(v, s0, n);
    for (int i = 0; i < n; ++i) {
      xbar[o + i] += ec.C * s0[i];
      vbar[o + i] += ec.S * s0[i];
    }
    const double ubar = Cbar * Cu + Sbar * ec.Su + Cubar * (-0.5 * ec.Su) + Subar * ec.Suu;
    for (int i = 0; i < n; ++i) vbar[o + i] += 2.0 * ubar * v[i];
  }

  // v = -G
  const std::size_t K = blk.layers.size();
  const std::size_t steps = rec.relu.size();
  double psibar = 0.0;
  std::vector<double> dpsibar(d, 0.0), Gbar(D), dGbar(D * d);
  for (int c = 0; c < D; ++c) Gbar[c] = -vbar[c];
  for (int c = 0; c < D * d; ++c) dGbar[c] = -dvbar[c];

  std::vector<double> npsi_d(d), nG(D), ndG(D * d);
  std::vector<double> lg(D), ldg(D * d), ldv(d);
  for (std::size_t j = steps; j-- > 0;) {
    const auto& cur = rec.states[j];
    const ReluCoeffs& rc = rec.relu[j];
    const bool mix = j < K;
    const double w = mix ? blk.mix_weight(j) : 1.0;
    const double a = mix ? 1.0 - w : 0.0;
    const double psin = psibar;
    npsi_d = dpsibar;
    nG = Gbar;
    ndG = dGbar;

    if (mix) {
      const auto& L = rec.layers[j];
      double wbar = psin * (rc.sigma - L.value);
      for (int b = 0; b < d; ++b) wbar += npsi_d[b] * (rc.rho * cur.dpsi[b] - L.dvalue[b]);
      for (int c = 0; c < D; ++c) wbar += nG[c] * (rc.rho * cur.G[c] - L.grad[c]);
      for (int b = 0; b < d; ++b)
        for (int c = 0; c < D; ++c)
          wbar += ndG[b * D + c] *
                  (rc.rho * cur.dG[b * D + c] + rc.rho_s * cur.dpsi[b] * cur.G[c] - L.dgrad[b * D + c]);
      grad.d_mix_logits[j] += wbar * w * (1.0 - w);

      for (int b = 0; b < d; ++b) ldv[b] = a * npsi_d[b];
      for (int c = 0; c < D; ++c) lg[c] = a * nG[c];
      for (int c = 0; c < D * d; ++c) ldg[c] = a * ndG[c];
      if (a != 0.0) {
        layer_backward(blk.layers[j], L, x, dx, d, a * psin, ldv.data(), lg.data(), ldg.data(), xbar,
                       dxbar, grad.d_centers[j].data(), grad.d_offsets[j].data());
      }
    }

    double rhobar = 0.0;
    for (int b = 0; b < d; ++b) rhobar += npsi_d[b] * cur.dpsi[b];
    rhobar += dotn(nG.data(), cur.G.data(), D);
    for (int c = 0; c < D * d; ++c) rhobar += ndG[c] * cur.dG[c];
    rhobar *= w;
    double rhosbar = 0.0;
    std::vector<double> dGn_dot_G(d);
    for (int b = 0; b < d; ++b) {
      dGn_dot_G[b] = dotn(ndG.data() + b * D, cur.G.data(), D);
      rhosbar += cur.dpsi[b] * dGn_dot_G[b];
    }
    rhosbar *= w;

    psibar = w * psin * rc.rho + rhobar * rc.rho_s + rhosbar * rc.rho_ss;
    for (int b = 0; b < d; ++b) dpsibar[b] = w * rc.rho * npsi_d[b] + w * rc.rho_s * dGn_dot_G[b];
    for (int c = 0; c < D; ++c) {
      double acc = w * rc.rho * nG[c];
      for (int b = 0; b < d; ++b) acc += w * rc.rho_s * cur.dpsi[b] * ndG[b * D + c];
      Gbar[c] = acc;
    }
    for (int c = 0; c < D * d; ++c) dGbar[c] = w * rc.rho * ndG[c];
  }
}

// ---------------------------------------------------------------------------

double lu_log_abs_det(std::vector<double> a, int n, double* sign, std::vector<double>* inverse) {
  std::vector<int> perm(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) perm[i] = i;
  double sg = 1.0, acc = 0.0;
  for (int k = 0; k < n; ++k) {
    int piv = k;
    for (int r = k + 1; r < n; ++r)
      if (std::abs(a[r * n + k]) > std::abs(a[piv * n + k])) piv = r;
    if (!(std::abs(a[piv * n + k]) > 0.0)) {
      if (sign) *sign = 0.0;
      return -std::numeric_limits<double>::infinity();
    }
    if (piv != k) {
      for (int c = 0; c < n; ++c) std::swap(a[k * n + c], a[piv * n + c]);
      std::swap(perm[k], perm[piv]);
      sg = -sg;
    }
    const double pk = a[k * n + k];
    if (pk < 0) sg = -sg;
    acc += std::log(std::abs(pk));
    for (int r = k + 1; r < n; ++r) {
      const double f = a[r * n + k] / pk;
      a[r * n + k] = f;
      for (int c = k + 1; c < n; ++c) a[r * n + c] -= f * a[k * n + c];
    }
  }
  if (sign) *sign = sg;
  if (inverse) {
    inverse->assign(static_cast<std::size_t>(n * n), 0.0);
    std::vector<double> z(static_cast<std::size_t>(n));
    for (int col = 0; col < n; ++col) {
      for (int i = 0; i < n; ++i) {
        double s = (perm[i] == col) ? 1.0 : 0.0;
        for (int k = 0; k < i; ++k) s -= a[i * n + k] * z[k];
        z[i] = s;
      }
      for (int i = n; i-- > 0;) {
        double s = z[i];
        for (int k = i + 1; k < n; ++k) s -= a[i * n + k] * z[k];
        z[i] = s / a[i * n + i];
      }
      for (int i = 0; i < n; ++i) (*inverse)[i * n + col] = z[i];
    }
  }
  return acc;
}

bool tangent_logdet(const Manifold& m, const double* x, const double* cols, int d, double& logdet,
                    std::vector<double>* adjoint) {
  const int D = m.ambient_dim();
  const auto E = m.tangent_basis(Point(std::vector<double>(x, x + D)));
  std::vector<double> J(static_cast<std::size_t>(d * d));
  for (int a = 0; a < d; ++a)
    for (int c = 0; c < d; ++c) J[a * d + c] = dotn(E[a].v.data(), cols + c * D, D);
  std::vector<double> inv;
  logdet = lu_log_abs_det(std::move(J), d, nullptr, adjoint ? &inv : nullptr);
  if (!std::isfinite(logdet)) return false;
  if (adjoint) {
    // d log|det J| / d col_c = sum_a E_a (J^{-1})_{c a}
    adjoint->assign(static_cast<std::size_t>(D * d), 0.0);
    for (int c = 0; c < d; ++c)
      for (int a = 0; a < d; ++a) {
        const double g = inv[c * d + a];
        for (int k = 0; k < D; ++k) (*adjoint)[c * D + k] += g * E[a].v[k];
      }
  }
  return true;
}

double oriented_sign(const Manifold& m, const double* x, const double* cols, int d) {
  const int D = m.ambient_dim();
  const auto& fac = m.factors();
  // column-major D x D matrix: factor normals first, then the tangent columns
  std::vector<double> A(static_cast<std::size_t>(D * D), 0.0);
  int col = 0;
  for (const auto& f : fac) {
    for (int i = 0; i < f.ambient(); ++i) A[col * D + f.offset + i] = x[f.offset + i];
    ++col;
  }
  for (int b = 0; b < d; ++b, ++col)
    for (int i = 0; i < D; ++i) A[col * D + i] = cols[b * D + i];
  // LU with partial pivoting on rows
  double sign = 1.0;
  for (int k = 0; k < D; ++k) {
    int piv = k;
    double best = std::abs(A[k * D + k]);
    for (int r = k + 1; r < D; ++r) {
      if (std::abs(A[k * D + r]) > best) {
        best = std::abs(A[k * D + r]);
        piv = r;
      }
    }
    if (best == 0.0) return 0.0;
    if (piv != k) {
      for (int c = 0; c < D; ++c) std::swap(A[c * D + k], A[c * D + piv]);
      sign = -sign;
    }
    const double pk = A[k * D + k];
    if (pk < 0) sign = -sign;
    for (int r = k + 1; r < D; ++r) {
      const double fct = A[k * D + r] / pk;
      for (int c = k + 1; c < D; ++c) A[c * D + r] -= fct * A[c * D + k];
    }
  }
  return sign;
}

}  // namespace rcpm::detail
