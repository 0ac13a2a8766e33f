#pragma once

// Fused per-layer / per-block kernels shared by potential, flow and diffengine.
//
// A Frame carries a point x and d tangent columns dx (column b lives at
// dx[b * D .. b * D + D)). Forward kernels propagate the columns as
// directional derivatives; backward kernels take adjoints of every forward
// output (values and tangent columns) and accumulate adjoints of the inputs
// and of the block parameters.

#include <vector>

#include "rcpm/diffengine.hpp"
#include "rcpm/potential.hpp"

namespace rcpm::detail {

/// Components whose soft-min weight falls below this are dropped from the
/// gradient sums (their contribution is below double resolution).
inline constexpr double kWeightFloor = 1e-18;

/// Functions of the great-circle angle r, viewed as functions of t = cos r:
/// k = r / sin r, q = -dk/dt, p = dq/dt.
struct AngleCoeffs {
  double k, q, p;
};
AngleCoeffs angle_coeffs(double r);

/// Functions of u = |v|^2 for the sphere exponential map:
/// C = cos|v|, S = sin|v|/|v|, Su = dS/du, Suu = d2S/du2.
struct ExpCoeffs {
  double C, S, Su, Suu;
};
ExpCoeffs exp_coeffs(double norm_v);

/// Soft concave ReLU and its first three derivative coefficients.
struct ReluCoeffs {
  double sigma, rho, rho_s, rho_ss;
};
ReluCoeffs relu_coeffs(double s, double gamma2);

struct Frame {
  int D = 0;
  int d = 0;
  std::vector<double> x;
  std::vector<double> dx;

  void resize(int D_, int d_) {
    D = D_;
    d = d_;
    x.resize(static_cast<std::size_t>(D));
    dx.resize(static_cast<std::size_t>(D * d));
  }
};

struct LayerRecord {
  double value = 0.0;
  std::vector<double> dvalue;  // d
  std::vector<double> grad;    // D (ambient gradient of the layer potential)
  std::vector<double> dgrad;   // D*d

  std::vector<double> costs;   // m
  std::vector<double> angles;  // m*F
  std::vector<double> dots;    // m*F
  std::vector<int> active;
  std::vector<double> w;       // per active component
  // per active component, per factor
  std::vector<double> t, k, q, p;  // nact*F
  std::vector<double> u, l;        // nact*D
  std::vector<double> tp;          // nact*F*d
  std::vector<double> ap;          // nact*d
  std::vector<double> lp;          // nact*d*D
  std::vector<double> L;           // D, sum_i w_i l_i
};

struct RecursionState {
  double psi = 0.0;
  std::vector<double> dpsi;  // d
  std::vector<double> G;     // D
  std::vector<double> dG;    // D*d
};

struct BlockRecord {
  Frame in;
  Frame out;
  std::vector<LayerRecord> layers;
  std::vector<RecursionState> states;  // steps + 1
  std::vector<ReluCoeffs> relu;        // per step
  std::vector<double> v, dv;           // exp-map argument -grad and its columns
  std::vector<ExpCoeffs> expc;         // per factor
};

/// Evaluate one discrete potential. With want_grad false only value/costs are filled.
void layer_forward(const DiscretePotential& pot, const double* x, const double* dx, int d,
                   bool want_grad, LayerRecord& rec);

void layer_backward(const DiscretePotential& pot, const LayerRecord& rec, const double* x,
                    const double* dx, int d, double vbar, const double* dvbar, const double* gbar,
                    const double* dgbar, double* xbar, double* dxbar, double* center_bar,
                    double* offset_bar);

/// Block potential value, gradient and gradient columns (no exp map).
/// With want_grad false only the psi values of rec.states are filled.
void block_potential_forward(const BlockPotential& b, const double* x, const double* dx, int d,
                             BlockRecord& rec, bool want_grad = true);

/// Full block map s(x) = exp_x(-grad phi(x)) with tangent columns; reads rec.in, writes rec.out.
void block_forward(const BlockPotential& b, BlockRecord& rec);

/// Reverse sweep through block_forward. Accumulates into xbar/dxbar (sized like rec.in)
/// and into grad.
void block_backward(const BlockPotential& b, const BlockRecord& rec, const double* sbar,
                    const double* dsbar, double* xbar, double* dxbar, BlockGradient& grad);

/// log|det| of a row-major n x n matrix by partially pivoted LU; -inf when singular.
double lu_log_abs_det(std::vector<double> a, int n, double* sign = nullptr,
                      std::vector<double>* inverse = nullptr);

/// log|det J| with J = E(x)^T cols, E the orthonormal tangent basis at x. Optionally the
/// D x d adjoint of the columns (same layout as cols). Returns false when J is singular.
bool tangent_logdet(const Manifold& m, const double* x, const double* cols, int d, double& logdet,
                    std::vector<double>* adjoint);

/// Sign of det[N(x), cols] where N(x) stacks each factor's unit normal. Orientation helper.
double oriented_sign(const Manifold& m, const double* x, const double* cols, int d);

}  // namespace rcpm::detail
