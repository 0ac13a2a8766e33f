#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rcpm/density.hpp"
#include "rcpm/flow.hpp"

namespace rcpm {

/// Gradient of a scalar loss with respect to one block's parameters.
/// Center gradients are ambient (length m*D per layer); mixing-weight
/// gradients are taken with respect to the unconstrained logits.
struct BlockGradient {
  std::vector<std::vector<double>> d_centers;
  std::vector<std::vector<double>> d_offsets;
  std::vector<double> d_mix_logits;

  void reset_like(const BlockPotential& b);
};

/// Mirrors the Flow parameter tree exactly.
struct ParamGradient {
  std::vector<BlockGradient> blocks;

  static ParamGradient zeros_like(const Flow& f);
  void add(const ParamGradient& o);
  void scale(double s);
  bool all_zero() const;
  /// Replace every center gradient by its projection onto T_{y_i} M.
  void project_to_tangent(const Flow& f);
};

enum class LossKind { ReverseKL, NLL, Custom };

/// Per-sample loss term as a function of the flow output and its log-determinant,
/// with the adjoints the reverse sweep needs.
struct SampleLoss {
  double value = 0.0;
  std::vector<double> d_point;  // ambient, may be empty (= zero)
  double d_logdet = 0.0;
};
using CustomLoss = std::function<SampleLoss(const Point& input, const Point& output, double logdet)>;

struct LossSpec {
  LossKind kind = LossKind::ReverseKL;
  const Density* base = nullptr;
  const Density* target = nullptr;
  CustomLoss custom;

  /// (1/n) sum [log mu(x) - logdet(x) - log nu(s(x))], batch drawn from the base.
  static LossSpec reverse_kl(const Density& base, const Density& target);
  /// -(1/n) sum [log mu(s(x)) + logdet(x)], batch drawn from data.
  static LossSpec nll(const Density& base);
  static LossSpec from_function(CustomLoss f);
};

struct LossResult {
  double loss = 0.0;
  ParamGradient grad;
  std::size_t used = 0;
  /// Samples skipped because the flow hit a cut locus.
  std::size_t rejected = 0;
};

/// Monte-Carlo loss and its exact parameter gradient via a per-sample
/// operation tape (forward-mode Jacobian columns, reverse sweep over blocks).
LossResult loss_and_grad(const Flow& f, const LossSpec& spec, std::span<const Point> batch);

/// Loss only; skips the same cut-locus samples loss_and_grad would.
double loss_value(const Flow& f, const LossSpec& spec, std::span<const Point> batch);

struct GradCheckClass {
  std::string name;
  std::size_t count = 0;
  double max_rel_error = 0.0;
  std::string worst;
  bool identically_zero = true;
};

struct GradCheckReport {
  double tol = 0.0;
  double step = 0.0;
  bool pass = false;
  std::vector<GradCheckClass> classes;
  /// Name of the coordinate with the largest scaled error.
  std::string worst;

  nlohmann::json to_json() const;
};

/// Compare every parameter coordinate against central finite differences.
/// Centers are perturbed along the tangent basis of y_i (retracted), so the
/// checked quantity is the tangential part of the ambient center gradient.
/// The scaled error is |g - fd| / max(|g|, |fd|, 1e-7 / tol).
/// If `grad` is given it is checked instead of a freshly computed gradient.
GradCheckReport grad_check(const Flow& f, const LossSpec& spec, std::span<const Point> batch,
                           double tol, double h = 1e-5, const ParamGradient* grad = nullptr);

}  // namespace rcpm
