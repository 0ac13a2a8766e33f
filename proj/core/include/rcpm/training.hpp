#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rcpm/density.hpp"
#include "rcpm/diffengine.hpp"
#include "rcpm/flow.hpp"

namespace rcpm {

enum class TrainLoss { ReverseKL, NLL };

struct TrainConfig {
  nlohmann::json manifold = "S2";
  nlohmann::json base = "uniform";
  nlohmann::json target = "sphere_mixture4";
  TrainLoss loss = TrainLoss::ReverseKL;

  std::size_t blocks = 5;
  std::size_t layers = 1;
  std::size_t components = 500;
  double gamma = 0.1;
  /// Outer concave-ReLU temperature; empty means no identity ReLU.
  std::optional<double> gamma2;
  double alpha_min = 0.1;
  double alpha_range = 0.5;
  /// Initial mixing weight; defaults to 0 for K = 1 and 0.5 otherwise.
  std::optional<double> mix_init;

  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 256;
  std::size_t steps = 1000;
  std::uint64_t seed = 0;

  std::size_t eval_samples = 100000;
  std::uint64_t eval_seed = 12345;
  std::size_t log_every = 100;

  static TrainConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  /// Throws ConfigError on values that cannot run.
  void validate() const;
  /// Values outside the usual hyperparameter sweep ranges (not errors).
  std::vector<std::string> warnings() const;

  Manifold make_manifold() const;
};

struct EvalReport {
  /// "reverse_kl" for forward (sampling) models, "forward_kl" for backward (likelihood) models.
  std::string estimator;
  double kl_nats = 0.0;
  double kl_stderr = 0.0;
  double ess_percent = 0.0;
  /// Mean negative log-likelihood of target samples (backward models only).
  std::optional<double> nll;
  std::size_t n_eval = 0;
  std::size_t rejected_cutlocus = 0;
  double wallclock_per_iter = 0.0;
  std::vector<std::string> notes;

  nlohmann::json to_json() const;
};

struct TraceRow {
  std::size_t step = 0;
  double loss = 0.0;
  double wallclock = 0.0;
};

struct TrainResult {
  Flow flow;
  EvalReport report;
  std::vector<TraceRow> trace;
};

/// Random initialization per the config (centers uniform, offsets uniform in
/// [alpha_min, alpha_min + alpha_range]).
Flow init_flow(const TrainConfig& cfg, const Manifold& m, Rng& rng);

/// Adam with tangent-projected center gradients and normalization retraction.
class AdamState {
 public:
  AdamState(const Flow& f, double lr, double beta1, double beta2, double eps);
  /// grad must already be tangent-projected.
  void step(Flow& f, const ParamGradient& grad);
  std::size_t iterations() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  ParamGradient m_, v_;
};

using StepCallback = std::function<void(const TraceRow&)>;

/// Deterministic given cfg.seed. NonFiniteLoss is rethrown with the step index.
TrainResult train(const TrainConfig& cfg, const Density& base, const Density& target,
                  const StepCallback& on_log = {});

/// (1/n) sum [log mu(x) - logdet(x) - log nu(s(x))].
double reverse_kl_loss(const Flow& f, const Density& base, const Density& target,
                       std::span<const Point> batch);
/// -(1/n) sum [log mu(s(x)) + logdet(x)].
double nll_loss(const Flow& f, const Density& base, std::span<const Point> data_batch);

/// 100 (sum w)^2 / (n sum w^2) with w = nu(s(x)) / nu_theta(s(x)), x ~ mu.
double ess(const Flow& f, const Density& base, const Density& target, std::size_t n, Rng& rng);

/// ESS in percent from log importance weights.
double ess_from_log_weights(std::span<const double> logw);

/// Fresh-sample evaluation with a fixed seed. Forward flows: reverse KL and ESS from base
/// samples. Backward flows: forward KL and ESS from target samples.
EvalReport evaluate(const Flow& f, const Density& base, const Density& target, std::size_t n,
                    std::uint64_t seed);

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace);

}  // namespace rcpm
