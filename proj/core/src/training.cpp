#include "rcpm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include "rcpm/error.hpp"
#include "rcpm/parallel.hpp"
#include "rcpm/serialize.hpp"

namespace rcpm {

using nlohmann::json;

namespace {

double nan_value() { return std::numeric_limits<double>::quiet_NaN(); }

json num_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

DensityPtr borrow(const Density& d) { return DensityPtr(&d, [](const Density*) {}); }

}  // namespace

// -- config -----------------------------------------------------------------

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  static const char* known[] = {"manifold",  "base",          "target",      "loss",
                                "blocks",    "layers",        "components",  "gamma",
                                "gamma2",    "alpha_min",     "alpha_range", "mix_init",
                                "learning_rate", "beta1",     "beta2",       "adam_eps",
                                "batch_size", "steps",        "seed",        "eval_samples",
                                "eval_seed", "log_every",     "comment"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find_if(std::begin(known), std::end(known),
                     [&](const char* k) { return it.key() == k; }) == std::end(known))
      throw ConfigError("unknown config key '" + it.key() + "'");
  }
  try {
    if (j.contains("manifold")) c.manifold = j["manifold"];
    if (j.contains("base")) c.base = j["base"];
    if (j.contains("target")) c.target = j["target"];
    if (j.contains("loss")) {
      const auto l = j["loss"].get<std::string>();
      if (l == "kl" || l == "reverse_kl") c.loss = TrainLoss::ReverseKL;
      else if (l == "nll") c.loss = TrainLoss::NLL;
      else throw ConfigError("loss must be 'kl' or 'nll'");
    }
    c.blocks = j.value("blocks", c.blocks);
    c.layers = j.value("layers", c.layers);
    c.components = j.value("components", c.components);
    c.gamma = j.value("gamma", c.gamma);
    if (j.contains("gamma2") && !j["gamma2"].is_null()) c.gamma2 = j["gamma2"].get<double>();
    c.alpha_min = j.value("alpha_min", c.alpha_min);
    c.alpha_range = j.value("alpha_range", c.alpha_range);
    if (j.contains("mix_init") && !j["mix_init"].is_null()) c.mix_init = j["mix_init"].get<double>();
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.steps = j.value("steps", c.steps);
    c.seed = j.value("seed", c.seed);
    c.eval_samples = j.value("eval_samples", c.eval_samples);
    c.eval_seed = j.value("eval_seed", c.eval_seed);
    c.log_every = j.value("log_every", c.log_every);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

json TrainConfig::to_json() const {
  return {{"manifold", manifold},
          {"base", base},
          {"target", target},
          {"loss", loss == TrainLoss::ReverseKL ? "kl" : "nll"},
          {"blocks", blocks},
          {"layers", layers},
          {"components", components},
          {"gamma", gamma},
          {"gamma2", gamma2 ? json(*gamma2) : json(nullptr)},
          {"alpha_min", alpha_min},
          {"alpha_range", alpha_range},
          {"mix_init", mix_init ? json(*mix_init) : json(nullptr)},
          {"learning_rate", learning_rate},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"batch_size", batch_size},
          {"steps", steps},
          {"seed", seed},
          {"eval_samples", eval_samples},
          {"eval_seed", eval_seed},
          {"log_every", log_every}};
}

void TrainConfig::validate() const {
  if (blocks == 0) throw ConfigError("blocks must be >= 1");
  if (layers == 0) throw ConfigError("layers must be >= 1");
  if (components == 0) throw ConfigError("components must be >= 1");
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
  if (gamma2 && !(*gamma2 >= 0.0)) throw ConfigError("gamma2 must be >= 0 or null");
  if (!(alpha_range >= 0.0)) throw ConfigError("alpha_range must be >= 0");
  if (mix_init && !(*mix_init >= 0.0 && *mix_init <= 1.0)) throw ConfigError("mix_init must lie in [0, 1]");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (eval_samples == 0) throw ConfigError("eval_samples must be >= 1");
  make_manifold();
}

std::vector<std::string> TrainConfig::warnings() const {
  std::vector<std::string> w;
  auto out = [&](bool bad, const std::string& msg) {
    if (bad) w.push_back(msg);
  };
  out(learning_rate < 1e-6 || learning_rate > 1e-1, "learning_rate outside [1e-6, 1e-1]");
  out(beta1 < 0.1 || beta1 > 0.9, "beta1 outside [0.1, 0.9]");
  out(beta2 > 0.999, "beta2 above 0.999");
  out(components < 50 || components > 1000, "components outside [50, 1000]");
  out(alpha_min < 1e-5 || alpha_min > 10, "alpha_min outside [1e-5, 10]");
  out(alpha_range < 1e-3 || alpha_range > 1, "alpha_range outside [1e-3, 1]");
  out(gamma != 0.01 && gamma != 0.05 && gamma != 0.1 && gamma != 0.5,
      "gamma not in {0.01, 0.05, 0.1, 0.5}");
  return w;
}

Manifold TrainConfig::make_manifold() const { return manifold_from_json(manifold); }

// -- init / optimizer --------------------------------------------------------------

Flow init_flow(const TrainConfig& cfg, const Manifold& m, Rng& rng) {
  Flow f;
  f.manifold = m;
  f.direction = cfg.loss == TrainLoss::ReverseKL ? Direction::Forward : Direction::Backward;
  const double w0 = cfg.mix_init.value_or(cfg.layers == 1 ? 0.0 : 0.5);
  for (std::size_t j = 0; j < cfg.blocks; ++j) {
    BlockPotential b;
    for (std::size_t k = 0; k < cfg.layers; ++k)
      b.layers.push_back(random_potential(m, cfg.components, cfg.gamma, cfg.alpha_min, cfg.alpha_range, rng));
    b.mix_logits.assign(cfg.layers, 0.0);
    for (std::size_t k = 0; k < cfg.layers; ++k) b.set_mix_weight(k, w0);
    b.identity_relu = cfg.gamma2.has_value();
    b.relu_gamma = cfg.gamma2.value_or(0.0);
    f.blocks.push_back(std::move(b));
  }
  f.validate();
  return f;
}

AdamState::AdamState(const Flow& f, double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(ParamGradient::zeros_like(f)), v_(m_) {}

void AdamState::step(Flow& f, const ParamGradient& g) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  auto update = [&](std::vector<double>& p, const std::vector<double>& gr, std::vector<double>& m,
                    std::vector<double>& v) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!std::isfinite(p[i])) continue;
      m[i] = b1_ * m[i] + (1.0 - b1_) * gr[i];
      v[i] = b2_ * v[i] + (1.0 - b2_) * gr[i] * gr[i];
      p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  };
  const Manifold& man = f.manifold;
  const std::size_t D = static_cast<std::size_t>(man.ambient_dim());
  for (std::size_t j = 0; j < f.blocks.size(); ++j) {
    auto& b = f.blocks[j];
    for (std::size_t k = 0; k < b.layers.size(); ++k) {
      auto& pot = b.layers[k];
      update(pot.centers, g.blocks[j].d_centers[k], m_.blocks[j].d_centers[k], v_.blocks[j].d_centers[k]);
      update(pot.offsets, g.blocks[j].d_offsets[k], m_.blocks[j].d_offsets[k], v_.blocks[j].d_offsets[k]);
      for (std::size_t i = 0; i < pot.size(); ++i) {
        const Point y = man.project(std::span<const double>(pot.centers.data() + i * D, D));
        std::copy(y.coords.begin(), y.coords.end(), pot.centers.begin() + i * D);
      }
    }
    update(b.mix_logits, g.blocks[j].d_mix_logits, m_.blocks[j].d_mix_logits, v_.blocks[j].d_mix_logits);
  }
}

// -- losses / metrics -------------------------------------------------------------

double reverse_kl_loss(const Flow& f, const Density& base, const Density& target,
                       std::span<const Point> batch) {
  return loss_value(f, LossSpec::reverse_kl(base, target), batch);
}

double nll_loss(const Flow& f, const Density& base, std::span<const Point> data_batch) {
  return loss_value(f, LossSpec::nll(base), data_batch);
}

double ess_from_log_weights(std::span<const double> logw) {
  if (logw.empty()) return 0.0;
  const double mx = *std::max_element(logw.begin(), logw.end());
  if (!std::isfinite(mx)) return 0.0;
  double s1 = 0.0, s2 = 0.0;
  for (double l : logw) {
    const double w = std::exp(l - mx);
    s1 += w;
    s2 += w * w;
  }
  return 100.0 * s1 * s1 / (static_cast<double>(logw.size()) * s2);
}

namespace {

struct WeightSample {
  std::vector<double> logw;  // log(target / model)
  std::vector<double> nll;   // backward models only
  std::size_t rejected = 0;
};

WeightSample forward_weights(const Flow& f, const Density& base, const Density& target,
                             std::size_t n, Rng& rng) {
  WeightSample ws;
  PushedDensity pd(borrow(base), f);
  const auto samples = pd.sample_with_density(rng, n, &ws.rejected);
  ws.logw.resize(n);
  parallel_chunks(n, 1024, [&](std::size_t, std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i)
      ws.logw[i] = target.log_density(samples[i].x) - samples[i].log_density;
  });
  return ws;
}

WeightSample backward_weights(const Flow& f, const Density& base, const Density& target,
                              std::size_t n, Rng& rng) {
  WeightSample ws;
  const auto ys = target.sample(rng, n);
  std::vector<double> lm(n, nan_value()), lt(n, nan_value());
  std::vector<char> ok(n, 0);
  const bool has_target = target.has_log_density();
  parallel_chunks(n, 256, [&](std::size_t, std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      try {
        const FlowEval e = evaluate_flow(f, ys[i]);
        lm[i] = base.log_density(e.y) + e.logdet;
        if (has_target) lt[i] = target.log_density(ys[i]);
        ok[i] = 1;
      } catch (const CutLocus&) {
      } catch (const SingularJacobian&) {
      }
    }
  });
  for (std::size_t i = 0; i < n; ++i) {
    if (!ok[i]) {
      ++ws.rejected;
      continue;
    }
    ws.nll.push_back(-lm[i]);
    if (has_target) ws.logw.push_back(lm[i] - lt[i]);
  }
  return ws;
}

void mean_and_stderr(const std::vector<double>& v, double& mean, double& se) {
  mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= std::max<double>(1.0, static_cast<double>(v.size()) - 1.0);
  se = std::sqrt(var / static_cast<double>(v.size()));
}

}  // namespace

double ess(const Flow& f, const Density& base, const Density& target, std::size_t n, Rng& rng) {
  if (n == 0) throw InvalidBatch("ess needs n >= 1");
  const auto ws = forward_weights(f, base, target, n, rng);
  return ess_from_log_weights(ws.logw);
}

EvalReport evaluate(const Flow& f, const Density& base, const Density& target, std::size_t n,
                    std::uint64_t seed) {
  EvalReport r;
  Rng rng(seed);
  r.notes.push_back("ESS = 100 (sum w)^2 / (n sum w^2), standard importance-sampling definition");
  if (target.kind() == "wrapped_gaussian_mixture")
    r.notes.push_back("target is a wrapped-Gaussian mixture defined by this library");
  if (f.direction == Direction::Forward) {
    r.estimator = "reverse_kl";
    const auto ws = forward_weights(f, base, target, n, rng);
    std::vector<double> neg(ws.logw.size());
    for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -ws.logw[i];
    mean_and_stderr(neg, r.kl_nats, r.kl_stderr);
    r.ess_percent = ess_from_log_weights(ws.logw);
    r.n_eval = ws.logw.size();
    r.rejected_cutlocus = ws.rejected;
  } else {
    r.estimator = "forward_kl";
    const auto ws = backward_weights(f, base, target, n, rng);
    r.n_eval = ws.nll.size();
    r.rejected_cutlocus = ws.rejected;
    if (!ws.nll.empty()) {
      double se = 0.0, m = 0.0;
      mean_and_stderr(ws.nll, m, se);
      r.nll = m;
    }
    if (!ws.logw.empty()) {
      std::vector<double> neg(ws.logw.size());
      for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -ws.logw[i];
      mean_and_stderr(neg, r.kl_nats, r.kl_stderr);
      r.ess_percent = ess_from_log_weights(ws.logw);
    } else {
      r.kl_nats = r.kl_stderr = r.ess_percent = nan_value();
      r.notes.push_back("target has no pointwise density; only NLL is reported");
    }
  }
  return r;
}

json EvalReport::to_json() const {
  return {{"estimator", estimator},
          {"kl_nats", num_or_null(kl_nats)},
          {"kl_stderr", num_or_null(kl_stderr)},
          {"ess_percent", num_or_null(ess_percent)},
          {"nll", nll ? num_or_null(*nll) : json(nullptr)},
          {"n_eval", n_eval},
          {"rejected_cutlocus", rejected_cutlocus},
          {"wallclock_per_iter", wallclock_per_iter},
          {"notes", notes}};
}

// -- training loop ----------------------------------------------------------------

TrainResult train(const TrainConfig& cfg, const Density& base, const Density& target,
                  const StepCallback& on_log) {
  cfg.validate();
  const Manifold m = cfg.make_manifold();
  if (!(base.manifold() == m) || !(target.manifold() == m))
    throw ConfigError("densities and config disagree on the manifold");
  const bool kl = cfg.loss == TrainLoss::ReverseKL;
  if (kl && !base.can_sample()) throw ConfigError("KL training samples the base density");
  if (kl && !target.has_log_density()) throw ConfigError("KL training needs the target log-density");
  if (!kl && !target.can_sample()) throw ConfigError("NLL training samples the target (data)");

  Rng rng(cfg.seed);
  TrainResult res;
  res.flow = init_flow(cfg, m, rng);
  AdamState adam(res.flow, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
  const LossSpec spec = kl ? LossSpec::reverse_kl(base, target) : LossSpec::nll(base);
  const Density& source = kl ? base : target;

  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto batch = source.sample(rng, cfg.batch_size);
    LossResult lr;
    try {
      lr = loss_and_grad(res.flow, spec, batch);
    } catch (const NonFiniteLoss& e) {
      throw NonFiniteLoss(std::string(e.what()) + " at step " + std::to_string(step), e.sample(),
                          static_cast<long>(step));
    }
    lr.grad.project_to_tangent(res.flow);
    adam.step(res.flow, lr.grad);
    const double wall = std::chrono::duration<double>(clock::now() - t0).count();
    TraceRow row{step, lr.loss, wall};
    res.trace.push_back(row);
    if (on_log && cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps)) on_log(row);
  }
  const double total = std::chrono::duration<double>(clock::now() - t0).count();
  res.report = evaluate(res.flow, base, target, cfg.eval_samples, cfg.eval_seed);
  res.report.wallclock_per_iter = cfg.steps ? total / static_cast<double>(cfg.steps) : 0.0;
  return res;
}

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace) {
  std::string s = "step,loss,wallclock\n";
  char buf[128];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.6f\n", r.step, r.loss, r.wallclock);
    s += buf;
  }
  write_file_atomic(path, s);
}

}  // namespace rcpm
