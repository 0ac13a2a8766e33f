// Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero on any FAIL.
//
//   rcpm_acceptance [--only c1,c7] [--workdir DIR] [--configs DIR]
//
// c7 and s3 reuse c1's outputs in DIR; s1 reuses c2, s2 reuses c2 and c6.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rcpm/diffengine.hpp"
#include "rcpm/error.hpp"
#include "rcpm/potential.hpp"
#include "rcpm/quadrature.hpp"
#include "rcpm/rng.hpp"
#include "rcpm/serialize.hpp"
#include "rcpm/training.hpp"
#include "rcpm/verify.hpp"

namespace fs = std::filesystem;
using namespace rcpm;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  fs::path workdir;
  fs::path configs;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

TrainConfig load_config(const Context& ctx, const std::string& name) {
  return TrainConfig::from_json(read_json_file((ctx.configs / name).string()));
}

Flow load_model(const Context& ctx, const std::string& name) {
  const fs::path p = ctx.workdir / name;
  if (!fs::exists(p)) throw std::runtime_error("missing " + p.string() + " (run its criterion first)");
  return flow_from_json(read_json_file(p.string()));
}

struct TrainedRun {
  TrainResult result;
  double seconds = 0.0;
};

TrainedRun run_config(const TrainConfig& cfg) {
  const Manifold m = cfg.make_manifold();
  const auto base = density_from_json(cfg.base, m);
  const auto target = density_from_json(cfg.target, m);
  const auto t0 = Clock::now();
  TrainedRun r{train(cfg, *base, *target), 0.0};
  r.seconds = seconds_since(t0);
  return r;
}

Outcome kl_ess_criterion(const Context& ctx, const std::string& config, const std::string& stem,
                         double max_seconds) {
  const auto cfg = load_config(ctx, config);
  const auto run = run_config(cfg);
  const auto& rep = run.result.report;
  write_file_atomic((ctx.workdir / (stem + "_model.json")).string(),
                    dump_json(flow_to_json(run.result.flow, {{"config", cfg.to_json()}})));
  write_trace_csv((ctx.workdir / (stem + "_trace.csv")).string(), run.result.trace);
  const bool ok = rep.kl_nats <= 0.05 && rep.ess_percent >= 90.0 && cfg.steps <= 20000 &&
                  cfg.batch_size == 256 && run.seconds <= max_seconds;
  return {ok, fmt("KL=%.4f+-%.4f nats (<=0.05) ESS=%.1f%% (>=90) steps=%zu (<=20000) n_eval=%zu "
                  "time=%.0fs (<=%.0f)",
                  rep.kl_nats, rep.kl_stderr, rep.ess_percent, cfg.steps, rep.n_eval, run.seconds,
                  max_seconds)};
}

Outcome c1(const Context& ctx) {
  return kl_ess_criterion(ctx, "sphere_4mode.json", "c1", 15 * 60.0);
}

Outcome c2(const Context& ctx) {
  return kl_ess_criterion(ctx, "torus_3modal.json", "c2",
                          std::numeric_limits<double>::infinity());
}

Outcome c3(const Context&) {
  const auto t0 = Clock::now();
  const auto m = Manifold::sphere(2);
  const UniformDensity base(m);
  const auto target = sphere_mixture4();
  const auto spec = LossSpec::reverse_kl(base, *target);
  Rng brng(64);
  const auto batch = m.sample_uniform(brng, 64);

  const auto tm = Manifold::torus(2);
  const UniformDensity tbase(tm);
  const Torus3Modal tdata;
  const auto tspec = LossSpec::nll(tbase);
  const auto tbatch = tdata.sample(brng, 64);

  int checked = 0, failed = 0;
  double worst = 0.0;
  std::string worst_cfg;
  const auto check = [&](const Manifold& mf, const LossSpec& sp, std::span<const Point> b, const char* tag,
                         std::size_t T, std::size_t K, double g) {
    TrainConfig c;
    c.blocks = T;
    c.layers = K;
    c.components = 6;
    c.gamma = g;
    c.gamma2 = 0.1;
    Rng rng(1000 * T + 10 * K + static_cast<std::uint64_t>(g * 100));
    const Flow f = init_flow(c, mf, rng);
    const auto rep = grad_check(f, sp, b, 1e-4);
    ++checked;
    if (!rep.pass) ++failed;
    for (const auto& cl : rep.classes)
      if (cl.max_rel_error > worst) {
        worst = cl.max_rel_error;
        worst_cfg = fmt("%s T=%zu K=%zu gamma=%g %s", tag, T, K, g, rep.worst.c_str());
      }
  };
  for (std::size_t T : {1u, 2u, 5u})
    for (std::size_t K : {1u, 3u})
      for (double g : {0.05, 0.1, 0.5}) {
        check(m, spec, batch, "S2/kl", T, K, g);
        check(tm, tspec, tbatch, "T2/nll", T, K, g);
      }

  // gamma = 0: offsets must receive exactly zero gradient
  std::size_t nonzero = 0, alpha_coords = 0;
  for (std::size_t K : {1u, 3u}) {
    TrainConfig c;
    c.blocks = 2;
    c.layers = K;
    c.components = 6;
    c.gamma = 0.0;
    c.gamma2 = 0.0;
    Rng rng(77 + K);
    const Flow f = init_flow(c, m, rng);
    const auto lr = loss_and_grad(f, spec, batch);
    for (const auto& b : lr.grad.blocks)
      for (const auto& layer : b.d_offsets)
        for (double v : layer) {
          ++alpha_coords;
          if (v != 0.0) ++nonzero;
        }
  }
  const double secs = seconds_since(t0);
  const bool ok = failed == 0 && nonzero == 0 && secs < 60.0;
  return {ok, fmt("%d/%d configs pass at rel tol 1e-4, worst %.2e (%s); gamma=0 alpha grads nonzero %zu/%zu; "
                  "time=%.1fs (<60)",
                  checked - failed, checked, worst, worst_cfg.c_str(), nonzero, alpha_coords, secs)};
}

Outcome c4(const Context&) {
  Rng rng(4);
  double roundtrip = 0.0;
  std::size_t pairs = 0;
  for (const auto& m : {Manifold::sphere(2), Manifold::sphere(3), Manifold::torus(2),
                        Manifold::product({Manifold::sphere(2), Manifold::sphere(1)})}) {
    const auto xs = m.sample_uniform(rng, 10000);
    const auto ys = m.sample_uniform(rng, 10000);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      Point y;
      try {
        y = m.exp(m.log(xs[i], ys[i]));
      } catch (const CutLocus&) {
        continue;
      }
      ++pairs;
      for (std::size_t k = 0; k < y.coords.size(); ++k)
        roundtrip = std::max(roundtrip, std::abs(y.coords[k] - ys[i].coords[k]));
    }
  }

  const auto t2 = Manifold::torus(2);
  const auto s1 = Manifold::sphere(1);
  double decomp = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const auto p = t2.sample_uniform(rng, 2);
    const double d = t2.distance(p[0], p[1]);
    const double a = s1.distance(Point{p[0][0], p[0][1]}, Point{p[1][0], p[1][1]});
    const double b = s1.distance(Point{p[0][2], p[0][3]}, Point{p[1][2], p[1][3]});
    decomp = std::max(decomp, std::abs(d * d - (a * a + b * b)));
  }

  double ortho = 0.0;
  for (const auto& m : {Manifold::sphere(2), Manifold::sphere(3), Manifold::torus(2)}) {
    for (const auto& x : m.sample_uniform(rng, 2000)) {
      const auto e = m.tangent_basis(x);
      for (std::size_t a = 0; a < e.size(); ++a) {
        double nx = 0.0;
        for (std::size_t k = 0; k < x.coords.size(); ++k) nx += e[a].v[k] * x.coords[k];
        ortho = std::max(ortho, std::abs(nx));
        for (std::size_t b = 0; b < e.size(); ++b) {
          double g = 0.0;
          for (std::size_t k = 0; k < x.coords.size(); ++k) g += e[a].v[k] * e[b].v[k];
          ortho = std::max(ortho, std::abs(g - (a == b ? 1.0 : 0.0)));
        }
      }
    }
  }
  const bool ok = pairs >= 10000 && roundtrip < 1e-9 && decomp <= 1e-12 && ortho <= 1e-10;
  return {ok, fmt("round-trip max %.2e over %zu pairs (<1e-9); product d^2 decomposition %.2e (<=1e-12); "
                  "basis orthonormality %.2e (<=1e-10)",
                  roundtrip, pairs, decomp, ortho)};
}

Outcome c5(const Context&) {
  const auto t0 = Clock::now();
  const std::vector<std::size_t> sizes{16, 64, 256, 1024};
  const auto net = epsilon_net_s1(epsilon_net_target(), sizes);
  const auto target = involution_target();
  const auto a = involution_check(target, 512);
  const auto b = involution_check(target, 1024);
  const double ratio = b.defect / a.defect;
  const double secs = seconds_since(t0);
  std::ostringstream rows;
  for (const auto& r : net.rows) rows << " m=" << r.m << ":" << fmt("%.2e/%.2e", r.sup_error, r.bound);
  double min_gap = std::numeric_limits<double>::infinity();
  for (const auto& r : net.rows) min_gap = std::min(min_gap, r.min_gap);
  const bool ok = net.pass && net.monotone && net.upper && a.pass && b.pass &&
                  std::abs(ratio - 0.5) <= 0.05 && secs < 120.0;
  return {ok, fmt("sup err/bound%s; monotone=%d; min(phi_eps - phi_hat)=%.1e; involution res512 %.3e "
                  "(<=%.3e) res1024/res512=%.3f (~0.5); time=%.1fs (<120)",
                  rows.str().c_str(), net.monotone ? 1 : 0, min_gap, a.defect, a.bound, ratio, secs)};
}

Outcome c6(const Context& ctx) {
  const auto cfg = load_config(ctx, "torus_nll.json");
  const auto run = run_config(cfg);
  const Manifold m = cfg.make_manifold();
  write_file_atomic((ctx.workdir / "c6_model.json").string(),
                    dump_json(flow_to_json(run.result.flow, {{"config", cfg.to_json()}})));
  const PushedDensity pushed(density_from_json(cfg.base, m), run.result.flow);
  const double mass = integrate(m, 400, [&](const Point& y) { return std::exp(pushed.log_density(y)); });

  std::size_t tested = 0, nonzero = 0;
  for (const auto& im : {Manifold::sphere(2), Manifold::torus(2)}) {
    TrainConfig c;
    c.blocks = 3;
    c.layers = 2;
    c.components = 50;
    c.gamma = 0.1;
    c.gamma2 = 0.0;
    Rng rng(6);
    const Flow id = init_flow(c, im, rng);
    for (const auto& x : im.sample_uniform(rng, 10000)) {
      ++tested;
      if (evaluate_flow(id, x).logdet != 0.0 || flow_logdet(id, x) != 0.0) ++nonzero;
    }
  }
  const bool ok = std::abs(mass - 1.0) <= 1e-2 && nonzero == 0 && run.result.flow.direction == Direction::Backward;
  return {ok, fmt("trained torus model (NLL=%.4f) integrates to %.5f on 400x400 grid (|err|<=1e-2); "
                  "identity flow logdet != 0 at %zu/%zu points",
                  run.result.report.nll.value_or(std::nan("")), mass, nonzero, tested)};
}

Outcome c7(const Context& ctx) {
  const Flow f = load_model(ctx, "c1_model.json");
  const auto a = logdet_positivity_audit(f, 100000, 7);
  return {a.all_positive && a.n == 100000,
          fmt("%zu points: min logdet %.4f max %.4f, nonpositive %zu, degenerate %zu, cut locus %zu", a.n,
              a.min_logdet, a.max_logdet, a.nonpositive, a.degenerate, a.cut_locus)};
}

Outcome c8(const Context&) {
  Rng rng(8);
  std::size_t violations = 0;
  const double gamma_bounds = 0.1;
  for (int i = 0; i < 100000; ++i) {
    const std::size_t n = 1 + static_cast<std::size_t>(uniform01(rng) * 50);
    std::vector<double> v(n);
    for (auto& x : v) x = 10.0 * standard_normal(rng);
    const double mn = *std::min_element(v.begin(), v.end());
    const double s = soft_min(v, gamma_bounds);
    if (!(s <= mn && s >= mn - gamma_bounds * std::log(static_cast<double>(n)))) ++violations;
  }
  int conv_fail = 0;
  double worst_ratio = 0.0;
  std::vector<double> v(100);
  for (auto& x : v) x = standard_normal(rng);
  const double mn = *std::min_element(v.begin(), v.end());
  for (double g = 1e-1; g >= 1e-6 * 0.999; g /= 10.0) {
    const double gap = mn - soft_min(v, g);
    const double bound = g * std::log(100.0);
    worst_ratio = std::max(worst_ratio, gap / bound);
    if (!(gap >= 0.0 && gap <= bound)) ++conv_fail;
  }
  return {violations == 0 && conv_fail == 0,
          fmt("bound violations %zu/100000 (gamma=0.1); gamma 1e-1..1e-6: max gap/(gamma log n)=%.3f, "
              "failures %d",
              violations, worst_ratio, conv_fail)};
}

Outcome c9(const Context& ctx) {
  std::vector<std::string> notes;
  bool ok = true;
  for (const char* name : {"sphere_4mode.json", "torus_3modal.json", "torus_nll.json"}) {
    auto cfg = load_config(ctx, name);
    cfg.steps = 40;
    cfg.eval_samples = 1000;
    const auto a = dump_json(flow_to_json(run_config(cfg).result.flow, {{"config", cfg.to_json()}}));
    const auto b = dump_json(flow_to_json(run_config(cfg).result.flow, {{"config", cfg.to_json()}}));
    ok = ok && a == b;
    notes.push_back(fmt("%s %s (%zu bytes)", name, a == b ? "identical" : "DIFFER", a.size()));
  }
  std::string d;
  for (const auto& n : notes) d += (d.empty() ? "" : "; ") + n;
  return {ok, "two runs, same seed, 40 steps: " + d};
}

Outcome s1(const Context& ctx) {
  const Flow f = load_model(ctx, "c2_model.json");
  const UniformDensity base(f.manifold);
  const Torus3Modal target;
  const auto r = pushforward_check(f, base, target, 16, 200000, 21, 20);
  return {r.tv <= 0.05, fmt("TV=%.4f (<=0.05) on 16x16 bins, %zu samples; sampling-noise floor %.4f+-%.4f",
                            r.tv, r.samples, r.noise_mean, r.noise_sd)};
}

// Bin index of a torus point in a res x res angle grid.
std::size_t torus_bin(const Point& x, int res) {
  const auto cell = [res](double c, double s) {
    double a = std::atan2(s, c);
    if (a < 0.0) a += 2 * std::numbers::pi;
    return std::min(res - 1, static_cast<int>(a / (2 * std::numbers::pi) * res));
  };
  return static_cast<std::size_t>(cell(x[0], x[1]) * res + cell(x[2], x[3]));
}

Outcome s2(const Context& ctx) {
  const Flow fwd = load_model(ctx, "c2_model.json");
  const Flow bwd = load_model(ctx, "c6_model.json");
  const int res = 16;
  const std::size_t n = 200000;
  const auto base = std::make_shared<UniformDensity>(fwd.manifold);

  std::vector<double> p(res * res, 0.0), q(res * res, 0.0);
  Rng rng(22);
  for (const auto& y : PushedDensity(base, fwd).sample(rng, n)) p[torus_bin(y, res)] += 1.0 / n;

  const PushedDensity nll(base, bwd);
  double mass = 0.0;
  for (const auto& node : quadrature_grid(bwd.manifold, 24 * res)) {
    const double w = node.weight * std::exp(nll.log_density(node.x));
    q[torus_bin(node.x, res)] += w;
    mass += w;
  }
  double tv = 0.0;
  for (int i = 0; i < res * res; ++i) tv += 0.5 * std::abs(p[i] - q[i] / mass);
  return {tv <= 0.05, fmt("TV(KL-trained, NLL-trained)=%.4f (<=0.05) on 16x16 bins; %zu forward samples", tv, n)};
}

Outcome s3(const Context& ctx) {
  const fs::path p = ctx.workdir / "c1_trace.csv";
  if (!fs::exists(p)) return {false, "missing " + p.string()};
  std::ifstream in(p);
  std::vector<double> loss;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string step, l;
    std::getline(ss, step, ',');
    std::getline(ss, l, ',');
    loss.push_back(std::stod(l));
  }
  // 200-step window means after step 500; an increase counts only beyond 3 combined standard errors
  struct Win {
    double mean, se;
  };
  std::vector<Win> w;
  for (std::size_t lo = 500; lo + 200 <= loss.size(); lo += 200) {
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = lo; i < lo + 200; ++i) {
      s += loss[i];
      s2 += loss[i] * loss[i];
    }
    const double mean = s / 200.0;
    w.push_back({mean, std::sqrt(std::max(0.0, s2 / 200.0 - mean * mean) / 199.0)});
  }
  int ups = 0;
  std::string means;
  for (std::size_t i = 0; i < w.size(); ++i) {
    means += fmt("%s%.4f", i ? " " : "", w[i].mean);
    if (i > 0 && w[i].mean > w[i - 1].mean + 3 * std::hypot(w[i].se, w[i - 1].se)) ++ups;
  }
  return {w.size() >= 2 && ups == 0,
          fmt("window means [%s], significant increases %d", means.c_str(), ups)};
}

struct Criterion {
  std::string id;
  std::string title;
  std::function<Outcome(const Context&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance suite"};
  std::string only;
  std::string workdir = (fs::temp_directory_path() / "rcpm_acceptance").string();
  std::string configs = RCPM_CONFIG_DIR;
  app.add_option("--only", only, "comma-separated criteria (default: all)");
  app.add_option("--workdir", workdir, "directory for trained models");
  app.add_option("--configs", configs, "directory holding the experiment configs");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> all{
      {"c1", "sphere 4-mode reverse KL", c1},
      {"c2", "torus 3-modal reverse KL", c2},
      {"c3", "gradient check", c3},
      {"c4", "geometry", c4},
      {"c5", "epsilon-net and involution oracles", c5},
      {"c6", "change of variables", c6},
      {"c7", "Jacobian positivity after c1", c7},
      {"c8", "soft-min", c8},
      {"c9", "determinism", c9},
      {"s1", "pushforward TV of the c2 torus model", s1},
      {"s2", "KL/NLL torus consistency (c2 vs c6)", s2},
      {"s3", "4-mode loss trace windows (c1)", s3},
  };
  std::set<std::string> pick;
  if (!only.empty()) {
    std::stringstream ss(only);
    for (std::string s; std::getline(ss, s, ',');) pick.insert(s);
  }

  Context ctx{workdir, configs};
  fs::create_directories(ctx.workdir);
  int failures = 0;
  for (const auto& c : all) {
    if (!pick.empty() && !pick.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s %s %s: %s\n", o.pass ? "PASS" : "FAIL", c.id.c_str(), c.title.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
