#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "rcpm/error.hpp"
#include "rcpm/quadrature.hpp"
#include "rcpm/serialize.hpp"
#include "rcpm/training.hpp"
#include "rcpm/verify.hpp"

#ifndef RCPM_VERSION
#define RCPM_VERSION "unknown"
#endif

namespace rcpm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Context {
  std::string command_line;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
};

std::string out_dir_of(const std::string& file) {
  const fs::path p(file);
  return p.has_parent_path() ? p.parent_path().string() : std::string(".");
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create directory '" + dir + "': " + ec.message());
}

void write_manifest(const Context& ctx, const std::string& dir, const std::string& command,
                    const std::optional<std::string>& config, std::optional<std::uint64_t> seed) {
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - ctx.start).count();
  json m = {{"command", command},
            {"argv", ctx.command_line},
            {"config", config ? json(*config) : json(nullptr)},
            {"seed", seed ? json(*seed) : json(nullptr)},
            {"out", dir},
            {"version", RCPM_VERSION},
            {"wallclock_seconds", wall}};
  write_file_atomic((fs::path(dir) / "manifest.json").string(), dump_json(m));
}

// Point-file paths inside density specs are taken relative to the config file.
void resolve_files(json& spec, const fs::path& base_dir) {
  if (spec.is_object()) {
    for (auto it = spec.begin(); it != spec.end(); ++it) {
      if (it.key() == "file" && it->is_string()) {
        const fs::path p(it->get<std::string>());
        if (p.is_relative()) *it = (base_dir / p).lexically_normal().string();
      } else {
        resolve_files(*it, base_dir);
      }
    }
  } else if (spec.is_array()) {
    for (auto& e : spec) resolve_files(e, base_dir);
  }
}

TrainConfig load_config(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("config file '" + path + "' does not exist");
  json j = read_json_file(path);
  resolve_files(j, fs::path(path).parent_path());
  return TrainConfig::from_json(j);
}

struct Model {
  Flow flow;
  json meta;
  DensityPtr base;
  DensityPtr target;
};

Model load_model(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("model file '" + path + "' does not exist");
  const json j = read_json_file(path);
  Model md;
  md.flow = flow_from_json(j);
  md.meta = j.value("meta", json::object());
  const json cfg = md.meta.value("config", json::object());
  md.base = density_from_json(cfg.value("base", json("uniform")), md.flow.manifold);
  if (cfg.contains("target")) md.target = density_from_json(cfg["target"], md.flow.manifold);
  return md;
}

void print_json(const json& j) { std::cout << dump_json(j); }

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// -- train -------------------------------------------------------------------------

int cmd_train(const Context& ctx, const std::string& config_path, const std::string& out,
              std::optional<std::uint64_t> seed, const std::string& loss) {
  TrainConfig cfg = load_config(config_path);
  if (seed) cfg.seed = *seed;
  if (!loss.empty()) {
    if (loss == "kl") cfg.loss = TrainLoss::ReverseKL;
    else if (loss == "nll") cfg.loss = TrainLoss::NLL;
    else throw ConfigError("--loss must be 'kl' or 'nll'");
  }
  for (const auto& w : cfg.warnings()) std::cerr << "warning: " << w << "\n";
  const Manifold m = cfg.make_manifold();
  const DensityPtr base = density_from_json(cfg.base, m);
  const DensityPtr target = density_from_json(cfg.target, m);
  ensure_dir(out);

  TrainResult res;
  try {
    res = train(cfg, *base, *target, [](const TraceRow& r) {
      std::fprintf(stderr, "step %6zu  loss %.6f  %.1fs\n", r.step, r.loss, r.wallclock);
    });
  } catch (const NonFiniteLoss& e) {
    std::cerr << "error: training aborted: " << e.what() << "\n";
    return kNumerical;
  }
  const json meta = {{"config", cfg.to_json()}};
  const fs::path dir(out);
  write_file_atomic((dir / "model.json").string(), dump_json(flow_to_json(res.flow, meta)));
  write_trace_csv((dir / "trace.csv").string(), res.trace);
  write_file_atomic((dir / "eval.json").string(), dump_json(res.report.to_json()));
  write_manifest(ctx, out, "train", config_path, cfg.seed);
  print_json(res.report.to_json());
  return kOk;
}

// -- density -----------------------------------------------------------------------

int cmd_density(const Context& ctx, const std::string& model_path, int res, const std::string& out,
                bool binarize, std::size_t samples, double bandwidth, std::uint64_t seed) {
  const Model md = load_model(model_path);
  const Manifold& m = md.flow.manifold;
  const auto nodes = quadrature_grid(m, res);
  std::vector<double> dens(nodes.size());
  std::string method;
  if (md.flow.direction == Direction::Backward) {
    method = "exact";
    const PushedDensity pd(md.base, md.flow);
    for (std::size_t i = 0; i < nodes.size(); ++i) dens[i] = std::exp(pd.log_density(nodes[i].x));
  } else {
    method = "kde";
    Rng rng(seed);
    const PushedDensity pd(md.base, md.flow);
    const KdeDensity kde(m, pd.sample(rng, samples), bandwidth);
    for (std::size_t i = 0; i < nodes.size(); ++i) dens[i] = std::exp(kde.log_density(nodes[i].x));
  }
  double integral = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) integral += nodes[i].weight * dens[i];
  const double uniform = 1.0 / m.volume();

  std::string s = "# integral=" + fmt(integral) + " method=" + method + "\n";
  s += m.is_sphere(2) ? "colatitude,longitude,density\n" : m.dim() == 1 ? "angle,density\n"
                                                                         : "angle1,angle2,density\n";
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const double v = binarize ? (dens[i] >= uniform ? 1.0 : 0.0) : dens[i];
    s += fmt(nodes[i].u) + ",";
    if (m.dim() > 1) s += fmt(nodes[i].v) + ",";
    s += fmt(v) + "\n";
  }
  const std::string dir = out_dir_of(out);
  ensure_dir(dir);
  write_file_atomic(out, s);
  write_manifest(ctx, dir, "density", std::nullopt, seed);
  std::cerr << "integral " << fmt(integral) << " over " << nodes.size() << " cells (" << method << ")\n";
  return kOk;
}

// -- geodesics ---------------------------------------------------------------------

int cmd_geodesics(const Context& ctx, const std::string& model_path, int starts, std::size_t steps,
                  const std::string& out) {
  const Model md = load_model(model_path);
  if (md.flow.blocks.size() != 1) {
    std::cerr << "error: geodesics need a single-block model (T=1); this model has T="
              << md.flow.blocks.size()
              << ". Only a single block moves each point along one geodesic exp_x(-l grad phi).\n";
    return kUsage;
  }
  const Manifold& m = md.flow.manifold;
  const auto nodes = quadrature_grid(m, starts);
  std::string s = "start,step,l";
  for (int c = 0; c < m.ambient_dim(); ++c) s += ",x" + std::to_string(c);
  s += "\n";
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    std::vector<Point> path;
    try {
      path = transport_geodesic(md.flow.blocks[0], nodes[i].x, steps);
    } catch (const CutLocus&) {
      continue;
    }
    for (std::size_t k = 0; k < path.size(); ++k) {
      s += std::to_string(i) + "," + std::to_string(k) + "," +
           fmt(static_cast<double>(k) / static_cast<double>(steps));
      for (double c : path[k].coords) s += "," + fmt(c);
      s += "\n";
    }
  }
  const std::string dir = out_dir_of(out);
  ensure_dir(dir);
  write_file_atomic(out, s);
  write_manifest(ctx, dir, "geodesics", std::nullopt, std::nullopt);
  return kOk;
}

// -- sample ------------------------------------------------------------------------

int cmd_sample(const Context& ctx, const std::string& model_path, std::size_t n,
               const std::string& out, std::uint64_t seed) {
  const Model md = load_model(model_path);
  if (md.flow.direction != Direction::Forward) {
    std::cerr << "error: backward (likelihood) models evaluate densities but cannot draw samples\n";
    return kUsage;
  }
  const Manifold& m = md.flow.manifold;
  Rng rng(seed);
  const PushedDensity pd(md.base, md.flow);
  const auto samples = pd.sample_with_density(rng, n);
  std::string s;
  for (int c = 0; c < m.ambient_dim(); ++c) s += "x" + std::to_string(c) + ",";
  s += "log_density\n";
  for (const auto& p : samples) {
    for (double c : p.x.coords) s += fmt(c) + ",";
    s += fmt(p.log_density) + "\n";
  }
  const std::string dir = out_dir_of(out);
  ensure_dir(dir);
  write_file_atomic(out, s);
  write_manifest(ctx, dir, "sample", std::nullopt, seed);
  return kOk;
}

// -- gradcheck ---------------------------------------------------------------------

int cmd_gradcheck(const Context& ctx, const std::string& config_path, std::size_t batch_size,
                  double tol, std::optional<std::uint64_t> seed, const std::string& out) {
  TrainConfig cfg = load_config(config_path);
  if (seed) cfg.seed = *seed;
  const Manifold m = cfg.make_manifold();
  const DensityPtr base = density_from_json(cfg.base, m);
  const DensityPtr target = density_from_json(cfg.target, m);
  Rng rng(cfg.seed);
  const Flow f = init_flow(cfg, m, rng);
  const bool kl = cfg.loss == TrainLoss::ReverseKL;
  const auto batch = (kl ? *base : *target).sample(rng, batch_size);
  const LossSpec spec = kl ? LossSpec::reverse_kl(*base, *target) : LossSpec::nll(*base);
  const GradCheckReport rep = grad_check(f, spec, batch, tol);
  print_json(rep.to_json());
  if (!out.empty()) {
    const std::string dir = out_dir_of(out);
    ensure_dir(dir);
    write_file_atomic(out, dump_json(rep.to_json()));
    write_manifest(ctx, dir, "gradcheck", config_path, cfg.seed);
  }
  return rep.pass ? kOk : kNumerical;
}

// -- verify ------------------------------------------------------------------------

struct VerifyArgs {
  std::string name;
  std::string model;
  std::string manifold = "S1";
  int res = 512;
  std::size_t n = 100000;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_verify(const Context& ctx, const VerifyArgs& a) {
  json rep;
  bool pass = true;
  if (a.name == "involution") {
    const auto r = involution_check(involution_target(), a.res);
    rep = r.to_json();
    pass = r.pass;
  } else if (a.name == "epsilon-net") {
    const std::vector<std::size_t> sizes = {16, 64, 256, 1024};
    if (a.manifold == "S1") {
      const auto r = epsilon_net_s1(epsilon_net_target(), sizes);
      rep = r.to_json();
      pass = r.pass;
    } else if (a.manifold == "S2") {
      Rng rng(a.seed);
      const auto target = random_potential(Manifold::sphere(2), 12, 0.0, 0.1, 0.5, rng);
      const std::vector<std::size_t> s2sizes = {16, 64, 256};
      const auto r = epsilon_net_s2(target, s2sizes);
      rep = r.to_json();
      pass = r.pass;
    } else {
      throw ConfigError("epsilon-net runs on S1 or S2");
    }
  } else if (a.name == "pushforward") {
    if (a.model.empty()) throw ConfigError("pushforward needs --model");
    const Model md = load_model(a.model);
    if (!md.target) throw ConfigError("model meta carries no target density");
    const auto r = pushforward_check(md.flow, *md.base, *md.target, 32, a.n, a.seed);
    rep = r.to_json();
  } else if (a.name == "logdet-audit") {
    if (a.model.empty()) throw ConfigError("logdet-audit needs --model");
    const Model md = load_model(a.model);
    const auto r = logdet_positivity_audit(md.flow, a.n, a.seed);
    rep = r.to_json();
    pass = r.all_positive;
  } else {
    throw ConfigError("unknown oracle '" + a.name +
                      "' (expected involution, epsilon-net, pushforward, logdet-audit)");
  }
  print_json(rep);
  if (!a.out.empty()) {
    const std::string dir = out_dir_of(a.out);
    ensure_dir(dir);
    write_file_atomic(a.out, dump_json(rep));
    write_manifest(ctx, dir, "verify " + a.name, std::nullopt, a.seed);
  }
  return pass ? kOk : kNumerical;
}

}  // namespace

int run(int argc, char** argv) {
  Context ctx;
  for (int i = 0; i < argc; ++i) ctx.command_line += (i ? " " : "") + std::string(argv[i]);

  CLI::App app{"Riemannian convex-potential flows: training, sampling and verification"};
  app.require_subcommand(1);
  app.set_version_flag("--version", RCPM_VERSION);

  std::string config, out, model, loss;
  std::optional<std::uint64_t> seed;
  std::uint64_t plain_seed = 0;
  std::size_t n = 1000, samples = 20000, batch = 64;
  std::size_t steps = 20;
  int grid = 100, starts = 10;
  double bandwidth = 0.1, tol = 1e-4;
  bool binarize = false;
  VerifyArgs va;

  auto* train = app.add_subcommand("train", "Train a flow from a JSON config");
  train->add_option("--config", config, "Config JSON")->required();
  train->add_option("--out", out, "Output directory")->required();
  train->add_option("--seed", seed, "Override the config seed");
  train->add_option("--loss", loss, "Override the loss (kl|nll)");

  auto* density = app.add_subcommand("density", "Export the model density on a chart grid");
  density->add_option("--model", model, "model.json")->required();
  density->add_option("--grid", grid, "Grid resolution R (S2: R x 2R)")->check(CLI::PositiveNumber);
  density->add_option("--out", out, "Output CSV")->required();
  density->add_flag("--binarize", binarize, "Threshold at the uniform density");
  density->add_option("--samples", samples, "Forward models: samples for the KDE");
  density->add_option("--bandwidth", bandwidth, "Forward models: KDE bandwidth (radians)");
  density->add_option("--seed", plain_seed, "Sampling seed");

  auto* geodesics = app.add_subcommand("geodesics", "Transport geodesics of a single-block model");
  geodesics->add_option("--model", model, "model.json")->required();
  geodesics->add_option("--grid-starts", starts, "Start grid resolution")->check(CLI::PositiveNumber);
  geodesics->add_option("--steps", steps, "Segments per polyline")->check(CLI::PositiveNumber);
  geodesics->add_option("--out", out, "Output CSV")->required();

  auto* sample = app.add_subcommand("sample", "Draw samples with their log-densities");
  sample->add_option("--model", model, "model.json")->required();
  sample->add_option("-n", n, "Number of samples");
  sample->add_option("--out", out, "Output CSV")->required();
  sample->add_option("--seed", plain_seed, "Sampling seed");

  auto* gradcheck = app.add_subcommand("gradcheck", "Compare gradients with central differences");
  gradcheck->add_option("--config", config, "Config JSON")->required();
  gradcheck->add_option("--batch", batch, "Batch size");
  gradcheck->add_option("--tol", tol, "Relative tolerance");
  gradcheck->add_option("--seed", seed, "Override the config seed");
  gradcheck->add_option("--out", out, "Also write the report here");

  auto* verify = app.add_subcommand("verify", "Run a verification oracle");
  verify->add_option("name", va.name, "involution | epsilon-net | pushforward | logdet-audit")->required();
  verify->add_option("--model", va.model, "model.json (pushforward, logdet-audit)");
  verify->add_option("--manifold", va.manifold, "epsilon-net manifold (S1|S2)");
  verify->add_option("--res", va.res, "Grid resolution (involution)")->check(CLI::PositiveNumber);
  verify->add_option("-n", va.n, "Samples (pushforward, logdet-audit)");
  verify->add_option("--seed", va.seed, "Seed");
  verify->add_option("--out", va.out, "Also write the report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(ctx, config, out, seed, loss);
    if (*density) return cmd_density(ctx, model, grid, out, binarize, samples, bandwidth, plain_seed);
    if (*geodesics) return cmd_geodesics(ctx, model, starts, steps, out);
    if (*sample) return cmd_sample(ctx, model, n, out, plain_seed);
    if (*gradcheck) return cmd_gradcheck(ctx, config, batch, tol, seed, out);
    if (*verify) return cmd_verify(ctx, va);
  } catch (const NonFiniteLoss& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const SingularJacobian& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

}  // namespace rcpm::cli
