#include "rcpm/serialize.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rcpm/error.hpp"

namespace rcpm {

using nlohmann::json;

json manifold_to_json(const Manifold& m) {
  if (m.kind() == Manifold::Kind::Sphere) return {{"kind", "sphere"}, {"n", m.sphere_n()}};
  json parts = json::array();
  for (const auto& p : m.parts()) parts.push_back(manifold_to_json(p));
  return {{"kind", "product"}, {"factors", parts}};
}

Manifold manifold_from_name(const std::string& name) {
  if (name == "S1" || name == "circle") return Manifold::sphere(1);
  if (name == "S2" || name == "sphere") return Manifold::sphere(2);
  if (name == "T2" || name == "torus") return Manifold::torus(2);
  if (name.size() > 1 && name[0] == 'S') return Manifold::sphere(std::stoi(name.substr(1)));
  if (name.size() > 1 && name[0] == 'T') return Manifold::torus(std::stoi(name.substr(1)));
  throw ConfigError("unknown manifold '" + name + "'");
}

Manifold manifold_from_json(const json& j) {
  if (j.is_string()) return manifold_from_name(j.get<std::string>());
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "sphere") return Manifold::sphere(j.at("n").get<int>());
  if (kind == "product") {
    std::vector<Manifold> parts;
    for (const auto& f : j.at("factors")) parts.push_back(manifold_from_json(f));
    return Manifold::product(std::move(parts));
  }
  throw ConfigError("unknown manifold kind '" + kind + "'");
}

json potential_to_json(const DiscretePotential& p) {
  json comps = json::array();
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto c = p.center(i);
    comps.push_back({{"y", std::vector<double>(c.begin(), c.end())}, {"alpha", p.offsets[i]}});
  }
  return {{"gamma", p.gamma}, {"components", comps}};
}

DiscretePotential potential_from_json(const json& j, const Manifold& m) {
  std::vector<Point> ys;
  std::vector<double> alphas;
  for (const auto& c : j.at("components")) {
    ys.emplace_back(c.at("y").get<std::vector<double>>());
    alphas.push_back(c.at("alpha").get<double>());
  }
  return DiscretePotential(m, std::move(ys), std::move(alphas), j.value("gamma", 0.0));
}

json block_to_json(const BlockPotential& b) {
  json layers = json::array();
  std::vector<double> w;
  for (std::size_t k = 0; k < b.layers.size(); ++k) {
    layers.push_back(potential_to_json(b.layers[k]));
    w.push_back(b.mix_weight(k));
  }
  return {{"layers", layers},
          {"weights", w},
          {"identity_relu", b.identity_relu},
          {"relu_gamma", b.relu_gamma}};
}

BlockPotential block_from_json(const json& j, const Manifold& m) {
  BlockPotential b;
  for (const auto& l : j.at("layers")) b.layers.push_back(potential_from_json(l, m));
  b.mix_logits.assign(b.layers.size(), 0.0);
  const auto w = j.value("weights", std::vector<double>(b.layers.size(), 0.0));
  if (w.size() != b.layers.size()) throw ConfigError("one weight per layer expected");
  for (std::size_t k = 0; k < w.size(); ++k) b.set_mix_weight(k, w[k]);
  b.identity_relu = j.value("identity_relu", false);
  b.relu_gamma = j.value("relu_gamma", 0.0);
  b.validate();
  return b;
}

json flow_to_json(const Flow& f, const json& meta) {
  json blocks = json::array();
  for (const auto& b : f.blocks) blocks.push_back(block_to_json(b));
  return {{"manifold", manifold_to_json(f.manifold)},
          {"blocks", blocks},
          {"direction", to_string(f.direction)},
          {"meta", meta}};
}

Flow flow_from_json(const json& j) {
  Flow f;
  try {
    f.manifold = manifold_from_json(j.at("manifold"));
    for (const auto& b : j.at("blocks")) f.blocks.push_back(block_from_json(b, f.manifold));
    f.direction = direction_from_string(j.value("direction", std::string("forward")));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed model: ") + e.what());
  }
  f.validate();
  return f;
}

std::vector<Point> read_points_csv(const std::string& path, const Manifold& m) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open point file '" + path + "'");
  const std::size_t D = static_cast<std::size_t>(m.ambient_dim());
  std::vector<Point> pts;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    for (char& c : line)
      if (c == ',' || c == ';' || c == '\t') c = ' ';
    std::istringstream ss(line);
    std::vector<double> row;
    double v;
    while (row.size() < D && ss >> v) row.push_back(v);
    if (row.size() < D) {
      if (pts.empty()) continue;  // header
      throw ConfigError("short row in '" + path + "'");
    }
    pts.push_back(m.project(row));
  }
  if (pts.empty()) throw ConfigError("no points in '" + path + "'");
  return pts;
}

DensityPtr density_from_json(const json& j, const Manifold& m) {
  const json spec = j.is_string() ? json{{"kind", j.get<std::string>()}} : j;
  const std::string kind = spec.at("kind").get<std::string>();
  auto need = [&](bool ok) {
    if (!ok) throw ConfigError("density '" + kind + "' is not defined on " + m.name());
  };
  if (kind == "uniform") return std::make_shared<UniformDensity>(m);
  if (kind == "sphere_mixture4") {
    need(m.is_sphere(2));
    return sphere_mixture4(spec.value("scale", 0.3));
  }
  if (kind == "wrapped_gaussian_mixture") {
    std::vector<Point> c;
    for (const auto& p : spec.at("centers")) c.push_back(m.project(p.get<std::vector<double>>()));
    const auto n = c.size();
    auto scales = spec.value("scales", std::vector<double>(n, 0.3));
    auto weights = spec.value("weights", std::vector<double>(n, 1.0 / static_cast<double>(n)));
    return std::make_shared<WrappedGaussianMixture>(m, std::move(c), std::move(scales),
                                                    std::move(weights));
  }
  if (kind == "sphere_checkerboard") {
    need(m.is_sphere(2));
    return std::make_shared<SphereCheckerboard>();
  }
  if (kind == "torus_3modal") {
    need(m.is_torus());
    return std::make_shared<Torus3Modal>();
  }
  if (kind == "points" || kind == "kde") {
    std::vector<Point> pts;
    if (spec.contains("file")) {
      pts = read_points_csv(spec.at("file").get<std::string>(), m);
    } else {
      for (const auto& p : spec.at("points")) pts.push_back(m.project(p.get<std::vector<double>>()));
    }
    if (kind == "points") return std::make_shared<EmpiricalDensity>(m, std::move(pts));
    return std::make_shared<KdeDensity>(m, std::move(pts), spec.value("bandwidth", 0.2));
  }
  throw ConfigError("unknown density kind '" + kind + "'");
}

std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json_file(const std::string& path) {
  const std::string text = read_text_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("invalid JSON in '" + path + "': " + e.what());
  }
}

void write_file_atomic(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write '" + tmp + "'");
    out << contents;
    if (!out) throw ConfigError("write failed for '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw ConfigError("cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
}

}  // namespace rcpm
