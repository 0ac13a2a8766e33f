#include "rcpm/flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "kernels.hpp"
#include "rcpm/error.hpp"
#include "rcpm/parallel.hpp"
#include "rcpm/serialize.hpp"

namespace rcpm {

namespace {

constexpr double kMinLogdet = -27.631021115928547;  // log(1e-12), same cutoff as the audit

void basis_frame(const Manifold& m, const Point& x, detail::Frame& fr) {
  const int D = m.ambient_dim(), d = m.dim();
  fr.resize(D, d);
  std::copy(x.coords.begin(), x.coords.end(), fr.x.begin());
  const auto basis = m.tangent_basis(x);
  for (int b = 0; b < d; ++b) std::copy(basis[b].v.begin(), basis[b].v.end(), fr.dx.begin() + b * D);
}

}  // namespace

const char* to_string(Direction d) { return d == Direction::Forward ? "forward" : "backward"; }

Direction direction_from_string(const std::string& s) {
  if (s == "forward") return Direction::Forward;
  if (s == "backward") return Direction::Backward;
  throw ConfigError("direction must be 'forward' or 'backward', got '" + s + "'");
}

void Flow::validate() const {
  if (blocks.empty()) throw ConfigError("flow needs at least one block");
  for (const auto& b : blocks) {
    b.validate();
    if (!(b.manifold() == manifold)) throw ConfigError("block manifold differs from flow manifold");
  }
}

Point apply_block(const BlockPotential& b, const Point& x) {
  detail::BlockRecord rec;
  rec.in.resize(b.manifold().ambient_dim(), 0);
  std::copy(x.coords.begin(), x.coords.end(), rec.in.x.begin());
  detail::block_forward(b, rec);
  return Point(rec.out.x);
}

Point apply_flow(const Flow& f, const Point& x) {
  Point y = x;
  for (const auto& b : f.blocks) y = apply_block(b, y);
  return y;
}

double block_jacobian_logdet(const BlockPotential& b, const Point& x) {
  const Manifold& m = b.manifold();
  const int D = m.ambient_dim(), d = m.dim();
  detail::BlockRecord rec;
  basis_frame(m, x, rec.in);
  detail::block_forward(b, rec);
  const auto zero = [](double c) { return c == 0.0; };
  if (std::all_of(rec.v.begin(), rec.v.end(), zero) && std::all_of(rec.dv.begin(), rec.dv.end(), zero))
    return 0.0;
  const auto out_basis = m.tangent_basis(Point(rec.out.x));
  std::vector<double> J(static_cast<std::size_t>(d * d));
  for (int a = 0; a < d; ++a)
    for (int c = 0; c < d; ++c)
      J[a * d + c] = geom::dot(out_basis[a].v.data(), rec.out.dx.data() + c * D, D);
  const double ld = detail::lu_log_abs_det(std::move(J), d);
  if (!(ld >= kMinLogdet)) throw SingularJacobian("block Jacobian is singular");
  return ld;
}

double flow_logdet(const Flow& f, const Point& x) {
  double acc = 0.0;
  Point y = x;
  for (const auto& b : f.blocks) {
    acc += block_jacobian_logdet(b, y);
    y = apply_block(b, y);
  }
  return acc;
}

FlowEval evaluate_flow(const Flow& f, const Point& x) {
  const Manifold& m = f.manifold;
  const int d = m.dim();
  detail::BlockRecord rec;
  basis_frame(m, x, rec.in);
  const std::vector<double> e0 = rec.in.dx;
  for (const auto& b : f.blocks) {
    detail::block_forward(b, rec);
    std::swap(rec.in, rec.out);
  }
  FlowEval out;
  out.y = Point(rec.in.x);
  double ld = 0.0, ld0 = 0.0;
  detail::tangent_logdet(m, x.coords.data(), e0.data(), d, ld0, nullptr);
  if (!detail::tangent_logdet(m, rec.in.x.data(), rec.in.dx.data(), d, ld, nullptr) ||
      !(ld - ld0 >= kMinLogdet))
    throw SingularJacobian("flow Jacobian is singular");
  out.logdet = ld - ld0;
  out.sign = detail::oriented_sign(m, rec.in.x.data(), rec.in.dx.data(), d) *
             detail::oriented_sign(m, x.coords.data(), e0.data(), d);
  return out;
}

std::vector<Point> transport_geodesic(const BlockPotential& b, const Point& x, std::size_t steps) {
  if (steps == 0) throw ConfigError("geodesic needs at least one step");
  const Tangent g = grad_block_potential(b, x);
  std::vector<Point> out;
  out.reserve(steps + 1);
  std::vector<double> v(g.v.size());
  for (std::size_t k = 0; k <= steps; ++k) {
    const double l = static_cast<double>(k) / static_cast<double>(steps);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = -l * g.v[i];
    out.push_back(b.manifold().exp(x, v));
  }
  return out;
}

PushedDensity::PushedDensity(DensityPtr base, Flow flow) : base_(std::move(base)), flow_(std::move(flow)) {
  if (!base_) throw ConfigError("pushed density needs a base");
  if (!(base_->manifold() == flow_.manifold)) throw ConfigError("base and flow live on different manifolds");
}

bool PushedDensity::can_sample() const {
  return flow_.direction == Direction::Forward && base_->can_sample();
}

bool PushedDensity::has_log_density() const {
  return flow_.direction == Direction::Backward && base_->has_log_density();
}

double PushedDensity::log_density(const Point& y) const {
  if (flow_.direction != Direction::Backward)
    throw Error("pointwise density of a forward flow needs its inverse; use samples instead");
  try {
    const FlowEval e = evaluate_flow(flow_, y);
    return base_->log_density(e.y) + e.logdet;
  } catch (const CutLocus&) {
    return -std::numeric_limits<double>::infinity();
  } catch (const SingularJacobian&) {
    return -std::numeric_limits<double>::infinity();
  }
}

std::vector<Point> PushedDensity::sample(Rng& rng, std::size_t n) const {
  std::vector<Point> out;
  out.reserve(n);
  for (auto& s : sample_with_density(rng, n)) out.push_back(std::move(s.x));
  return out;
}

std::vector<PushedSample> PushedDensity::sample_with_density(Rng& rng, std::size_t n,
                                                             std::size_t* rejected) const {
  if (flow_.direction != Direction::Forward) throw Error("backward flows cannot be sampled");
  std::vector<PushedSample> out(n);
  std::vector<char> ok(n, 0);
  std::vector<Point> xs = base_->sample(rng, n);
  std::size_t rej = 0;
  std::vector<std::size_t> todo(n);
  for (std::size_t i = 0; i < n; ++i) todo[i] = i;
  while (!todo.empty()) {
    parallel_chunks(todo.size(), 256, [&](std::size_t, std::size_t lo, std::size_t hi) {
      for (std::size_t k = lo; k < hi; ++k) {
        const std::size_t i = todo[k];
        try {
          const FlowEval e = evaluate_flow(flow_, xs[i]);
          out[i] = {e.y, base_->log_density(xs[i]) - e.logdet};
          ok[i] = 1;
        } catch (const CutLocus&) {
          ok[i] = 0;
        } catch (const SingularJacobian&) {
          // collapsed transport: the pushed measure has an atom here
          out[i] = {apply_flow(flow_, xs[i]), std::numeric_limits<double>::infinity()};
          ok[i] = 1;
        }
      }
    });
    std::vector<std::size_t> again;
    for (std::size_t i : todo) {
      if (!ok[i]) {
        ++rej;
        xs[i] = base_->sample(rng, 1).front();
        again.push_back(i);
      }
    }
    todo.swap(again);
  }
  if (rejected) *rejected = rej;
  return out;
}

nlohmann::json PushedDensity::to_json() const {
  return {{"kind", kind()}, {"base", base_->to_json()}, {"flow", flow_to_json(flow_)}};
}

}  // namespace rcpm
