#include "rcpm/diffengine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "kernels.hpp"
#include "rcpm/error.hpp"
#include "rcpm/parallel.hpp"

namespace rcpm {

using nlohmann::json;

// -- gradient containers -----------------------------------------------------

void BlockGradient::reset_like(const BlockPotential& b) {
  const auto D = static_cast<std::size_t>(b.manifold().ambient_dim());
  d_centers.resize(b.layers.size());
  d_offsets.resize(b.layers.size());
  for (std::size_t k = 0; k < b.layers.size(); ++k) {
    d_centers[k].assign(b.layers[k].size() * D, 0.0);
    d_offsets[k].assign(b.layers[k].size(), 0.0);
  }
  d_mix_logits.assign(b.layers.size(), 0.0);
}

ParamGradient ParamGradient::zeros_like(const Flow& f) {
  ParamGradient g;
  g.blocks.resize(f.blocks.size());
  for (std::size_t j = 0; j < f.blocks.size(); ++j) g.blocks[j].reset_like(f.blocks[j]);
  return g;
}

namespace {

template <class F>
void for_each_vector(ParamGradient& g, F fn) {
  for (auto& b : g.blocks) {
    for (auto& v : b.d_centers) fn(v);
    for (auto& v : b.d_offsets) fn(v);
    fn(b.d_mix_logits);
  }
}

}  // namespace

void ParamGradient::add(const ParamGradient& o) {
  for (std::size_t j = 0; j < blocks.size(); ++j) {
    auto& a = blocks[j];
    const auto& b = o.blocks[j];
    for (std::size_t k = 0; k < a.d_centers.size(); ++k) {
      for (std::size_t i = 0; i < a.d_centers[k].size(); ++i) a.d_centers[k][i] += b.d_centers[k][i];
      for (std::size_t i = 0; i < a.d_offsets[k].size(); ++i) a.d_offsets[k][i] += b.d_offsets[k][i];
    }
    for (std::size_t k = 0; k < a.d_mix_logits.size(); ++k) a.d_mix_logits[k] += b.d_mix_logits[k];
  }
}

void ParamGradient::scale(double s) {
  for_each_vector(*this, [s](std::vector<double>& v) {
    for (auto& c : v) c *= s;
  });
}

bool ParamGradient::all_zero() const {
  bool zero = true;
  for_each_vector(const_cast<ParamGradient&>(*this), [&](std::vector<double>& v) {
    for (double c : v) zero = zero && c == 0.0;
  });
  return zero;
}

void ParamGradient::project_to_tangent(const Flow& f) {
  const int D = f.manifold.ambient_dim();
  const auto fac = f.manifold.factors();
  for (std::size_t j = 0; j < blocks.size(); ++j) {
    for (std::size_t k = 0; k < blocks[j].d_centers.size(); ++k) {
      const auto& pot = f.blocks[j].layers[k];
      auto& g = blocks[j].d_centers[k];
      for (std::size_t i = 0; i < pot.size(); ++i) {
        const double* y = pot.centers.data() + i * D;
        double* gi = g.data() + i * D;
        for (const auto& fc : fac) {
          const double c = geom::dot(gi + fc.offset, y + fc.offset, fc.ambient());
          for (int a = 0; a < fc.ambient(); ++a) gi[fc.offset + a] -= c * y[fc.offset + a];
        }
      }
    }
  }
}

// -- loss specs --------------------------------------------------------------

LossSpec LossSpec::reverse_kl(const Density& base, const Density& target) {
  LossSpec s;
  s.kind = LossKind::ReverseKL;
  s.base = &base;
  s.target = &target;
  return s;
}

LossSpec LossSpec::nll(const Density& base) {
  LossSpec s;
  s.kind = LossKind::NLL;
  s.base = &base;
  return s;
}

LossSpec LossSpec::from_function(CustomLoss f) {
  LossSpec s;
  s.kind = LossKind::Custom;
  s.custom = std::move(f);
  return s;
}

namespace {

constexpr std::size_t kChunk = 16;

struct Workspace {
  std::vector<detail::BlockRecord> recs;
  std::vector<double> ldbar;
  std::vector<double> sbar, dsbar, xbar, dxbar;
};

// Pushes x and its tangent basis through every block. Returns false on a cut-locus hit.
bool sample_forward(const Flow& f, const Point& x, Workspace& ws, double& logdet, bool want_inverse) {
  const Manifold& m = f.manifold;
  const int D = m.ambient_dim(), d = m.dim();
  ws.recs.resize(f.blocks.size());
  auto& fr = ws.recs.front().in;
  fr.resize(D, d);
  std::copy(x.coords.begin(), x.coords.end(), fr.x.begin());
  const auto basis = m.tangent_basis(x);
  for (int b = 0; b < d; ++b) std::copy(basis[b].v.begin(), basis[b].v.end(), fr.dx.begin() + b * D);
  try {
    for (std::size_t j = 0; j < f.blocks.size(); ++j) {
      if (j > 0) ws.recs[j].in = ws.recs[j - 1].out;
      detail::block_forward(f.blocks[j], ws.recs[j]);
    }
  } catch (const CutLocus&) {
    return false;
  }
  const auto& out = ws.recs.back().out;
  double ld = 0.0, ld0 = 0.0;
  // subtracting the input term makes the identity map give exactly 0
  detail::tangent_logdet(m, x.coords.data(), fr.dx.data(), d, ld0, nullptr);
  if (!detail::tangent_logdet(m, out.x.data(), out.dx.data(), d, ld, want_inverse ? &ws.ldbar : nullptr)) {
    logdet = -std::numeric_limits<double>::infinity();
  } else {
    logdet = ld - ld0;
  }
  return true;
}

SampleLoss sample_loss(const LossSpec& spec, const Point& x, const Point& s, double logdet,
                       bool want_grad) {
  SampleLoss out;
  switch (spec.kind) {
    case LossKind::ReverseKL:
      out.value = spec.base->log_density(x) - logdet - spec.target->log_density(s);
      out.d_logdet = -1.0;
      if (want_grad) {
        out.d_point = spec.target->grad_log_density(s);
        for (auto& c : out.d_point) c = -c;
      }
      break;
    case LossKind::NLL:
      out.value = -spec.base->log_density(s) - logdet;
      out.d_logdet = -1.0;
      if (want_grad) {
        out.d_point = spec.base->grad_log_density(s);
        for (auto& c : out.d_point) c = -c;
      }
      break;
    case LossKind::Custom:
      out = spec.custom(x, s, logdet);
      break;
  }
  return out;
}

void check_spec(const LossSpec& spec) {
  if (spec.kind == LossKind::ReverseKL && (!spec.base || !spec.target))
    throw ConfigError("reverse KL needs base and target densities");
  if (spec.kind == LossKind::NLL && !spec.base) throw ConfigError("NLL needs a base density");
  if (spec.kind == LossKind::Custom && !spec.custom) throw ConfigError("custom loss is empty");
}

struct ChunkResult {
  double loss = 0.0;
  std::size_t used = 0, rejected = 0;
  ParamGradient grad;
  std::ptrdiff_t bad = -1;
  std::string what;
};

std::vector<ChunkResult> run_batch(const Flow& f, const LossSpec& spec, std::span<const Point> batch,
                                   bool want_grad) {
  check_spec(spec);
  if (batch.empty()) throw InvalidBatch("empty batch");
  const std::size_t nchunks = chunk_count(batch.size(), kChunk);
  std::vector<ChunkResult> res(nchunks);
  const Manifold& m = f.manifold;
  const int D = m.ambient_dim(), d = m.dim();
  parallel_chunks(batch.size(), kChunk, [&](std::size_t c, std::size_t lo, std::size_t hi) {
    ChunkResult& r = res[c];
    if (want_grad) r.grad = ParamGradient::zeros_like(f);
    Workspace ws;
    for (std::size_t i = lo; i < hi; ++i) {
      const Point& x = batch[i];
      double logdet = 0.0;
      if (!sample_forward(f, x, ws, logdet, want_grad)) {
        ++r.rejected;
        continue;
      }
      const auto& out = ws.recs.back().out;
      const Point s(out.x);
      SampleLoss sl = sample_loss(spec, x, s, logdet, want_grad);
      if (!std::isfinite(sl.value)) {
        if (r.bad < 0) {
          r.bad = static_cast<std::ptrdiff_t>(i);
          r.what = "non-finite loss term " + std::to_string(sl.value) + " at batch sample " +
                   std::to_string(i);
        }
        continue;
      }
      r.loss += sl.value;
      ++r.used;
      if (!want_grad) continue;

      // adjoints of the final point and its tangent columns
      ws.sbar.assign(static_cast<std::size_t>(D), 0.0);
      if (!sl.d_point.empty()) std::copy(sl.d_point.begin(), sl.d_point.end(), ws.sbar.begin());
      ws.dsbar.assign(static_cast<std::size_t>(D * d), 0.0);
      if (sl.d_logdet != 0.0) {
        for (int c = 0; c < D * d; ++c) ws.dsbar[c] = sl.d_logdet * ws.ldbar[c];
      }
      for (std::size_t j = f.blocks.size(); j-- > 0;) {
        ws.xbar.assign(static_cast<std::size_t>(D), 0.0);
        ws.dxbar.assign(static_cast<std::size_t>(D * d), 0.0);
        detail::block_backward(f.blocks[j], ws.recs[j], ws.sbar.data(), ws.dsbar.data(),
                               ws.xbar.data(), ws.dxbar.data(), r.grad.blocks[j]);
        std::swap(ws.sbar, ws.xbar);
        std::swap(ws.dsbar, ws.dxbar);
      }
    }
  });
  for (const auto& r : res)
    if (r.bad >= 0) throw NonFiniteLoss(r.what, r.bad);
  return res;
}

}  // namespace

LossResult loss_and_grad(const Flow& f, const LossSpec& spec, std::span<const Point> batch) {
  auto res = run_batch(f, spec, batch, true);
  LossResult out;
  out.grad = ParamGradient::zeros_like(f);
  for (auto& r : res) {
    out.loss += r.loss;
    out.used += r.used;
    out.rejected += r.rejected;
    out.grad.add(r.grad);
  }
  if (out.used == 0) throw InvalidBatch("every batch sample hit a cut locus");
  out.loss /= static_cast<double>(out.used);
  out.grad.scale(1.0 / static_cast<double>(out.used));
  return out;
}

double loss_value(const Flow& f, const LossSpec& spec, std::span<const Point> batch) {
  auto res = run_batch(f, spec, batch, false);
  double loss = 0.0;
  std::size_t used = 0;
  for (const auto& r : res) {
    loss += r.loss;
    used += r.used;
  }
  if (used == 0) throw InvalidBatch("every batch sample hit a cut locus");
  return loss / static_cast<double>(used);
}

// -- gradient check ------------------------------------------------------------

json GradCheckReport::to_json() const {
  json cls = json::array();
  for (const auto& c : classes) {
    cls.push_back({{"name", c.name},
                   {"count", c.count},
                   {"max_rel_error", c.max_rel_error},
                   {"worst", c.worst},
                   {"identically_zero", c.identically_zero}});
  }
  return {{"tol", tol}, {"step", step}, {"pass", pass}, {"worst", worst}, {"classes", cls}};
}

GradCheckReport grad_check(const Flow& f, const LossSpec& spec, std::span<const Point> batch,
                           double tol, double h, const ParamGradient* given) {
  ParamGradient g = given ? *given : loss_and_grad(f, spec, batch).grad;
  GradCheckReport rep;
  rep.tol = tol;
  rep.step = h;
  rep.classes = {{"center", 0, 0.0, "", true},
                 {"alpha", 0, 0.0, "", true},
                 {"mix_logit", 0, 0.0, "", true}};
  const double floor = 1e-7 / tol;
  double worst_err = -1.0;
  Flow work = f;
  const int D = f.manifold.ambient_dim();

  auto record = [&](GradCheckClass& c, const std::string& name, double analytic, double fd) {
    const double err = std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), floor});
    ++c.count;
    if (analytic != 0.0) c.identically_zero = false;
    if (c.worst.empty() || err > c.max_rel_error) {
      c.max_rel_error = err;
      c.worst = name;
    }
    if (err > worst_err) {
      worst_err = err;
      rep.worst = name;
    }
  };
  auto central = [&](auto&& set) {
    set(+1.0);
    const double lp = loss_value(work, spec, batch);
    set(-1.0);
    const double lm = loss_value(work, spec, batch);
    set(0.0);
    return (lp - lm) / (2.0 * h);
  };

  for (std::size_t j = 0; j < f.blocks.size(); ++j) {
    for (std::size_t k = 0; k < f.blocks[j].layers.size(); ++k) {
      const auto& pot = f.blocks[j].layers[k];
      auto& wpot = work.blocks[j].layers[k];
      const std::string prefix = "block" + std::to_string(j) + "/layer" + std::to_string(k);
      for (std::size_t i = 0; i < pot.size(); ++i) {
        const Point y = pot.center_point(i);
        const auto basis = f.manifold.tangent_basis(y);
        for (std::size_t a = 0; a < basis.size(); ++a) {
          const auto& e = basis[a].v;
          const double fd = central([&](double sgn) {
            std::vector<double> raw(y.coords);
            for (int c = 0; c < D; ++c) raw[c] += sgn * h * e[c];
            const Point p = sgn == 0.0 ? y : f.manifold.project(raw);
            std::copy(p.coords.begin(), p.coords.end(), wpot.centers.begin() + i * D);
          });
          double analytic = 0.0;
          for (int c = 0; c < D; ++c) analytic += g.blocks[j].d_centers[k][i * D + c] * e[c];
          record(rep.classes[0], prefix + "/center" + std::to_string(i) + "/dir" + std::to_string(a),
                 analytic, fd);
        }
        const double a0 = pot.offsets[i];
        const double fd = central([&](double sgn) { wpot.offsets[i] = a0 + sgn * h; });
        wpot.offsets[i] = a0;
        record(rep.classes[1], prefix + "/alpha" + std::to_string(i), g.blocks[j].d_offsets[k][i], fd);
      }
      const double z0 = f.blocks[j].mix_logits[k];
      if (std::isfinite(z0)) {
        const double fd = central([&](double sgn) { work.blocks[j].mix_logits[k] = z0 + sgn * h; });
        work.blocks[j].mix_logits[k] = z0;
        record(rep.classes[2], prefix + "/mix_logit", g.blocks[j].d_mix_logits[k], fd);
      }
    }
  }
  rep.pass = true;
  for (const auto& c : rep.classes)
    if (c.max_rel_error > tol) rep.pass = false;
  return rep;
}

}  // namespace rcpm
