#include "oodflow/flow.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

#include "oodflow/error.hpp"
#include "oodflow/kernels.hpp"
#include "oodflow/rng.hpp"

namespace oodflow {

void Linear::resize(size_t in_, size_t out_) {
  in = in_;
  out = out_;
  w.assign(in * out, 0.0f);
  wt.assign(in * out, 0.0f);
  b.assign(out, 0.0f);
}

void Linear::refresh() { transpose(wt.data(), w.data(), out, in); }

void Coupling::rebuild_index() {
  pass_idx.clear();
  change_idx.clear();
  for (uint32_t d = 0; d < mask.size(); ++d)
    (mask[d] ? pass_idx : change_idx).push_back(d);
  if (pass_idx.empty() || change_idx.empty())
    throw_error(ErrorKind::validation,
                "coupling mask must keep and transform at least one dim each");
}

size_t FlowModel::param_count() const {
  size_t n = 0;
  visit_params(*this, [&](const std::vector<float>& p) { n += p.size(); });
  return n;
}

bool FlowModel::all_initialized() const {
  for (const auto& an : actnorms)
    if (!an.initialized) return false;
  return true;
}

void refresh_derived(FlowModel& m) {
  for (auto& c : m.couplings) {
    c.rebuild_index();
    for (auto* net : {&c.s_net, &c.t_net})
      for (auto& l : net->layers) l.refresh();
  }
}

namespace {

Mlp make_mlp(size_t in, const std::vector<uint32_t>& hidden, size_t out,
             Rng& rng) {
  Mlp net;
  size_t prev = in;
  for (uint32_t h : hidden) {
    Linear l;
    l.resize(prev, h);
    const float bound = 1.0f / std::sqrt(static_cast<float>(prev));
    for (auto& x : l.w)
      x = static_cast<float>((2.0 * rng.uniform() - 1.0) * bound);
    l.refresh();
    net.layers.push_back(std::move(l));
    prev = h;
  }
  Linear last;
  last.resize(prev, out);  // stays zero: coupling starts as the identity
  net.layers.push_back(std::move(last));
  return net;
}

}  // namespace

FlowModel make_flow(uint32_t dim, uint32_t n_blocks,
                    const std::vector<uint32_t>& hidden, float clamp,
                    uint64_t seed) {
  if (dim == 0) throw_error(ErrorKind::argument, "flow dim must be positive");
  if (n_blocks > 0 && dim < 2)
    throw_error(ErrorKind::argument,
                "coupling blocks need dim >= 2 (got dim 1); use 0 blocks for "
                "a plain standard normal");
  if (!(clamp > 0.0f))
    throw_error(ErrorKind::argument, "clamp must be positive");
  for (uint32_t h : hidden)
    if (h == 0) throw_error(ErrorKind::argument, "zero-width hidden layer");

  FlowModel m;
  m.dim = dim;
  m.clamp = clamp;
  m.hidden = hidden;
  Rng rng(seed);
  const uint32_t d_half = (dim + 1) / 2;  // ceil(D/2) pass-through dims
  for (uint32_t k = 0; k < n_blocks; ++k) {
    ActNorm an;
    an.log_scale.assign(dim, 0.0f);
    an.bias.assign(dim, 0.0f);
    m.actnorms.push_back(std::move(an));

    Coupling c;
    c.clamp = clamp;
    c.mask.assign(dim, 0);
    for (uint32_t d = 0; d < dim; ++d)
      c.mask[d] = ((d < d_half) == (k % 2 == 0)) ? 1 : 0;
    c.rebuild_index();
    c.s_net = make_mlp(c.pass_idx.size(), hidden, c.change_idx.size(), rng);
    c.t_net = make_mlp(c.pass_idx.size(), hidden, c.change_idx.size(), rng);
    m.couplings.push_back(std::move(c));
  }
  return m;
}

namespace {

void linear_forward(const Linear& l, const MatF& x, MatF& y) {
  reshape(y, x.rows, l.out);
#pragma omp parallel for schedule(static)
  for (size_t r = 0; r < x.rows; ++r)
    std::memcpy(y.row(r), l.b.data(), l.out * sizeof(float));
  gemm_accum(y.v.data(), x.v.data(), l.wt.data(), x.rows, l.out, l.in, l.out,
             x.cols, l.out);
}

void relu_inplace(MatF& x) {
#pragma omp parallel for schedule(static)
  for (size_t r = 0; r < x.rows; ++r) {
    float* p = x.row(r);
    for (size_t j = 0; j < x.cols; ++j) p[j] = p[j] > 0.0f ? p[j] : 0.0f;
  }
}

// Runs the net; when cache is non-null the post-activation hidden outputs
// and final output are kept for the backward pass. The two scratch buffers
// ping-pong so a layer never reads the matrix it is writing.
const MatF& mlp_forward(const Mlp& net, const MatF& x, MlpCache* cache,
                        MatF& scratch_a, MatF& scratch_b) {
  const MatF* cur = &x;
  bool flip = false;
  if (cache) cache->act.resize(net.layers.size() - 1);
  for (size_t i = 0; i + 1 < net.layers.size(); ++i) {
    MatF* dst = cache ? &cache->act[i] : (flip ? &scratch_b : &scratch_a);
    linear_forward(net.layers[i], *cur, *dst);
    relu_inplace(*dst);
    cur = dst;
    flip = !flip;
  }
  MatF* out = cache ? &cache->out : (flip ? &scratch_b : &scratch_a);
  linear_forward(net.layers.back(), *cur, *out);
  return *out;
}

void gather_cols(const MatF& x, const std::vector<uint32_t>& idx, MatF& out) {
  reshape(out, x.rows, idx.size());
#pragma omp parallel for schedule(static)
  for (size_t r = 0; r < x.rows; ++r) {
    const float* src = x.row(r);
    float* dst = out.row(r);
    for (size_t j = 0; j < idx.size(); ++j) dst[j] = src[idx[j]];
  }
}

void accumulate_logdet(std::vector<double>& logdet, size_t n) {
  if (logdet.size() != n) logdet.assign(n, 0.0);
}

}  // namespace

void actnorm_apply(const ActNorm& an, LayerDir dir, const MatF& x, MatF& y,
                   std::vector<double>& logdet) {
  if (!an.initialized)
    throw_error(ErrorKind::state,
                "actnorm layer used before data-dependent init");
  x.require_width(an.bias.size(), "actnorm input");
  const size_t dim = an.bias.size();
  accumulate_logdet(logdet, x.rows);

  std::vector<float> scale(dim);
  double ldet = 0.0;
  for (size_t d = 0; d < dim; ++d) {
    ldet += an.log_scale[d];
    scale[d] = std::exp(dir == LayerDir::forward ? an.log_scale[d]
                                                 : -an.log_scale[d]);
  }
  if (dir == LayerDir::inverse) ldet = -ldet;

  reshape(y, x.rows, dim);
#pragma omp parallel for schedule(static)
  for (size_t r = 0; r < x.rows; ++r) {
    const float* xr = x.row(r);
    float* yr = y.row(r);
    if (dir == LayerDir::forward) {
      for (size_t d = 0; d < dim; ++d)
        yr[d] = (xr[d] + an.bias[d]) * scale[d];
    } else {
      for (size_t d = 0; d < dim; ++d) yr[d] = xr[d] * scale[d] - an.bias[d];
    }
  }
  for (size_t r = 0; r < x.rows; ++r) logdet[r] += ldet;
}

// Shared core so the cached training pass and the plain scoring pass stay on
// one code path. `cache` may be null.
static void coupling_run(const Coupling& c, LayerDir dir, const MatF& x,
                         MatF& y, std::vector<double>& logdet,
                         BlockCache* cache) {
  x.require_width(c.mask.size(), "coupling input");
  const size_t n_change = c.change_idx.size();
  accumulate_logdet(logdet, x.rows);

  MatF pass_local;
  MatF& pass = cache ? cache->pass : pass_local;
  gather_cols(x, c.pass_idx, pass);

  MlpCache* sc = cache ? &cache->s_cache : nullptr;
  MlpCache* tc = cache ? &cache->t_cache : nullptr;
  MatF s_scratch_a, s_scratch_b, t_scratch_a, t_scratch_b;
  const MatF& s_raw = mlp_forward(c.s_net, pass, sc, s_scratch_a, s_scratch_b);
  const MatF& t_val = mlp_forward(c.t_net, pass, tc, t_scratch_a, t_scratch_b);

  MatF s_eff_local;
  MatF& s_eff = cache ? cache->s_eff : s_eff_local;
  reshape(s_eff, x.rows, n_change);
  const float cl = c.clamp;
#pragma omp parallel for schedule(static)
  for (size_t r = 0; r < x.rows; ++r) {
    const float* sr = s_raw.row(r);
    float* se = s_eff.row(r);
    for (size_t j = 0; j < n_change; ++j)
      se[j] = cl * std::tanh(sr[j] / cl);
  }

  y = x;  // pass-through partition unchanged
  std::vector<double> dsum(x.rows);
#pragma omp parallel for schedule(static)
  for (size_t r = 0; r < x.rows; ++r) {
    const float* se = s_eff.row(r);
    const float* tr = t_val.row(r);
    const float* xr = x.row(r);
    float* yr = y.row(r);
    double s_sum = 0.0;
    for (size_t j = 0; j < n_change; ++j) {
      const uint32_t d = c.change_idx[j];
      if (dir == LayerDir::forward)
        yr[d] = xr[d] * std::exp(se[j]) + tr[j];
      else
        yr[d] = (xr[d] - tr[j]) * std::exp(-se[j]);
      s_sum += se[j];
    }
    dsum[r] = dir == LayerDir::forward ? s_sum : -s_sum;
  }
  for (size_t r = 0; r < x.rows; ++r) logdet[r] += dsum[r];
}

void coupling_apply(const Coupling& c, LayerDir dir, const MatF& x, MatF& y,
                    std::vector<double>& logdet) {
  coupling_run(c, dir, x, y, logdet, nullptr);
}

TransformResult flow_transform(const FlowModel& m, const MatF& x,
                               FlowDir dir) {
  x.require_width(m.dim, "flow input");
  if (!m.all_initialized())
    throw_error(ErrorKind::state,
                "flow has uninitialized actnorm layers; train or load a "
                "checkpoint first");

  TransformResult res;
  res.y = x;
  res.logdet.assign(x.rows, 0.0);
  MatF tmp;
  if (dir == FlowDir::to_latent) {
    for (size_t k = 0; k < m.blocks(); ++k) {
      actnorm_apply(m.actnorms[k], LayerDir::forward, res.y, tmp, res.logdet);
      coupling_run(m.couplings[k], LayerDir::inverse, tmp, res.y, res.logdet,
                   nullptr);
    }
  } else {
    for (size_t k = m.blocks(); k-- > 0;) {
      coupling_run(m.couplings[k], LayerDir::forward, res.y, tmp, res.logdet,
                   nullptr);
      actnorm_apply(m.actnorms[k], LayerDir::inverse, tmp, res.y, res.logdet);
    }
  }
  return res;
}

std::vector<double> log_prob(const FlowModel& m, const MatF& x) {
  for (float v : x.v)
    if (!std::isfinite(v))
      throw_error(ErrorKind::validation, "log_prob: non-finite input value");
  TransformResult tr = flow_transform(m, x, FlowDir::to_latent);
  const double base = -0.5 * double(m.dim) * std::log(2.0 * std::numbers::pi);
  std::vector<double> lp(x.rows);
#pragma omp parallel for schedule(static)
  for (size_t r = 0; r < x.rows; ++r) {
    const float* zr = tr.y.row(r);
    double sq = 0.0;
    for (size_t d = 0; d < m.dim; ++d) sq += double(zr[d]) * double(zr[d]);
    lp[r] = base - 0.5 * sq + tr.logdet[r];
  }
  return lp;
}

std::vector<double> log_prob_chunked(const FlowModel& m, const MatF& x,
                                     size_t chunk) {
  std::vector<double> out(x.rows);
  for (size_t start = 0; start < x.rows; start += chunk) {
    const size_t n = std::min(chunk, x.rows - start);
    MatF part(n, x.cols);
    std::memcpy(part.v.data(), x.row(start), n * x.cols * sizeof(float));
    std::vector<double> lp = log_prob(m, part);
    std::copy(lp.begin(), lp.end(), out.begin() + start);
  }
  return out;
}

MatF sample(const FlowModel& m, size_t n, uint64_t seed) {
  if (n == 0) throw_error(ErrorKind::argument, "sample: n must be >= 1");
  MatF z(n, m.dim);
  Rng rng(seed);
  for (auto& v : z.v) v = static_cast<float>(rng.gaussian());
  return flow_transform(m, z, FlowDir::to_data).y;
}

void actnorm_init(FlowModel& m, const MatF& batch) {
  batch.require_width(m.dim, "actnorm init batch");
  if (batch.rows == 0)
    throw_error(ErrorKind::argument, "actnorm init needs a non-empty batch");

  MatF cur = batch;
  MatF tmp;
  std::vector<double> scratch_logdet;
  for (size_t k = 0; k < m.blocks(); ++k) {
    ActNorm& an = m.actnorms[k];
    const size_t dim = m.dim;
    const double inv_n = 1.0 / double(cur.rows);
#pragma omp parallel for schedule(static)
    for (size_t d = 0; d < dim; ++d) {
      double mean = 0.0;
      for (size_t r = 0; r < cur.rows; ++r) mean += cur.at(r, d);
      mean *= inv_n;
      double var = 0.0;
      for (size_t r = 0; r < cur.rows; ++r) {
        const double c = cur.at(r, d) - mean;
        var += c * c;
      }
      const double sd = std::max(std::sqrt(var * inv_n), 1e-6);
      an.bias[d] = static_cast<float>(-mean);
      an.log_scale[d] = static_cast<float>(-std::log(sd));
    }
    an.initialized = true;

    scratch_logdet.clear();
    actnorm_apply(an, LayerDir::forward, cur, tmp, scratch_logdet);
    scratch_logdet.clear();
    coupling_run(m.couplings[k], LayerDir::inverse, tmp, cur, scratch_logdet,
                 nullptr);
  }
}

void flow_forward_cached(const FlowModel& m, const MatF& x, ForwardCache& fc) {
  x.require_width(m.dim, "flow input");
  if (!m.all_initialized())
    throw_error(ErrorKind::state, "forward pass before actnorm init");
  fc.blocks.resize(m.blocks());
  fc.logdet.assign(x.rows, 0.0);
  const MatF* cur = &x;
  for (size_t k = 0; k < m.blocks(); ++k) {
    BlockCache& bc = fc.blocks[k];
    actnorm_apply(m.actnorms[k], LayerDir::forward, *cur, bc.a, fc.logdet);
    coupling_run(m.couplings[k], LayerDir::inverse, bc.a, bc.v, fc.logdet,
                 &bc);
    cur = &bc.v;
  }
  fc.z = *cur;  // copy; for K=0 this is the input itself
}

}  // namespace oodflow
