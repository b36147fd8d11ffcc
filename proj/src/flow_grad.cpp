#include <cmath>
#include <cstring>
#include <numbers>

#include "oodflow/error.hpp"
#include "oodflow/flow.hpp"
#include "oodflow/kernels.hpp"

namespace oodflow {

Gradients make_gradients(const FlowModel& m) {
  Gradients g;
  g.blocks.resize(m.blocks());
  for (size_t k = 0; k < m.blocks(); ++k) {
    BlockGrad& bg = g.blocks[k];
    bg.log_scale.assign(m.dim, 0.0f);
    bg.bias.assign(m.dim, 0.0f);
    for (auto [net, grad] : {std::pair{&m.couplings[k].s_net, &bg.s},
                             std::pair{&m.couplings[k].t_net, &bg.t}}) {
      grad->layers.resize(net->layers.size());
      for (size_t i = 0; i < net->layers.size(); ++i) {
        grad->layers[i].w.assign(net->layers[i].w.size(), 0.0f);
        grad->layers[i].b.assign(net->layers[i].b.size(), 0.0f);
      }
    }
  }
  return g;
}

void Gradients::zero() {
  visit_grads(*this, [](std::vector<float>& a) {
    std::fill(a.begin(), a.end(), 0.0f);
  });
}

double nll_loss(const FlowModel& m, const MatF& batch) {
  if (batch.rows == 0)
    throw_error(ErrorKind::argument, "nll_loss: empty batch");
  std::vector<double> lp = log_prob(m, batch);
  double s = 0.0;
  for (double v : lp) s += v;
  return -s / double(batch.rows);
}

namespace {

// Column sums with 64-bit accumulators; deterministic (each column owned by
// one thread, rows summed in order).
void colsum_into(const MatF& g, std::vector<float>& out) {
#pragma omp parallel for schedule(static)
  for (size_t j = 0; j < g.cols; ++j) {
    double acc = 0.0;
    for (size_t r = 0; r < g.rows; ++r) acc += g.at(r, j);
    out[j] = static_cast<float>(acc);
  }
}

// Reverse-mode pass through one MLP. d_out is the loss gradient at the final
// linear output; its contents are consumed. Parameter gradients are
// overwritten; d_input receives the gradient at the net input. The dx chain
// ping-pongs between ts.bk_a/bk_b so steady-state runs allocation-free.
void mlp_backward(const Mlp& net, const MlpCache& cache, const MatF& input,
                  MatF& d_out, MlpGrad& grads, MatF& d_input,
                  TrainScratch& ts) {
  MatF* cur = &d_out;
  for (size_t i = net.layers.size(); i-- > 0;) {
    const Linear& l = net.layers[i];
    const MatF& x_i = (i == 0) ? input : cache.act[i - 1];
    LinearGrad& lg = grads.layers[i];

    colsum_into(*cur, lg.b);
    ts.tr.resize(cur->rows * cur->cols);
    transpose(ts.tr.data(), cur->v.data(), cur->rows, cur->cols);
    gemm_set(lg.w.data(), ts.tr.data(), x_i.v.data(), l.out, l.in, cur->rows,
             l.in, cur->rows, x_i.cols);

    MatF* nxt = (cur == &ts.bk_a) ? &ts.bk_b : &ts.bk_a;
    reshape(*nxt, cur->rows, l.in);
    gemm_set(nxt->v.data(), cur->v.data(), l.w.data(), cur->rows, l.in, l.out,
             l.in, l.out, l.in);
    if (i > 0) {
      const MatF& act = cache.act[i - 1];
#pragma omp parallel for schedule(static)
      for (size_t r = 0; r < nxt->rows; ++r) {
        float* dp = nxt->row(r);
        const float* ap = act.row(r);
        for (size_t j = 0; j < nxt->cols; ++j)
          if (!(ap[j] > 0.0f)) dp[j] = 0.0f;
      }
    }
    cur = nxt;
  }
  std::swap(d_input, *cur);
}

}  // namespace

double nll_and_gradients(const FlowModel& m, const MatF& batch, Gradients& g) {
  TrainScratch ts;
  return nll_and_gradients(m, batch, g, ts);
}

double nll_and_gradients(const FlowModel& m, const MatF& batch, Gradients& g,
                         TrainScratch& ts) {
  if (batch.rows == 0)
    throw_error(ErrorKind::argument, "nll gradient: empty batch");
  if (g.blocks.size() != m.blocks()) g = make_gradients(m);

  ForwardCache& fc = ts.fc;
  flow_forward_cached(m, batch, fc);
  const size_t B = batch.rows;
  const size_t D = m.dim;

  double loss = 0.0;
  for (size_t r = 0; r < B; ++r) {
    const float* zr = fc.z.row(r);
    double sq = 0.0;
    for (size_t d = 0; d < D; ++d) sq += double(zr[d]) * double(zr[d]);
    loss += 0.5 * sq - fc.logdet[r];
  }
  loss = loss / double(B) +
         0.5 * double(D) * std::log(2.0 * std::numbers::pi);

  // d(loss)/dz and d(loss)/d(per-row logdet) seed the backward sweep.
  const float inv_b = 1.0f / static_cast<float>(B);
  const double g_ld = -1.0 / double(B);
  MatF& g_v = ts.g_v;
  MatF& g_a = ts.g_a;
  MatF& ds_raw = ts.ds_raw;
  MatF& dt = ts.dt;
  MatF& dpass_s = ts.dpass_s;
  MatF& dpass_t = ts.dpass_t;
  reshape(g_v, B, D);
#pragma omp parallel for schedule(static)
  for (size_t r = 0; r < B; ++r) {
    const float* zr = fc.z.row(r);
    float* gr = g_v.row(r);
    for (size_t d = 0; d < D; ++d) gr[d] = zr[d] * inv_b;
  }

  for (size_t k = m.blocks(); k-- > 0;) {
    const Coupling& c = m.couplings[k];
    const ActNorm& an = m.actnorms[k];
    const BlockCache& bc = fc.blocks[k];
    BlockGrad& bg = g.blocks[k];
    const size_t n_change = c.change_idx.size();
    const float cl = c.clamp;

    // Coupling inverse: v_u = (a_u - t) * exp(-s_eff), logdet -sum(s_eff).
    reshape(ds_raw, B, n_change);
    reshape(dt, B, n_change);
    reshape(g_a, B, D);
#pragma omp parallel for schedule(static)
    for (size_t r = 0; r < B; ++r) {
      const float* se = bc.s_eff.row(r);
      const float* vr = bc.v.row(r);
      const float* gv = g_v.row(r);
      float* gar = g_a.row(r);
      float* dsr = ds_raw.row(r);
      float* dtr = dt.row(r);
      for (size_t j = 0; j < n_change; ++j) {
        const uint32_t u = c.change_idx[j];
        const float e = std::exp(-se[j]);
        const float ga_u = gv[u] * e;
        gar[u] = ga_u;
        dtr[j] = -ga_u;
        const float ds_eff =
            -gv[u] * vr[u] - static_cast<float>(g_ld);
        const float th = se[j] / cl;
        dsr[j] = ds_eff * (1.0f - th * th);
      }
    }

    mlp_backward(c.s_net, bc.s_cache, bc.pass, ds_raw, bg.s, dpass_s, ts);
    mlp_backward(c.t_net, bc.t_cache, bc.pass, dt, bg.t, dpass_t, ts);

#pragma omp parallel for schedule(static)
    for (size_t r = 0; r < B; ++r) {
      const float* gv = g_v.row(r);
      const float* dps = dpass_s.row(r);
      const float* dpt = dpass_t.row(r);
      float* gar = g_a.row(r);
      for (size_t j = 0; j < c.pass_idx.size(); ++j) {
        const uint32_t p = c.pass_idx[j];
        gar[p] = gv[p] + dps[j] + dpt[j];
      }
    }

    // ActNorm forward: a = (x + bias) * exp(log_scale), logdet +sum(ls).
#pragma omp parallel for schedule(static)
    for (size_t d = 0; d < D; ++d) {
      const float sc = std::exp(an.log_scale[d]);
      double d_ls = 0.0, d_bias = 0.0;
      for (size_t r = 0; r < B; ++r) {
        const float ga = g_a.at(r, d);
        d_ls += double(ga) * double(bc.a.at(r, d));
        d_bias += double(ga) * double(sc);
      }
      d_ls += double(B) * g_ld;  // logdet term, -1 in total
      bg.log_scale[d] = static_cast<float>(d_ls);
      bg.bias[d] = static_cast<float>(d_bias);
    }

    reshape(ts.g_x, B, D);
#pragma omp parallel for schedule(static)
    for (size_t r = 0; r < B; ++r) {
      const float* gar = g_a.row(r);
      float* gxr = ts.g_x.row(r);
      for (size_t d = 0; d < D; ++d)
        gxr[d] = gar[d] * std::exp(an.log_scale[d]);
    }
    std::swap(g_v, ts.g_x);
  }
  return loss;
}

}  // namespace oodflow
