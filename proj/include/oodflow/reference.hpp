#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "oodflow/error.hpp"
#include "oodflow/flow.hpp"

namespace oodflow::ref {

// Serial reference implementation of the flow, templated on the scalar so
// the same code runs in 32-bit (for benchmarking against the OpenMP path)
// and 64-bit (as the oracle for finite-difference gradient checks). Plain
// loops, one sample at a time, no OpenMP, no tiling.

template <typename T>
struct RefLinear {
  size_t in = 0, out = 0;
  std::vector<T> w;  // [out x in] row-major
  std::vector<T> b;
};

template <typename T>
struct RefMlp {
  std::vector<RefLinear<T>> layers;
};

template <typename T>
struct RefBlock {
  std::vector<T> log_scale, bias;
  std::vector<uint32_t> pass_idx, change_idx;
  RefMlp<T> s_net, t_net;
};

template <typename T>
struct RefModel {
  size_t dim = 0;
  T clamp = T(2);
  std::vector<RefBlock<T>> blocks;

  template <typename F>
  void visit(F&& f) {
    for (auto& blk : blocks) {
      f(blk.log_scale);
      f(blk.bias);
      for (auto* net : {&blk.s_net, &blk.t_net})
        for (auto& l : net->layers) {
          f(l.w);
          f(l.b);
        }
    }
  }

  size_t param_count() {
    size_t n = 0;
    visit([&](std::vector<T>& a) { n += a.size(); });
    return n;
  }

  std::vector<T> flatten() {
    std::vector<T> out;
    visit([&](std::vector<T>& a) { out.insert(out.end(), a.begin(), a.end()); });
    return out;
  }

  void unflatten(const std::vector<T>& flat) {
    size_t pos = 0;
    visit([&](std::vector<T>& a) {
      for (auto& v : a) v = flat[pos++];
    });
    if (pos != flat.size())
      throw_error(ErrorKind::argument, "unflatten: length mismatch");
  }
};

template <typename T>
RefModel<T> from_model(const FlowModel& m) {
  RefModel<T> rm;
  rm.dim = m.dim;
  rm.clamp = static_cast<T>(m.clamp);
  rm.blocks.resize(m.blocks());
  for (size_t k = 0; k < m.blocks(); ++k) {
    RefBlock<T>& b = rm.blocks[k];
    b.log_scale.assign(m.actnorms[k].log_scale.begin(),
                       m.actnorms[k].log_scale.end());
    b.bias.assign(m.actnorms[k].bias.begin(), m.actnorms[k].bias.end());
    b.pass_idx = m.couplings[k].pass_idx;
    b.change_idx = m.couplings[k].change_idx;
    for (auto [src, dst] : {std::pair{&m.couplings[k].s_net, &b.s_net},
                            std::pair{&m.couplings[k].t_net, &b.t_net}}) {
      dst->layers.resize(src->layers.size());
      for (size_t i = 0; i < src->layers.size(); ++i) {
        dst->layers[i].in = src->layers[i].in;
        dst->layers[i].out = src->layers[i].out;
        dst->layers[i].w.assign(src->layers[i].w.begin(),
                                src->layers[i].w.end());
        dst->layers[i].b.assign(src->layers[i].b.begin(),
                                src->layers[i].b.end());
      }
    }
  }
  return rm;
}

// Evaluates the net on one sample; when `acts` is non-null the post-ReLU
// hidden vectors are appended for the backward pass.
template <typename T>
std::vector<T> mlp_eval(const RefMlp<T>& net, const std::vector<T>& x,
                        std::vector<std::vector<T>>* acts = nullptr) {
  std::vector<T> cur = x;
  for (size_t i = 0; i < net.layers.size(); ++i) {
    const RefLinear<T>& l = net.layers[i];
    std::vector<T> next(l.out);
    for (size_t o = 0; o < l.out; ++o) {
      T acc = l.b[o];
      const T* wrow = l.w.data() + o * l.in;
      for (size_t j = 0; j < l.in; ++j) acc += wrow[j] * cur[j];
      next[o] = acc;
    }
    const bool hidden = i + 1 < net.layers.size();
    if (hidden)
      for (auto& v : next) v = v > T(0) ? v : T(0);
    if (hidden && acts) acts->push_back(next);
    cur = std::move(next);
  }
  return cur;
}

// One sample through the normalizing direction; returns z and adds the
// log-det into `logdet`.
template <typename T>
std::vector<T> to_latent_row(const RefModel<T>& m, std::vector<T> x,
                             T& logdet) {
  for (const auto& blk : m.blocks) {
    std::vector<T> a(m.dim);
    for (size_t d = 0; d < m.dim; ++d) {
      a[d] = (x[d] + blk.bias[d]) * std::exp(blk.log_scale[d]);
      logdet += blk.log_scale[d];
    }
    std::vector<T> pass(blk.pass_idx.size());
    for (size_t j = 0; j < pass.size(); ++j) pass[j] = a[blk.pass_idx[j]];
    std::vector<T> s_raw = mlp_eval(blk.s_net, pass);
    std::vector<T> t = mlp_eval(blk.t_net, pass);
    std::vector<T> v = a;
    for (size_t j = 0; j < blk.change_idx.size(); ++j) {
      const T se = m.clamp * std::tanh(s_raw[j] / m.clamp);
      v[blk.change_idx[j]] = (a[blk.change_idx[j]] - t[j]) * std::exp(-se);
      logdet -= se;
    }
    x = std::move(v);
  }
  return x;
}

template <typename T>
T log_prob_row(const RefModel<T>& m, const std::vector<T>& x) {
  T logdet = T(0);
  std::vector<T> z = to_latent_row(m, x, logdet);
  T sq = T(0);
  for (T v : z) sq += v * v;
  return -T(0.5) * T(m.dim) * std::log(T(2) * std::numbers::pi_v<T>) -
         T(0.5) * sq + logdet;
}

template <typename T>
T nll(const RefModel<T>& m, const Mat<T>& batch) {
  if (batch.rows == 0) throw_error(ErrorKind::argument, "ref nll: empty batch");
  T acc = T(0);
  for (size_t r = 0; r < batch.rows; ++r) {
    std::vector<T> x(batch.row(r), batch.row(r) + batch.cols);
    acc += log_prob_row(m, x);
  }
  return -acc / T(batch.rows);
}

namespace detail {

template <typename T>
void mlp_backward_row(const RefMlp<T>& net, const std::vector<T>& input,
                      const std::vector<std::vector<T>>& acts,
                      std::vector<T> d_out, RefMlp<T>& grads,
                      std::vector<T>& d_input) {
  for (size_t i = net.layers.size(); i-- > 0;) {
    const RefLinear<T>& l = net.layers[i];
    const std::vector<T>& x_i = (i == 0) ? input : acts[i - 1];
    RefLinear<T>& lg = grads.layers[i];
    std::vector<T> dx(l.in, T(0));
    for (size_t o = 0; o < l.out; ++o) {
      lg.b[o] += d_out[o];
      T* gw = lg.w.data() + o * l.in;
      const T* wrow = l.w.data() + o * l.in;
      for (size_t j = 0; j < l.in; ++j) {
        gw[j] += d_out[o] * x_i[j];
        dx[j] += d_out[o] * wrow[j];
      }
    }
    if (i > 0)
      for (size_t j = 0; j < dx.size(); ++j)
        if (!(acts[i - 1][j] > T(0))) dx[j] = T(0);
    d_out = std::move(dx);
  }
  d_input = std::move(d_out);
}

}  // namespace detail

// Exact gradient of nll with respect to the flattened parameter vector, in
// the canonical traversal order. Same math as the production backward pass,
// executed serially per sample.
template <typename T>
std::vector<T> nll_grad(RefModel<T>& m, const Mat<T>& batch) {
  RefModel<T> grads = m;
  grads.visit([](std::vector<T>& a) { std::fill(a.begin(), a.end(), T(0)); });

  const size_t B = batch.rows;
  const size_t D = m.dim;
  const T g_ld = T(-1) / T(B);

  for (size_t r = 0; r < B; ++r) {
    std::vector<T> x(batch.row(r), batch.row(r) + batch.cols);

    // forward with caches
    struct Cache {
      std::vector<T> a, v, s_eff, t, pass;
      std::vector<std::vector<T>> s_acts, t_acts;
    };
    std::vector<Cache> caches(m.blocks.size());
    for (size_t k = 0; k < m.blocks.size(); ++k) {
      const RefBlock<T>& blk = m.blocks[k];
      Cache& c = caches[k];
      c.a.resize(D);
      for (size_t d = 0; d < D; ++d)
        c.a[d] = (x[d] + blk.bias[d]) * std::exp(blk.log_scale[d]);
      c.pass.resize(blk.pass_idx.size());
      for (size_t j = 0; j < c.pass.size(); ++j)
        c.pass[j] = c.a[blk.pass_idx[j]];
      std::vector<T> s_raw = mlp_eval(blk.s_net, c.pass, &c.s_acts);
      c.t = mlp_eval(blk.t_net, c.pass, &c.t_acts);
      c.s_eff.resize(blk.change_idx.size());
      c.v = c.a;
      for (size_t j = 0; j < blk.change_idx.size(); ++j) {
        c.s_eff[j] = m.clamp * std::tanh(s_raw[j] / m.clamp);
        c.v[blk.change_idx[j]] =
            (c.a[blk.change_idx[j]] - c.t[j]) * std::exp(-c.s_eff[j]);
      }
      x = c.v;
    }

    // backward, seeded by d(mean nll)/dz = z/B and logdet weight -1/B
    std::vector<T> g_v(D);
    for (size_t d = 0; d < D; ++d) g_v[d] = x[d] / T(B);
    for (size_t k = m.blocks.size(); k-- > 0;) {
      const RefBlock<T>& blk = m.blocks[k];
      const Cache& c = caches[k];
      RefBlock<T>& bg = grads.blocks[k];

      std::vector<T> g_a(D, T(0));
      std::vector<T> ds_raw(blk.change_idx.size());
      std::vector<T> dt(blk.change_idx.size());
      for (size_t j = 0; j < blk.change_idx.size(); ++j) {
        const uint32_t u = blk.change_idx[j];
        const T e = std::exp(-c.s_eff[j]);
        const T ga_u = g_v[u] * e;
        g_a[u] = ga_u;
        dt[j] = -ga_u;
        const T ds_eff = -g_v[u] * c.v[u] - g_ld;
        const T th = c.s_eff[j] / m.clamp;
        ds_raw[j] = ds_eff * (T(1) - th * th);
      }
      std::vector<T> dpass_s, dpass_t;
      detail::mlp_backward_row(blk.s_net, c.pass, c.s_acts, std::move(ds_raw),
                               bg.s_net, dpass_s);
      detail::mlp_backward_row(blk.t_net, c.pass, c.t_acts, std::move(dt),
                               bg.t_net, dpass_t);
      for (size_t j = 0; j < blk.pass_idx.size(); ++j) {
        const uint32_t p = blk.pass_idx[j];
        g_a[p] = g_v[p] + dpass_s[j] + dpass_t[j];
      }

      std::vector<T> g_x(D);
      for (size_t d = 0; d < D; ++d) {
        const T sc = std::exp(blk.log_scale[d]);
        bg.log_scale[d] += g_a[d] * c.a[d] + g_ld;
        bg.bias[d] += g_a[d] * sc;
        g_x[d] = g_a[d] * sc;
      }
      g_v = std::move(g_x);
    }
  }
  return grads.flatten();
}

}  // namespace oodflow::ref
