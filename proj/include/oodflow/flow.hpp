#pragma once

#include <cstdint>
#include <vector>

#include "oodflow/mat.hpp"

namespace oodflow {

// Normalizing flow over feature vectors: K blocks, each an ActNorm followed
// by a masked affine coupling whose scale/translation come from two MLPs fed
// with the pass-through partition. Conventions:
//   - "forward" for a single layer is the generative map: ActNorm
//     y = (x + bias) * exp(log_scale); coupling y = x*exp(s) + t on the
//     changed partition. "inverse" is the exact algebraic inverse.
//   - to_latent (the normalizing direction used for likelihoods) applies
//     each block as ActNorm forward then coupling inverse; to_data is the
//     exact reverse composition.
// log p(x) = log N(z; 0, I) + total log|det J| of the to_latent map.

struct ActNorm {
  std::vector<float> log_scale;
  std::vector<float> bias;
  bool initialized = false;

  void init_identity(size_t dim) {
    log_scale.assign(dim, 0.0f);
    bias.assign(dim, 0.0f);
    initialized = true;
  }
};

// Dense layer. `w` is the canonical [out x in] row-major matrix; `wt` is the
// derived [in x out] transpose kept so the batched forward pass is a plain
// row-major GEMM. refresh() must run after any mutation of `w`.
struct Linear {
  size_t in = 0, out = 0;
  std::vector<float> w;
  std::vector<float> wt;
  std::vector<float> b;

  void resize(size_t in_, size_t out_);
  void refresh();
};

struct Mlp {
  std::vector<Linear> layers;  // hidden layers + final linear layer

  size_t in_dim() const { return layers.front().in; }
  size_t out_dim() const { return layers.back().out; }
};

struct Coupling {
  std::vector<uint8_t> mask;  // 1 = pass-through partition (feeds the nets)
  std::vector<uint32_t> pass_idx, change_idx;  // derived from mask
  Mlp s_net, t_net;
  float clamp = 2.0f;

  void rebuild_index();
};

struct FlowModel {
  uint32_t dim = 0;
  float clamp = 2.0f;
  std::vector<uint32_t> hidden;  // MLP hidden widths (checkpoint metadata)
  std::vector<ActNorm> actnorms;
  std::vector<Coupling> couplings;  // same length as actnorms

  size_t blocks() const { return couplings.size(); }
  size_t param_count() const;
  bool all_initialized() const;
};

// Canonical parameter traversal, fixed for checkpoints, optimizer state and
// gradient flattening: per block — actnorm log_scale, actnorm bias, then
// s_net layers (w then b each), then t_net layers.
template <typename Model, typename F>
void visit_params(Model& m, F&& f) {
  for (size_t k = 0; k < m.couplings.size(); ++k) {
    f(m.actnorms[k].log_scale);
    f(m.actnorms[k].bias);
    for (auto* net : {&m.couplings[k].s_net, &m.couplings[k].t_net})
      for (auto& layer : net->layers) {
        f(layer.w);
        f(layer.b);
      }
  }
}

// Recomputes wt buffers and mask index caches after direct parameter edits.
void refresh_derived(FlowModel& m);

// Alternating contiguous half-split masks: even blocks pass the first
// ceil(D/2) dims through, odd blocks the complement. Hidden layers use
// fan-in-scaled uniform init from the seeded generator; final layers start
// at zero, so a fresh model is the identity map once ActNorm is initialized.
// dim 1 is allowed only with n_blocks == 0 (a pure standard normal).
FlowModel make_flow(uint32_t dim, uint32_t n_blocks,
                    const std::vector<uint32_t>& hidden, float clamp,
                    uint64_t seed);

enum class LayerDir { forward, inverse };
enum class FlowDir { to_latent, to_data };

// Single-layer maps. y is resized; logdet is resized to the batch and
// *accumulated* into (callers chain layers over one logdet vector).
void actnorm_apply(const ActNorm& an, LayerDir dir, const MatF& x, MatF& y,
                   std::vector<double>& logdet);
void coupling_apply(const Coupling& c, LayerDir dir, const MatF& x, MatF& y,
                    std::vector<double>& logdet);

struct TransformResult {
  MatF y;
  std::vector<double> logdet;
};

TransformResult flow_transform(const FlowModel& m, const MatF& x, FlowDir dir);
std::vector<double> log_prob(const FlowModel& m, const MatF& x);
MatF sample(const FlowModel& m, size_t n, uint64_t seed);

// Data-dependent ActNorm init: sequentially per block, sets bias/log_scale
// so the block's post-ActNorm activations on `batch` have zero mean and unit
// population std (std floored at 1e-6 before the log).
void actnorm_init(FlowModel& m, const MatF& batch);

// Scores a dataset in bounded-memory chunks; rows must be finite.
std::vector<double> log_prob_chunked(const FlowModel& m, const MatF& x,
                                     size_t chunk = 1024);

// --- training-facing forward cache and exact gradients (flow_grad.cpp) ---

struct MlpCache {
  std::vector<MatF> act;  // post-activation output of each hidden layer
  MatF out;               // final linear output
};

struct BlockCache {
  MatF a;       // ActNorm output = coupling input
  MatF v;       // coupling output = next block's input
  MatF pass;    // gathered pass-through columns of `a` (the nets' input)
  MlpCache s_cache, t_cache;
  MatF s_eff;   // clamped log-scales, batch x |change|
};

struct ForwardCache {
  std::vector<BlockCache> blocks;
  MatF z;
  std::vector<double> logdet;
};

struct LinearGrad {
  std::vector<float> w, b;
};
struct MlpGrad {
  std::vector<LinearGrad> layers;
};
struct BlockGrad {
  std::vector<float> log_scale, bias;
  MlpGrad s, t;
};
struct Gradients {
  std::vector<BlockGrad> blocks;
  void zero();
};

Gradients make_gradients(const FlowModel& m);

// Mirrors visit_params order over gradient arrays.
template <typename G, typename F>
void visit_grads(G& g, F&& f) {
  for (auto& blk : g.blocks) {
    f(blk.log_scale);
    f(blk.bias);
    for (auto* net : {&blk.s, &blk.t})
      for (auto& layer : net->layers) {
        f(layer.w);
        f(layer.b);
      }
  }
}

// Forward pass in the to_latent direction, keeping what backward needs.
void flow_forward_cached(const FlowModel& m, const MatF& x, ForwardCache& fc);

// Mean NLL of the batch in nats/sample.
double nll_loss(const FlowModel& m, const MatF& batch);

// Reusable buffers for nll_and_gradients. A trainer keeps one instance
// across steps so the hidden-layer matrices are allocated once, not per
// batch; every buffer is fully overwritten on each call.
struct TrainScratch {
  ForwardCache fc;
  MatF g_v, g_a, g_x;          // per-block activation gradients
  MatF ds_raw, dt;             // gradients at the s/t net outputs
  MatF dpass_s, dpass_t;       // gradients at the s/t net inputs
  std::vector<float> tr;       // transpose scratch inside mlp_backward
  MatF bk_a, bk_b;             // ping-pong buffers for the backward dx chain
};

// Exact reverse-mode gradient of nll_loss for every parameter; returns the
// loss. Gradients are overwritten, not accumulated.
double nll_and_gradients(const FlowModel& m, const MatF& batch, Gradients& g);
double nll_and_gradients(const FlowModel& m, const MatF& batch, Gradients& g,
                         TrainScratch& ts);

}  // namespace oodflow
