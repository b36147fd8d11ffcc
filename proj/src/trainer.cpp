#include "oodflow/trainer.hpp"

#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "oodflow/error.hpp"
#include "oodflow/metrics.hpp"
#include "oodflow/rng.hpp"

namespace oodflow {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0))
    throw_error(ErrorKind::argument, "learning_rate must be positive");
  if (epochs < 1) throw_error(ErrorKind::argument, "epochs must be >= 1");
  if (batch_size < 1)
    throw_error(ErrorKind::argument, "batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw_error(ErrorKind::argument, "adam betas must lie in [0,1)");
  if (!(adam_eps > 0.0))
    throw_error(ErrorKind::argument, "adam epsilon must be positive");
  if (!(clamp > 0.0f))
    throw_error(ErrorKind::argument, "clamp must be positive");
  if (!(data_fraction > 0.0) || data_fraction > 1.0)
    throw_error(ErrorKind::argument, "data_fraction must be in (0,1]");
  if (eval_every < 1)
    throw_error(ErrorKind::argument, "eval_every must be >= 1");
}

Adam::Adam(double lr, double beta1, double beta2, double eps, size_t n_params)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(n_params, 0.0),
      v_(n_params, 0.0) {}

void Adam::step(FlowModel& model, const Gradients& g) {
  ++t_;
  const double bc1 = 1.0 - std::pow(b1_, double(t_));
  const double bc2 = 1.0 - std::pow(b2_, double(t_));

  std::vector<std::vector<float>*> params;
  visit_params(model, [&](std::vector<float>& a) { params.push_back(&a); });
  std::vector<const std::vector<float>*> grads;
  visit_grads(g, [&](const std::vector<float>& a) { grads.push_back(&a); });
  if (params.size() != grads.size())
    throw_error(ErrorKind::argument, "adam: gradient layout mismatch");

  size_t pos = 0;
  for (size_t s = 0; s < params.size(); ++s) {
    std::vector<float>& p = *params[s];
    const std::vector<float>& gr = *grads[s];
    if (p.size() != gr.size())
      throw_error(ErrorKind::argument, "adam: gradient shape mismatch");
    double* m = m_.data() + pos;
    double* v = v_.data() + pos;
    for (size_t i = 0; i < p.size(); ++i) {
      const double gd = gr[i];
      m[i] = b1_ * m[i] + (1.0 - b1_) * gd;
      v[i] = b2_ * v[i] + (1.0 - b2_) * gd * gd;
      const double step =
          lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
      p[i] = static_cast<float>(double(p[i]) - step);
    }
    pos += p.size();
  }
  if (pos != m_.size())
    throw_error(ErrorKind::argument, "adam: parameter count changed");
  refresh_derived(model);
}

TrainResult train(const FeatureSet& id_train, const FeatureSet& id_val,
                  const FeatureSet& ood_val, const TrainConfig& cfg,
                  const std::function<void(const std::string&)>& log) {
  cfg.validate();
  if (id_train.n() == 0)
    throw_error(ErrorKind::argument, "train: empty training set");
  if (id_val.n() == 0 || ood_val.n() == 0)
    throw_error(ErrorKind::argument, "train: validation sets must be non-empty");
  if (id_val.dim() != id_train.dim() || ood_val.dim() != id_train.dim())
    throw_error(ErrorKind::argument,
                "train: feature widths differ across splits");

  const FeatureSet* train_fs = &id_train;
  FeatureSet reduced;
  if (cfg.data_fraction < 1.0) {
    reduced = subsample(id_train, cfg.data_fraction,
                        derive_seed(cfg.seed, "subsample"));
    train_fs = &reduced;
  }
  const MatF& data = train_fs->data;
  const size_t n = data.rows;
  const uint32_t dim = static_cast<uint32_t>(data.cols);

  FlowModel model = make_flow(dim, cfg.n_blocks, cfg.hidden, cfg.clamp,
                              derive_seed(cfg.seed, "init"));
  Adam adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps,
            model.param_count());
  Gradients grads = make_gradients(model);

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});

  TrainResult best;
  best.info.best_val_auroc = -1.0;
  MatF batch;
  TrainScratch scratch;
  for (uint32_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", epoch));
    shuffle_rng.shuffle(order);

    double nll_sum = 0.0;
    size_t batch_index = 0;
    for (size_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
      const size_t nb = std::min<size_t>(cfg.batch_size, n - start);
      reshape(batch, nb, dim);
      for (size_t i = 0; i < nb; ++i)
        std::memcpy(batch.row(i), data.row(order[start + i]),
                    dim * sizeof(float));

      if (epoch == 1 && start == 0) actnorm_init(model, batch);

      const double loss = nll_and_gradients(model, batch, grads, scratch);
      if (!std::isfinite(loss))
        throw_error(ErrorKind::numerical,
                    "non-finite training loss at epoch " +
                        std::to_string(epoch) + ", batch " +
                        std::to_string(batch_index));
      adam.step(model, grads);
      nll_sum += loss * double(nb);
    }
    const double epoch_nll = nll_sum / double(n);
    best.info.train_nll.push_back(epoch_nll);

    const bool evaluate =
        (epoch % cfg.eval_every == 0) || epoch == cfg.epochs;
    bool selected = false;
    double val = 0.0;
    if (evaluate) {
      const std::vector<double> id_scores =
          log_prob_chunked(model, id_val.data);
      const std::vector<double> ood_scores =
          log_prob_chunked(model, ood_val.data);
      val = auroc(id_scores, ood_scores);
      best.info.val_auroc.push_back({epoch, val});
      if (val > best.info.best_val_auroc) {
        best.info.best_val_auroc = val;
        best.info.best_epoch = epoch;
        best.info.best_train_nll = epoch_nll;
        best.model = model;
        selected = true;
      }
    }
    if (log) {
      std::ostringstream os;
      os << "epoch " << epoch << "/" << cfg.epochs << "  nll " << epoch_nll;
      if (evaluate) os << "  val_auroc " << val << (selected ? "  *" : "");
      log(os.str());
    }
  }
  return best;
}

}  // namespace oodflow
