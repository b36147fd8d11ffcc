#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "oodflow/flow.hpp"
#include "oodflow/fvec.hpp"

namespace oodflow {

struct TrainConfig {
  double learning_rate = 1e-4;
  uint32_t epochs = 100;
  uint32_t batch_size = 256;
  uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  float clamp = 2.0f;
  uint32_t n_blocks = 4;
  std::vector<uint32_t> hidden = {512, 1024, 512};
  double data_fraction = 1.0;  // subsampled from id_train with a derived seed
  uint32_t eval_every = 1;     // epochs between validation AUROC evaluations

  void validate() const;
};

struct TrainInfo {
  uint32_t best_epoch = 0;       // 1-based epoch of the selected checkpoint
  double best_val_auroc = 0.0;
  double best_train_nll = 0.0;   // epoch-average NLL at the selected epoch
  std::vector<double> train_nll;                       // one per epoch
  std::vector<std::pair<uint32_t, double>> val_auroc;  // (epoch, auroc)
};

struct TrainResult {
  FlowModel model;  // parameters of the best-validation epoch
  TrainInfo info;
};

// Adam with bias-corrected moments; moments kept in 64-bit. Operates on the
// canonical parameter traversal so optimizer state lines up with gradients.
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps, size_t n_params);
  void step(FlowModel& m, const Gradients& g);
  uint64_t steps_taken() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  uint64_t t_ = 0;
  std::vector<double> m_, v_;
};

// Maximum-likelihood training with seeded shuffling, ActNorm init on the
// first batch, and epoch-level model selection by validation AUROC (ID
// log-likelihood as the ID-positive score; ties keep the earliest epoch).
// Deterministic for a fixed config on a fixed build. `log` (optional)
// receives one line per epoch.
TrainResult train(const FeatureSet& id_train, const FeatureSet& id_val,
                  const FeatureSet& ood_val, const TrainConfig& cfg,
                  const std::function<void(const std::string&)>& log = {});

}  // namespace oodflow
