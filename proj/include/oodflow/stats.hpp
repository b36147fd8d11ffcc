#pragma once

#include <cstdint>
#include <functional>
#include <vector>

namespace oodflow {

// Paired comparison of two scorers' AUCs over the same samples via the
// DeLong structural-component (midrank) estimator; two-sided normal p.
// Degenerate zero-variance cases: p = 1 when delta_auc == 0, else 0.
struct DelongResult {
  double auc_a = 0.0;
  double auc_b = 0.0;
  double delta_auc = 0.0;
  double var_delta = 0.0;
  double p_value = 1.0;
};

// is_id[i] != 0 marks sample i as ID. Throws on unpaired lengths or fewer
// than 2 samples in either role.
DelongResult delong_test(const std::vector<double>& scores_a,
                         const std::vector<double>& scores_b,
                         const std::vector<uint8_t>& is_id);

// Percentile bootstrap CI of a metric over stratified resamples (ID and OOD
// drawn independently with replacement, class sizes preserved). Replicates
// run on derived per-replicate seeds, so scheduling cannot affect results.
struct BootstrapCi {
  double lo = 0.0;
  double hi = 0.0;
  size_t retained = 0;  // replicates that produced a value
};

using MetricFn = std::function<double(const std::vector<double>& id_scores,
                                      const std::vector<double>& ood_scores)>;

BootstrapCi bootstrap_ci(const std::vector<double>& id_scores,
                         const std::vector<double>& ood_scores,
                         const MetricFn& metric, size_t n_boot = 1000,
                         uint64_t seed = 0);

// Paired bootstrap comparison: pooled sample indices resampled with
// replacement, same replicate indices for both scorers; two-sided
// p = 2 * min(frac(delta <= 0), frac(delta >= 0)), clamped to [1/n_boot, 1].
// Replicates that lose an entire class are redrawn up to 100 times, then
// dropped; fractions use retained replicates.
struct BootstrapCompare {
  double p_value = 1.0;
  double mean_delta = 0.0;
  size_t retained = 0;
};

BootstrapCompare bootstrap_compare(const std::vector<double>& scores_a,
                                   const std::vector<double>& scores_b,
                                   const std::vector<uint8_t>& is_id,
                                   size_t n_boot = 1000, uint64_t seed = 0);

}  // namespace oodflow
