#pragma once

#include <vector>

namespace oodflow {

// Detection metrics over two score samples. Scores follow the higher-is-ID
// convention everywhere; ties are handled by midranks / grouped thresholds,
// so no result depends on sample order.

// P(random ID score > random OOD score) + 0.5*P(tie), Mann-Whitney midrank
// formulation, O(n log n).
double auroc(const std::vector<double>& id_scores,
             const std::vector<double>& ood_scores);

// FPR@TPR conventions. ood_positive follows the definition "fraction of ID
// samples flagged OOD at the threshold reaching `tpr_target` OOD
// sensitivity" (detection = score <= tau). id_positive is the OpenOOD
// tooling convention: threshold at `tpr_target` ID sensitivity, report the
// fraction of OOD samples scoring above it.
enum class FprConvention { ood_positive, id_positive };

double fpr_at_tpr(const std::vector<double>& id_scores,
                  const std::vector<double>& ood_scores,
                  double tpr_target = 0.95,
                  FprConvention conv = FprConvention::ood_positive);

// Average precision with step interpolation and grouped ties. When
// positive_is_high is false the positives are expected at low scores
// (AUPR_OUT); computed on negated scores.
double aupr(const std::vector<double>& pos_scores,
            const std::vector<double>& neg_scores, bool positive_is_high);

// Midranks of v within itself (1-based average ranks; ties share the mean
// rank). Exposed for the DeLong components, which reuse the same machinery.
std::vector<double> midranks(const std::vector<double>& v);

}  // namespace oodflow
