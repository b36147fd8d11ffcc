#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "oodflow/metrics.hpp"

namespace oodflow {

struct ScoredDataset {
  std::string name;
  std::string category;  // shift tag; empty = untagged
  std::vector<double> scores;  // higher = ID

  void validate() const;  // finite, non-empty
};

struct MetricValue {
  double value = 0.0;
  bool has_ci = false;
  double lo = 0.0, hi = 0.0;
};

struct MetricSet {
  MetricValue fpr;      // FPR@tpr_target
  MetricValue auroc;
  MetricValue aupr_in;
  MetricValue aupr_out;
};

struct ReportRow {
  std::string name;
  std::string category;
  size_t n_ood = 0;
  MetricSet metrics;
};

struct ComparisonRecord {
  std::string scorer_a, scorer_b;
  std::string dataset;  // "micro" for the pooled comparison
  double auc_a = 0.0, auc_b = 0.0, delta_auc = 0.0;
  double delong_p = 1.0, bootstrap_p = 1.0;
};

struct EvalReport {
  std::string id_name;
  size_t n_id = 0;
  double tpr_target = 0.95;
  FprConvention convention = FprConvention::ood_positive;
  std::vector<ReportRow> per_dataset;
  std::vector<ReportRow> per_category;  // macro means over member datasets
  ReportRow micro;                      // all OOD pooled vs ID
  std::vector<ComparisonRecord> comparisons;
};

struct EvalOptions {
  double tpr_target = 0.95;
  FprConvention convention = FprConvention::ood_positive;
  size_t n_boot = 1000;  // bootstrap CI replicates; 0 disables CIs
  uint64_t seed = 0;
};

// Per-dataset metrics of the ID test set against each OOD set, macro
// category averages (mean of member-dataset metrics; CIs not averaged), and
// the micro row (every OOD sample pooled into one set).
EvalReport evaluate_suite(const ScoredDataset& id_test,
                          const std::vector<ScoredDataset>& ood_sets,
                          const EvalOptions& opt = {});

// DeLong + paired-bootstrap comparison of two scorers over identical
// samples; scores must be aligned (same sample order).
ComparisonRecord compare_scorers(const std::string& name_a,
                                 const std::vector<double>& scores_a,
                                 const std::string& name_b,
                                 const std::vector<double>& scores_b,
                                 const std::vector<uint8_t>& is_id,
                                 const std::string& dataset, size_t n_boot,
                                 uint64_t seed);

// Serialization: schema-versioned JSON and an aligned text table rendered in
// percent with two decimals.
std::string report_to_json(const EvalReport& report);
std::string report_to_text(const EvalReport& report);

}  // namespace oodflow
