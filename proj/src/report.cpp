#include "oodflow/report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "oodflow/error.hpp"
#include "oodflow/rng.hpp"
#include "oodflow/stats.hpp"

namespace oodflow {

using ordered_json = nlohmann::ordered_json;

void ScoredDataset::validate() const {
  if (scores.empty())
    throw_error(ErrorKind::validation,
                "scored dataset '" + name + "' is empty");
  for (double s : scores)
    if (!std::isfinite(s))
      throw_error(ErrorKind::validation,
                  "scored dataset '" + name + "' has a non-finite score");
}

namespace {

MetricSet compute_metrics(const std::vector<double>& id,
                          const std::vector<double>& ood,
                          const EvalOptions& opt, uint64_t ci_stream) {
  MetricSet ms;
  ms.fpr.value = fpr_at_tpr(id, ood, opt.tpr_target, opt.convention);
  ms.auroc.value = auroc(id, ood);
  ms.aupr_in.value = aupr(id, ood, true);
  ms.aupr_out.value = aupr(ood, id, false);
  if (opt.n_boot >= 2) {
    struct Item {
      MetricValue* slot;
      MetricFn fn;
    };
    const double tpr = opt.tpr_target;
    const FprConvention conv = opt.convention;
    Item items[] = {
        {&ms.fpr,
         [tpr, conv](const std::vector<double>& a,
                     const std::vector<double>& b) {
           return fpr_at_tpr(a, b, tpr, conv);
         }},
        {&ms.auroc,
         [](const std::vector<double>& a, const std::vector<double>& b) {
           return auroc(a, b);
         }},
        {&ms.aupr_in,
         [](const std::vector<double>& a, const std::vector<double>& b) {
           return aupr(a, b, true);
         }},
        {&ms.aupr_out,
         [](const std::vector<double>& a, const std::vector<double>& b) {
           return aupr(b, a, false);
         }},
    };
    uint64_t metric_index = 0;
    for (auto& item : items) {
      const BootstrapCi ci =
          bootstrap_ci(id, ood, item.fn, opt.n_boot,
                       derive_seed(opt.seed, "eval_ci",
                                   ci_stream * 8 + metric_index));
      item.slot->has_ci = true;
      item.slot->lo = ci.lo;
      item.slot->hi = ci.hi;
      ++metric_index;
    }
  }
  return ms;
}

MetricValue mean_of(const std::vector<const MetricValue*>& vs) {
  MetricValue out;
  for (const auto* v : vs) out.value += v->value;
  out.value /= double(vs.size());
  return out;
}

}  // namespace

EvalReport evaluate_suite(const ScoredDataset& id_test,
                          const std::vector<ScoredDataset>& ood_sets,
                          const EvalOptions& opt) {
  if (ood_sets.empty())
    throw_error(ErrorKind::argument, "evaluate_suite: no OOD sets");
  id_test.validate();
  for (const auto& s : ood_sets) s.validate();

  EvalReport rep;
  rep.id_name = id_test.name;
  rep.n_id = id_test.scores.size();
  rep.tpr_target = opt.tpr_target;
  rep.convention = opt.convention;

  uint64_t stream = 0;
  for (const auto& ood : ood_sets) {
    ReportRow row;
    row.name = ood.name;
    row.category = ood.category;
    row.n_ood = ood.scores.size();
    row.metrics = compute_metrics(id_test.scores, ood.scores, opt, stream++);
    rep.per_dataset.push_back(std::move(row));
  }

  // Macro per-category rows, in first-appearance order of the tags.
  std::vector<std::string> tags;
  for (const auto& row : rep.per_dataset)
    if (!row.category.empty() &&
        std::find(tags.begin(), tags.end(), row.category) == tags.end())
      tags.push_back(row.category);
  for (const auto& tag : tags) {
    std::vector<const ReportRow*> members;
    for (const auto& row : rep.per_dataset)
      if (row.category == tag) members.push_back(&row);
    ReportRow row;
    row.name = tag;
    row.category = tag;
    for (const auto* m : members) row.n_ood += m->n_ood;
    auto collect = [&](MetricValue MetricSet::* field) {
      std::vector<const MetricValue*> vs;
      for (const auto* m : members) vs.push_back(&(m->metrics.*field));
      return mean_of(vs);
    };
    row.metrics.fpr = collect(&MetricSet::fpr);
    row.metrics.auroc = collect(&MetricSet::auroc);
    row.metrics.aupr_in = collect(&MetricSet::aupr_in);
    row.metrics.aupr_out = collect(&MetricSet::aupr_out);
    rep.per_category.push_back(std::move(row));
  }

  std::vector<double> pooled;
  for (const auto& ood : ood_sets)
    pooled.insert(pooled.end(), ood.scores.begin(), ood.scores.end());
  rep.micro.name = "micro";
  rep.micro.n_ood = pooled.size();
  rep.micro.metrics = compute_metrics(id_test.scores, pooled, opt, stream++);
  return rep;
}

ComparisonRecord compare_scorers(const std::string& name_a,
                                 const std::vector<double>& scores_a,
                                 const std::string& name_b,
                                 const std::vector<double>& scores_b,
                                 const std::vector<uint8_t>& is_id,
                                 const std::string& dataset, size_t n_boot,
                                 uint64_t seed) {
  const DelongResult dl = delong_test(scores_a, scores_b, is_id);
  const BootstrapCompare bc =
      bootstrap_compare(scores_a, scores_b, is_id, n_boot, seed);
  ComparisonRecord rec;
  rec.scorer_a = name_a;
  rec.scorer_b = name_b;
  rec.dataset = dataset;
  rec.auc_a = dl.auc_a;
  rec.auc_b = dl.auc_b;
  rec.delta_auc = dl.delta_auc;
  rec.delong_p = dl.p_value;
  rec.bootstrap_p = bc.p_value;
  return rec;
}

namespace {

ordered_json metric_to_json(const MetricValue& v) {
  ordered_json j;
  j["value"] = v.value;
  if (v.has_ci) j["ci"] = {v.lo, v.hi};
  return j;
}

ordered_json row_to_json(const ReportRow& row) {
  ordered_json j;
  j["name"] = row.name;
  if (!row.category.empty()) j["category"] = row.category;
  j["n_ood"] = row.n_ood;
  j["fpr_at_tpr"] = metric_to_json(row.metrics.fpr);
  j["auroc"] = metric_to_json(row.metrics.auroc);
  j["aupr_in"] = metric_to_json(row.metrics.aupr_in);
  j["aupr_out"] = metric_to_json(row.metrics.aupr_out);
  return j;
}

std::string pct(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v * 100.0;
  return os.str();
}

std::string pval(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << v;
  return os.str();
}

}  // namespace

std::string report_to_json(const EvalReport& rep) {
  ordered_json j;
  j["schema_version"] = 1;
  j["id_dataset"] = rep.id_name;
  j["n_id"] = rep.n_id;
  j["tpr_target"] = rep.tpr_target;
  j["fpr_convention"] = rep.convention == FprConvention::ood_positive
                            ? "ood_positive"
                            : "id_positive";
  j["datasets"] = ordered_json::array();
  for (const auto& row : rep.per_dataset) j["datasets"].push_back(row_to_json(row));
  j["categories"] = ordered_json::array();
  for (const auto& row : rep.per_category)
    j["categories"].push_back(row_to_json(row));
  j["micro"] = row_to_json(rep.micro);
  j["comparisons"] = ordered_json::array();
  for (const auto& c : rep.comparisons) {
    ordered_json jc;
    jc["scorer_a"] = c.scorer_a;
    jc["scorer_b"] = c.scorer_b;
    jc["dataset"] = c.dataset;
    jc["auc_a"] = c.auc_a;
    jc["auc_b"] = c.auc_b;
    jc["delta_auc"] = c.delta_auc;
    jc["delong_p"] = c.delong_p;
    jc["bootstrap_p"] = c.bootstrap_p;
    j["comparisons"].push_back(std::move(jc));
  }
  return j.dump(2) + "\n";
}

std::string report_to_text(const EvalReport& rep) {
  // Column layout: name, category, n, then the four metrics in percent.
  struct Line {
    std::string name, cat, n, fpr, auroc, ain, aout;
  };
  const std::string fpr_head =
      "FPR@" + pct(rep.tpr_target).substr(0, pct(rep.tpr_target).find('.'));
  std::vector<Line> lines;
  lines.push_back({"dataset", "category", "n", fpr_head, "AUROC", "AUPR-IN",
                   "AUPR-OUT"});
  auto add = [&](const ReportRow& row, const std::string& cat) {
    lines.push_back({row.name, cat.empty() ? "-" : cat,
                     std::to_string(row.n_ood), pct(row.metrics.fpr.value),
                     pct(row.metrics.auroc.value),
                     pct(row.metrics.aupr_in.value),
                     pct(row.metrics.aupr_out.value)});
  };
  for (const auto& row : rep.per_dataset) add(row, row.category);
  for (const auto& row : rep.per_category) add(row, "average");
  add(rep.micro, "micro");

  size_t w[7] = {0, 0, 0, 0, 0, 0, 0};
  auto fields = [](const Line& l) {
    return std::array<const std::string*, 7>{&l.name, &l.cat,  &l.n,   &l.fpr,
                                             &l.auroc, &l.ain, &l.aout};
  };
  for (const auto& l : lines) {
    auto f = fields(l);
    for (size_t i = 0; i < 7; ++i) w[i] = std::max(w[i], f[i]->size());
  }

  std::ostringstream os;
  os << "ID test set: " << rep.id_name << " (" << rep.n_id << " samples)\n";
  for (size_t li = 0; li < lines.size(); ++li) {
    auto f = fields(lines[li]);
    for (size_t i = 0; i < 7; ++i) {
      os << (i ? "  " : "");
      // left-align names, right-align numbers
      if (i < 2)
        os << std::left << std::setw(int(w[i])) << *f[i];
      else
        os << std::right << std::setw(int(w[i])) << *f[i];
    }
    os << "\n";
    if (li == 0) {
      size_t total = 0;
      for (size_t i = 0; i < 7; ++i) total += w[i] + (i ? 2 : 0);
      os << std::string(total, '-') << "\n";
    }
  }

  if (!rep.comparisons.empty()) {
    os << "\npaired comparisons\n";
    for (const auto& c : rep.comparisons) {
      os << "  " << c.scorer_a << " vs " << c.scorer_b << " [" << c.dataset
         << "]: dAUC " << std::fixed << std::setprecision(4) << c.delta_auc
         << "  delong_p " << pval(c.delong_p) << "  bootstrap_p "
         << pval(c.bootstrap_p) << "\n";
    }
  }
  return os.str();
}

}  // namespace oodflow
