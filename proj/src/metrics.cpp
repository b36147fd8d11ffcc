#include "oodflow/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "oodflow/error.hpp"

namespace oodflow {

namespace {

void require_nonempty(const std::vector<double>& a,
                      const std::vector<double>& b, const char* what) {
  if (a.empty() || b.empty())
    throw_error(ErrorKind::argument,
                std::string(what) + ": both score sets must be non-empty");
  for (const auto* v : {&a, &b})
    for (double x : *v)
      if (!std::isfinite(x))
        throw_error(ErrorKind::validation,
                    std::string(what) + ": non-finite score");
}

}  // namespace

std::vector<double> midranks(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double mid = 0.5 * double(i + j) + 1.0;  // average of 1-based ranks
    for (size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  return rank;
}

double auroc(const std::vector<double>& id_scores,
             const std::vector<double>& ood_scores) {
  require_nonempty(id_scores, ood_scores, "auroc");
  const size_t n1 = id_scores.size(), n0 = ood_scores.size();
  std::vector<double> all;
  all.reserve(n1 + n0);
  all.insert(all.end(), id_scores.begin(), id_scores.end());
  all.insert(all.end(), ood_scores.begin(), ood_scores.end());
  const std::vector<double> rank = midranks(all);
  double rank_sum = 0.0;
  for (size_t i = 0; i < n1; ++i) rank_sum += rank[i];
  return (rank_sum - 0.5 * double(n1) * double(n1 + 1)) /
         (double(n1) * double(n0));
}

double fpr_at_tpr(const std::vector<double>& id_scores,
                  const std::vector<double>& ood_scores, double tpr_target,
                  FprConvention conv) {
  require_nonempty(id_scores, ood_scores, "fpr_at_tpr");
  if (!(tpr_target > 0.0) || tpr_target > 1.0)
    throw_error(ErrorKind::argument, "fpr_at_tpr: tpr_target must be in (0,1]");

  // k-th order statistic index with a guard against the float product
  // landing a hair above/below an integer.
  auto kth = [tpr_target](size_t n) {
    auto k = static_cast<size_t>(
        std::ceil(tpr_target * double(n) - 1e-9));
    return std::min(std::max<size_t>(k, 1), n);
  };

  if (conv == FprConvention::ood_positive) {
    // tau = smallest threshold with #(ood <= tau) >= ceil(t*n_ood):
    // the k-th smallest OOD score. FPR = fraction of ID at or below tau.
    std::vector<double> ood = ood_scores;
    const size_t k = kth(ood.size());
    std::nth_element(ood.begin(), ood.begin() + (k - 1), ood.end());
    const double tau = ood[k - 1];
    size_t fp = 0;
    for (double s : id_scores)
      if (s <= tau) ++fp;
    return double(fp) / double(id_scores.size());
  }

  // id_positive: tau = k-th largest ID score; FPR = fraction of OOD >= tau.
  std::vector<double> id = id_scores;
  const size_t k = kth(id.size());
  std::nth_element(id.begin(), id.begin() + (k - 1), id.end(),
                   std::greater<>());
  const double tau = id[k - 1];
  size_t fp = 0;
  for (double s : ood_scores)
    if (s >= tau) ++fp;
  return double(fp) / double(ood_scores.size());
}

double aupr(const std::vector<double>& pos_scores,
            const std::vector<double>& neg_scores, bool positive_is_high) {
  require_nonempty(pos_scores, neg_scores, "aupr");

  // (score, is_positive), descending by effective score; ties form one
  // threshold group so ordering within a tie cannot matter.
  std::vector<std::pair<double, int>> s;
  s.reserve(pos_scores.size() + neg_scores.size());
  const double sign = positive_is_high ? 1.0 : -1.0;
  for (double x : pos_scores) s.push_back({sign * x, 1});
  for (double x : neg_scores) s.push_back({sign * x, 0});
  std::sort(s.begin(), s.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });

  const double n_pos = double(pos_scores.size());
  double ap = 0.0;
  size_t tp = 0, fp = 0, i = 0;
  while (i < s.size()) {
    size_t j = i;
    size_t g_tp = 0, g_fp = 0;
    while (j < s.size() && s[j].first == s[i].first) {
      (s[j].second ? g_tp : g_fp)++;
      ++j;
    }
    tp += g_tp;
    fp += g_fp;
    if (g_tp > 0) {
      const double precision = double(tp) / double(tp + fp);
      ap += precision * double(g_tp) / n_pos;
    }
    i = j;
  }
  return ap;
}

}  // namespace oodflow
