#include "oodflow/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "oodflow/error.hpp"
#include "oodflow/metrics.hpp"
#include "oodflow/rng.hpp"

namespace oodflow {

namespace {

// Midrank structural components of one method's scores. With m ID and n OOD
// samples: v10[i] over ID, v01[j] over OOD, and the AUC.
struct Components {
  std::vector<double> v10, v01;
  double auc = 0.0;
};

Components delong_components(const std::vector<double>& id_scores,
                             const std::vector<double>& ood_scores) {
  const size_t m = id_scores.size(), n = ood_scores.size();
  std::vector<double> all;
  all.reserve(m + n);
  all.insert(all.end(), id_scores.begin(), id_scores.end());
  all.insert(all.end(), ood_scores.begin(), ood_scores.end());
  const std::vector<double> tz = midranks(all);
  const std::vector<double> tx = midranks(id_scores);
  const std::vector<double> ty = midranks(ood_scores);

  Components c;
  c.v10.resize(m);
  c.v01.resize(n);
  double sum_tz_id = 0.0;
  for (size_t i = 0; i < m; ++i) {
    c.v10[i] = (tz[i] - tx[i]) / double(n);
    sum_tz_id += tz[i];
  }
  for (size_t j = 0; j < n; ++j)
    c.v01[j] = 1.0 - (tz[m + j] - ty[j]) / double(m);
  c.auc = (sum_tz_id - 0.5 * double(m) * double(m + 1)) /
          (double(m) * double(n));
  return c;
}

double covariance(const std::vector<double>& a, const std::vector<double>& b) {
  const size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= double(n);
  mb /= double(n);
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += (a[i] - ma) * (b[i] - mb);
  return acc / double(n - 1);
}

void split_by_role(const std::vector<double>& scores,
                   const std::vector<uint8_t>& is_id, std::vector<double>& id,
                   std::vector<double>& ood) {
  id.clear();
  ood.clear();
  for (size_t i = 0; i < scores.size(); ++i)
    (is_id[i] ? id : ood).push_back(scores[i]);
}

}  // namespace

DelongResult delong_test(const std::vector<double>& scores_a,
                         const std::vector<double>& scores_b,
                         const std::vector<uint8_t>& is_id) {
  if (scores_a.size() != scores_b.size() || scores_a.size() != is_id.size())
    throw_error(ErrorKind::argument,
                "delong_test: paired inputs must have equal lengths");
  std::vector<double> id_a, ood_a, id_b, ood_b;
  split_by_role(scores_a, is_id, id_a, ood_a);
  split_by_role(scores_b, is_id, id_b, ood_b);
  if (id_a.size() < 2 || ood_a.size() < 2)
    throw_error(ErrorKind::argument,
                "delong_test: need at least 2 samples per role");

  const Components ca = delong_components(id_a, ood_a);
  const Components cb = delong_components(id_b, ood_b);

  const double s10_aa = covariance(ca.v10, ca.v10);
  const double s10_bb = covariance(cb.v10, cb.v10);
  const double s10_ab = covariance(ca.v10, cb.v10);
  const double s01_aa = covariance(ca.v01, ca.v01);
  const double s01_bb = covariance(cb.v01, cb.v01);
  const double s01_ab = covariance(ca.v01, cb.v01);

  DelongResult r;
  r.auc_a = ca.auc;
  r.auc_b = cb.auc;
  r.delta_auc = ca.auc - cb.auc;
  r.var_delta = (s10_aa + s10_bb - 2.0 * s10_ab) / double(id_a.size()) +
                (s01_aa + s01_bb - 2.0 * s01_ab) / double(ood_a.size());
  if (r.var_delta > 0.0) {
    const double z = r.delta_auc / std::sqrt(r.var_delta);
    r.p_value = std::erfc(std::abs(z) / std::numbers::sqrt2);
  } else {
    r.p_value = (r.delta_auc == 0.0) ? 1.0 : 0.0;
  }
  return r;
}

namespace {

// Linear-interpolation percentile of a sorted vector (the common "type 7").
double percentile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.size() == 1) return sorted[0];
  const double pos = q * double(sorted.size() - 1);
  const size_t lo = static_cast<size_t>(pos);
  const size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - double(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

BootstrapCi bootstrap_ci(const std::vector<double>& id_scores,
                         const std::vector<double>& ood_scores,
                         const MetricFn& metric, size_t n_boot,
                         uint64_t seed) {
  if (n_boot < 2)
    throw_error(ErrorKind::argument, "bootstrap_ci: n_boot must be >= 2");
  if (id_scores.empty() || ood_scores.empty())
    throw_error(ErrorKind::argument, "bootstrap_ci: empty score set");

  std::vector<double> values(n_boot);
  std::vector<uint8_t> ok(n_boot, 0);
#pragma omp parallel for schedule(static)
  for (size_t r = 0; r < n_boot; ++r) {
    Rng rng(derive_seed(seed, "boot_ci", r));
    std::vector<double> id(id_scores.size()), ood(ood_scores.size());
    for (auto& v : id) v = id_scores[rng.below(id_scores.size())];
    for (auto& v : ood) v = ood_scores[rng.below(ood_scores.size())];
    values[r] = metric(id, ood);
    ok[r] = std::isfinite(values[r]) ? 1 : 0;
  }

  std::vector<double> kept;
  kept.reserve(n_boot);
  for (size_t r = 0; r < n_boot; ++r)
    if (ok[r]) kept.push_back(values[r]);
  if (kept.empty())
    throw_error(ErrorKind::numerical, "bootstrap_ci: no valid replicates");
  std::sort(kept.begin(), kept.end());
  BootstrapCi ci;
  ci.lo = percentile_sorted(kept, 0.025);
  ci.hi = percentile_sorted(kept, 0.975);
  ci.retained = kept.size();
  return ci;
}

BootstrapCompare bootstrap_compare(const std::vector<double>& scores_a,
                                   const std::vector<double>& scores_b,
                                   const std::vector<uint8_t>& is_id,
                                   size_t n_boot, uint64_t seed) {
  if (scores_a.size() != scores_b.size() || scores_a.size() != is_id.size())
    throw_error(ErrorKind::argument,
                "bootstrap_compare: paired inputs must have equal lengths");
  if (n_boot < 2)
    throw_error(ErrorKind::argument, "bootstrap_compare: n_boot must be >= 2");
  const size_t n = scores_a.size();
  {
    size_t n_id = 0;
    for (uint8_t f : is_id) n_id += f ? 1 : 0;
    if (n_id == 0 || n_id == n)
      throw_error(ErrorKind::argument,
                  "bootstrap_compare: need both ID and OOD samples");
  }

  std::vector<double> delta(n_boot);
  std::vector<uint8_t> ok(n_boot, 0);
#pragma omp parallel for schedule(static)
  for (size_t r = 0; r < n_boot; ++r) {
    // Paired index resampling; a replicate that loses one class entirely is
    // redrawn a bounded number of times, then dropped.
    for (uint64_t attempt = 0; attempt < 100; ++attempt) {
      Rng rng(derive_seed(seed, "boot_cmp", r * 128 + attempt));
      std::vector<double> id_a, ood_a, id_b, ood_b;
      id_a.reserve(n);
      ood_a.reserve(n);
      id_b.reserve(n);
      ood_b.reserve(n);
      for (size_t i = 0; i < n; ++i) {
        const size_t pick = rng.below(n);
        if (is_id[pick]) {
          id_a.push_back(scores_a[pick]);
          id_b.push_back(scores_b[pick]);
        } else {
          ood_a.push_back(scores_a[pick]);
          ood_b.push_back(scores_b[pick]);
        }
      }
      if (id_a.empty() || ood_a.empty()) continue;
      delta[r] = auroc(id_a, ood_a) - auroc(id_b, ood_b);
      ok[r] = 1;
      break;
    }
  }

  size_t retained = 0, n_le = 0, n_ge = 0;
  double sum = 0.0;
  for (size_t r = 0; r < n_boot; ++r) {
    if (!ok[r]) continue;
    ++retained;
    sum += delta[r];
    if (delta[r] <= 0.0) ++n_le;
    if (delta[r] >= 0.0) ++n_ge;
  }
  if (retained == 0)
    throw_error(ErrorKind::numerical,
                "bootstrap_compare: no valid replicates");

  BootstrapCompare out;
  out.retained = retained;
  out.mean_delta = sum / double(retained);
  const double p =
      2.0 * std::min(double(n_le), double(n_ge)) / double(retained);
  out.p_value = std::clamp(p, 1.0 / double(n_boot), 1.0);
  return out;
}

}  // namespace oodflow
