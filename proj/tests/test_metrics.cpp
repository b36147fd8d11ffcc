#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "oodflow/error.hpp"
#include "oodflow/metrics.hpp"
#include "oodflow/rng.hpp"

using namespace oodflow;

namespace {

// O(n^2) Mann-Whitney with explicit tie handling.
double auroc_brute(const std::vector<double>& id,
                   const std::vector<double>& ood) {
  double wins = 0.0;
  for (double a : id)
    for (double b : ood) {
      if (a > b) wins += 1.0;
      else if (a == b) wins += 0.5;
    }
  return wins / (static_cast<double>(id.size()) * ood.size());
}

// Exhaustive threshold sweep for the ood_positive convention: pick the
// k-th smallest OOD score, report the ID fraction at or below it.
double fpr_brute_ood_positive(std::vector<double> id, std::vector<double> ood,
                              double tpr) {
  std::sort(ood.begin(), ood.end());
  const size_t n = ood.size();
  const size_t k =
      static_cast<size_t>(std::ceil(tpr * static_cast<double>(n) - 1e-9));
  const double tau = ood[k - 1];
  size_t hits = 0;
  for (double v : id) hits += v <= tau ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(id.size());
}

double fpr_brute_id_positive(std::vector<double> id, std::vector<double> ood,
                             double tpr) {
  std::sort(id.begin(), id.end());
  const size_t n = id.size();
  const size_t k =
      static_cast<size_t>(std::ceil(tpr * static_cast<double>(n) - 1e-9));
  // Keep the top ceil(tpr*n) ID scores above (or at) the threshold.
  const double tau = id[n - k];
  size_t hits = 0;
  for (double v : ood) hits += v >= tau ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ood.size());
}

// Average precision by grouped-threshold sweep, quadratic but obviously
// correct: walk distinct scores descending, AP = sum over groups of
// precision-after-group * recall gained in group.
double aupr_brute(std::vector<double> pos, std::vector<double> neg,
                  bool positive_is_high) {
  if (!positive_is_high) {
    for (auto& v : pos) v = -v;
    for (auto& v : neg) v = -v;
  }
  std::vector<double> all = pos;
  all.insert(all.end(), neg.begin(), neg.end());
  std::sort(all.begin(), all.end(), std::greater<>());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  double ap = 0.0;
  size_t tp_prev = 0;
  for (double tau : all) {
    size_t tp = 0, fp = 0;
    for (double v : pos) tp += v >= tau ? 1 : 0;
    for (double v : neg) fp += v >= tau ? 1 : 0;
    const double precision =
        static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += precision * static_cast<double>(tp - tp_prev);
    tp_prev = tp;
  }
  return ap / static_cast<double>(pos.size());
}

std::vector<double> random_scores(size_t n, uint64_t seed, double lo,
                                  double hi, bool quantize) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) {
    x = lo + (hi - lo) * rng.uniform();
    if (quantize) x = std::round(x * 4.0) / 4.0;  // force plenty of ties
  }
  return v;
}

ErrorKind metric_error(const std::vector<double>& id,
                       const std::vector<double>& ood) {
  try {
    auroc(id, ood);
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::numerical;
}

}  // namespace

TEST_CASE("auroc hand values") {
  CHECK(auroc({3, 4}, {1, 2}) == doctest::Approx(1.0));
  CHECK(auroc({1, 2}, {3, 4}) == doctest::Approx(0.0));
  CHECK(auroc({1}, {1}) == doctest::Approx(0.5));
  CHECK(auroc({1, 3}, {2, 4}) == doctest::Approx(0.25));
  CHECK(auroc({5, 5, 5}, {5, 5}) == doctest::Approx(0.5));
}

TEST_CASE("auroc matches the quadratic oracle on tie-heavy data") {
  for (uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed + 1000);
    const size_t n_id = 1 + rng.below(60);
    const size_t n_ood = 1 + rng.below(60);
    auto id = random_scores(n_id, seed * 2 + 1, -2, 2, true);
    auto ood = random_scores(n_ood, seed * 2 + 2, -3, 1, true);
    CHECK(auroc(id, ood) == doctest::Approx(auroc_brute(id, ood)).epsilon(1e-12));
  }
}

TEST_CASE("auroc symmetry and monotone invariance") {
  auto id = random_scores(75, 7, -1, 3, true);
  auto ood = random_scores(50, 8, -2, 2, true);
  CHECK(auroc(id, ood) + auroc(ood, id) == doctest::Approx(1.0).epsilon(1e-12));

  auto warp = [](std::vector<double> v) {
    for (auto& x : v) x = std::exp(0.5 * x) + 10.0;
    return v;
  };
  CHECK(auroc(warp(id), warp(ood)) == doctest::Approx(auroc(id, ood)).epsilon(1e-12));
}

TEST_CASE("fpr@tpr hand values, ood_positive convention") {
  std::vector<double> ramp20;
  for (int i = 1; i <= 20; ++i) ramp20.push_back(i);
  // Identical distributions: at 95% OOD sensitivity, 95% of ID flagged.
  CHECK(fpr_at_tpr(ramp20, ramp20, 0.95) == doctest::Approx(0.95));

  std::vector<double> id_hi;
  for (int i = 11; i <= 30; ++i) id_hi.push_back(i);
  // tau = 19th smallest OOD = 19; ID <= 19 are {11..19} -> 9/20.
  CHECK(fpr_at_tpr(id_hi, ramp20, 0.95) == doctest::Approx(0.45));
  // Perfect separation.
  std::vector<double> id_far;
  for (int i = 100; i < 120; ++i) id_far.push_back(i);
  CHECK(fpr_at_tpr(id_far, ramp20, 0.95) == doctest::Approx(0.0));
}

TEST_CASE("fpr@tpr agrees with exhaustive sweeps in both conventions") {
  for (uint64_t seed = 0; seed < 25; ++seed) {
    Rng rng(seed + 2000);
    const size_t n_id = 5 + rng.below(80);
    const size_t n_ood = 5 + rng.below(80);
    auto id = random_scores(n_id, seed * 3 + 1, 0, 4, true);
    auto ood = random_scores(n_ood, seed * 3 + 2, -2, 3, true);
    for (double tpr : {0.8, 0.9, 0.95}) {
      CHECK(fpr_at_tpr(id, ood, tpr, FprConvention::ood_positive) ==
            doctest::Approx(fpr_brute_ood_positive(id, ood, tpr)).epsilon(1e-12));
      CHECK(fpr_at_tpr(id, ood, tpr, FprConvention::id_positive) ==
            doctest::Approx(fpr_brute_id_positive(id, ood, tpr)).epsilon(1e-12));
    }
  }
}

TEST_CASE("fpr conventions differ under asymmetric overlap") {
  // ID has a long low tail; OOD is tight. The two conventions threshold
  // different distributions, so they disagree here.
  std::vector<double> id{-10, -9, -8, 1, 2, 3, 4, 5, 6, 7};
  std::vector<double> ood{0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  const double f_ood = fpr_at_tpr(id, ood, 0.9, FprConvention::ood_positive);
  const double f_id = fpr_at_tpr(id, ood, 0.9, FprConvention::id_positive);
  CHECK(f_ood != doctest::Approx(f_id));
}

TEST_CASE("aupr hand values") {
  // Single positive below the negative: AP = 0.5.
  CHECK(aupr({1}, {2}, true) == doctest::Approx(0.5));
  // Perfect ranking.
  CHECK(aupr({3, 4}, {1, 2}, true) == doctest::Approx(1.0));
  // All tied: precision equals prevalence.
  CHECK(aupr({5, 5}, {5, 5, 5, 5, 5, 5}, true) == doctest::Approx(0.25));
  // positive_is_high=false mirrors the ranking.
  CHECK(aupr({1, 2}, {3, 4}, false) == doctest::Approx(1.0));
}

TEST_CASE("aupr matches the quadratic oracle on tie-heavy data") {
  for (uint64_t seed = 0; seed < 25; ++seed) {
    Rng rng(seed + 3000);
    const size_t n_pos = 2 + rng.below(50);
    const size_t n_neg = 2 + rng.below(50);
    auto pos = random_scores(n_pos, seed * 5 + 1, -1, 3, true);
    auto neg = random_scores(n_neg, seed * 5 + 2, -2, 2, true);
    for (bool high : {true, false})
      CHECK(aupr(pos, neg, high) ==
            doctest::Approx(aupr_brute(pos, neg, high)).epsilon(1e-12));
  }
}

TEST_CASE("midranks average over tie groups") {
  auto r = midranks({10.0, 20.0, 20.0, 30.0});
  REQUIRE(r.size() == 4);
  CHECK(r[0] == doctest::Approx(1.0));
  CHECK(r[1] == doctest::Approx(2.5));
  CHECK(r[2] == doctest::Approx(2.5));
  CHECK(r[3] == doctest::Approx(4.0));

  auto all_tied = midranks({7.0, 7.0, 7.0});
  for (double v : all_tied) CHECK(v == doctest::Approx(2.0));
}

TEST_CASE("metrics validate their inputs") {
  CHECK(metric_error({}, {1.0}) == ErrorKind::argument);
  CHECK(metric_error({1.0}, {}) == ErrorKind::argument);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK(metric_error({nan}, {1.0}) == ErrorKind::validation);
  CHECK(metric_error({1.0}, {std::numeric_limits<double>::infinity()}) ==
        ErrorKind::validation);

  try {
    fpr_at_tpr({1.0}, {2.0}, 0.0);
    FAIL("expected argument error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::argument);
  }
  try {
    fpr_at_tpr({1.0}, {2.0}, 1.5);
    FAIL("expected argument error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::argument);
  }
}
