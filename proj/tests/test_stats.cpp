#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "oodflow/error.hpp"
#include "oodflow/metrics.hpp"
#include "oodflow/rng.hpp"
#include "oodflow/stats.hpp"

using namespace oodflow;

namespace {

struct Paired {
  std::vector<double> a, b;
  std::vector<uint8_t> is_id;
};

// Two correlated scorers over the same pooled sample: scorer a is the true
// signal, scorer b the signal plus noise.
Paired correlated_scorers(size_t n_per_class, double sep, double noise_sd,
                          uint64_t seed) {
  Paired p;
  Rng rng(seed);
  for (size_t i = 0; i < 2 * n_per_class; ++i) {
    const bool id = i < n_per_class;
    const double x = (id ? sep : 0.0) + rng.gaussian();
    p.a.push_back(x);
    p.b.push_back(x + noise_sd * rng.gaussian());
    p.is_id.push_back(id ? 1 : 0);
  }
  return p;
}

std::vector<double> split(const Paired& p, const std::vector<double>& s,
                          bool want_id) {
  std::vector<double> out;
  for (size_t i = 0; i < s.size(); ++i)
    if ((p.is_id[i] != 0) == want_id) out.push_back(s[i]);
  return out;
}

}  // namespace

TEST_CASE("delong on identical scorers: zero delta, p = 1") {
  auto p = correlated_scorers(40, 1.0, 0.0, 5);
  auto r = delong_test(p.a, p.a, p.is_id);
  CHECK(r.delta_auc == 0.0);
  CHECK(r.p_value == doctest::Approx(1.0));
  CHECK(r.auc_a == doctest::Approx(r.auc_b));
}

TEST_CASE("delong separates a perfect scorer from an inverted one") {
  std::vector<double> a, b;
  std::vector<uint8_t> is_id;
  for (int i = 0; i < 10; ++i) {
    a.push_back(100 + i);
    b.push_back(-100 - i);
    is_id.push_back(1);
  }
  for (int i = 0; i < 10; ++i) {
    a.push_back(i);
    b.push_back(-i);
    is_id.push_back(0);
  }
  auto r = delong_test(a, b, is_id);
  CHECK(r.auc_a == doctest::Approx(1.0));
  CHECK(r.auc_b == doctest::Approx(0.0));
  CHECK(r.delta_auc == doctest::Approx(1.0));
  CHECK(r.p_value < 0.01);
}

TEST_CASE("delong AUCs equal the standalone estimator exactly") {
  auto p = correlated_scorers(60, 1.2, 0.8, 9);
  auto r = delong_test(p.a, p.b, p.is_id);
  const double auc_a = auroc(split(p, p.a, true), split(p, p.a, false));
  const double auc_b = auroc(split(p, p.b, true), split(p, p.b, false));
  CHECK(std::fabs(r.auc_a - auc_a) < 1e-12);
  CHECK(std::fabs(r.auc_b - auc_b) < 1e-12);
  CHECK(std::fabs(r.delta_auc - (auc_a - auc_b)) < 1e-12);
}

TEST_CASE("delong is antisymmetric under swapping the scorers") {
  auto p = correlated_scorers(50, 0.8, 1.0, 11);
  auto r_ab = delong_test(p.a, p.b, p.is_id);
  auto r_ba = delong_test(p.b, p.a, p.is_id);
  CHECK(r_ab.delta_auc == doctest::Approx(-r_ba.delta_auc).epsilon(1e-12));
  CHECK(r_ab.p_value == doctest::Approx(r_ba.p_value).epsilon(1e-12));
  CHECK(r_ab.var_delta == doctest::Approx(r_ba.var_delta).epsilon(1e-12));
}

TEST_CASE("delong p-value grows with added noise, shrinks with real gaps") {
  // Same signal plus small noise: near-equal AUCs, large p.
  auto close_pair = correlated_scorers(200, 1.5, 0.05, 21);
  auto r_close = delong_test(close_pair.a, close_pair.b, close_pair.is_id);
  CHECK(r_close.p_value > 0.05);

  // Scorer b destroyed: significant difference.
  auto p2 = correlated_scorers(200, 1.5, 0.0, 22);
  std::vector<double> shuffled = p2.b;
  Rng rng(23);
  for (size_t i = shuffled.size(); i > 1; --i)
    std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
  auto r_far = delong_test(p2.a, shuffled, p2.is_id);
  CHECK(r_far.p_value < 0.01);
}

TEST_CASE("delong rejects malformed inputs") {
  std::vector<double> a{1, 2, 3, 4}, b{1, 2, 3};
  std::vector<uint8_t> is_id{1, 1, 0, 0};
  try {
    delong_test(a, b, is_id);
    FAIL("expected argument error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::argument);
  }
  // Fewer than two samples in one role.
  std::vector<double> s{1, 2, 3};
  std::vector<uint8_t> one_id{1, 0, 0};
  try {
    delong_test(s, s, one_id);
    FAIL("expected argument error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::argument);
  }
}

TEST_CASE("bootstrap_ci on a constant metric is a point interval") {
  auto id = std::vector<double>{4, 4, 4, 4, 4, 4};
  auto ood = std::vector<double>{1, 1, 1, 1, 1, 1};
  auto ci = bootstrap_ci(id, ood, [](const auto& i, const auto& o) {
    return auroc(i, o);
  }, 200, 3);
  CHECK(ci.lo == doctest::Approx(1.0));
  CHECK(ci.hi == doctest::Approx(1.0));
  CHECK(ci.retained == 200);
}

TEST_CASE("bootstrap_ci is deterministic in the seed and brackets the value") {
  Rng rng(31);
  std::vector<double> id(120), ood(150);
  for (auto& v : id) v = 1.0 + rng.gaussian();
  for (auto& v : ood) v = rng.gaussian();
  MetricFn metric = [](const auto& i, const auto& o) { return auroc(i, o); };

  auto c1 = bootstrap_ci(id, ood, metric, 500, 17);
  auto c2 = bootstrap_ci(id, ood, metric, 500, 17);
  CHECK(c1.lo == c2.lo);
  CHECK(c1.hi == c2.hi);
  auto c3 = bootstrap_ci(id, ood, metric, 500, 18);
  CHECK((c3.lo != c1.lo || c3.hi != c1.hi));

  const double point = auroc(id, ood);
  CHECK(c1.lo <= point);
  CHECK(point <= c1.hi);
  CHECK(c1.lo < c1.hi);
}

TEST_CASE("bootstrap_ci covers the population AUROC at roughly nominal rate") {
  // Gaussian ID N(mu,1) vs OOD N(0,1): population AUROC = Phi(mu/sqrt(2)).
  const double mu = 1.0;
  const double truth = 0.5 * std::erfc(-mu / (std::sqrt(2.0) * std::sqrt(2.0)));
  MetricFn metric = [](const auto& i, const auto& o) { return auroc(i, o); };
  int covered = 0;
  const int runs = 20;
  for (int t = 0; t < runs; ++t) {
    Rng rng(400 + t);
    std::vector<double> id(250), ood(250);
    for (auto& v : id) v = mu + rng.gaussian();
    for (auto& v : ood) v = rng.gaussian();
    auto ci = bootstrap_ci(id, ood, metric, 400, 1000 + t);
    if (ci.lo <= truth && truth <= ci.hi) ++covered;
  }
  CHECK(covered >= 17);  // ~95% nominal; allow a few misses in 20
}

TEST_CASE("bootstrap_compare of a scorer with itself gives p = 1") {
  auto p = correlated_scorers(60, 1.0, 0.0, 41);
  auto r = bootstrap_compare(p.a, p.a, p.is_id, 300, 7);
  CHECK(r.mean_delta == 0.0);
  CHECK(r.p_value == doctest::Approx(1.0));
  CHECK(r.retained == 300);
}

TEST_CASE("bootstrap_compare is symmetric under exchanging the scorers") {
  auto p = correlated_scorers(80, 1.0, 0.7, 43);
  auto r_ab = bootstrap_compare(p.a, p.b, p.is_id, 400, 11);
  auto r_ba = bootstrap_compare(p.b, p.a, p.is_id, 400, 11);
  CHECK(r_ab.p_value == r_ba.p_value);
  CHECK(r_ab.mean_delta == doctest::Approx(-r_ba.mean_delta).epsilon(1e-12));
  CHECK(r_ab.retained == r_ba.retained);
}

TEST_CASE("bootstrap_compare flags a real scorer gap") {
  // Scorer a sees the separation; scorer b is pure noise.
  Paired p;
  Rng rng(51);
  for (size_t i = 0; i < 400; ++i) {
    const bool id = i < 200;
    p.a.push_back((id ? 2.0 : 0.0) + rng.gaussian());
    p.b.push_back(rng.gaussian());
    p.is_id.push_back(id ? 1 : 0);
  }
  auto r = bootstrap_compare(p.a, p.b, p.is_id, 500, 13);
  CHECK(r.p_value <= 0.01);
  CHECK(r.mean_delta > 0.2);
}

TEST_CASE("bootstrap_compare p-value floors at 1/n_boot") {
  Paired p;
  for (int i = 0; i < 20; ++i) {
    p.a.push_back(100 + i);
    p.b.push_back(-i);
    p.is_id.push_back(1);
  }
  for (int i = 0; i < 20; ++i) {
    p.a.push_back(i);
    p.b.push_back(100 + i);
    p.is_id.push_back(0);
  }
  auto r = bootstrap_compare(p.a, p.b, p.is_id, 250, 5);
  CHECK(r.p_value == doctest::Approx(1.0 / 250.0));
}

TEST_CASE("delong and bootstrap comparisons broadly agree") {
  // Moderate real difference: both procedures should land on the same side
  // of significance most of the time; compare their p-values loosely.
  int agree = 0;
  for (uint64_t s = 0; s < 6; ++s) {
    auto p = correlated_scorers(150, 1.0, 0.9, 600 + s);
    auto d = delong_test(p.a, p.b, p.is_id);
    auto b = bootstrap_compare(p.a, p.b, p.is_id, 400, 700 + s);
    if (std::fabs(d.p_value - b.p_value) < 0.15 ||
        ((d.p_value < 0.05) == (b.p_value < 0.05)))
      ++agree;
  }
  CHECK(agree >= 5);
}
