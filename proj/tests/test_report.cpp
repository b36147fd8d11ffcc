#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "doctest.h"
#include "nlohmann/json.hpp"
#include "oodflow/error.hpp"
#include "oodflow/histogram.hpp"
#include "oodflow/metrics.hpp"
#include "oodflow/report.hpp"
#include "oodflow/rng.hpp"

using namespace oodflow;
using nlohmann::json;

namespace {

ScoredDataset dataset(std::string name, std::string category, size_t n,
                      uint64_t seed, double mean) {
  ScoredDataset d;
  d.name = std::move(name);
  d.category = std::move(category);
  Rng rng(seed);
  d.scores.resize(n);
  for (auto& v : d.scores) v = mean + rng.gaussian();
  return d;
}

ErrorKind catch_kind(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::numerical;
}

}  // namespace

TEST_CASE("single OOD set: micro equals the per-dataset row") {
  auto id = dataset("id_test", "", 300, 1, 2.0);
  auto ood = dataset("shift", "near", 200, 2, 0.0);
  EvalOptions opt;
  opt.n_boot = 0;
  auto rep = evaluate_suite(id, {ood}, opt);

  REQUIRE(rep.per_dataset.size() == 1);
  CHECK(rep.micro.n_ood == 200);
  CHECK(rep.micro.metrics.auroc.value == rep.per_dataset[0].metrics.auroc.value);
  CHECK(rep.micro.metrics.fpr.value == rep.per_dataset[0].metrics.fpr.value);
  CHECK(rep.micro.metrics.aupr_in.value ==
        rep.per_dataset[0].metrics.aupr_in.value);
  CHECK(rep.micro.metrics.aupr_out.value ==
        rep.per_dataset[0].metrics.aupr_out.value);

  // And the values agree with direct metric calls.
  CHECK(rep.per_dataset[0].metrics.auroc.value ==
        doctest::Approx(auroc(id.scores, ood.scores)).epsilon(1e-12));
  CHECK(rep.per_dataset[0].metrics.fpr.value ==
        doctest::Approx(fpr_at_tpr(id.scores, ood.scores, 0.95)).epsilon(1e-12));
}

TEST_CASE("macro rows average member datasets; micro pools the samples") {
  auto id = dataset("id_test", "", 400, 3, 2.5);
  auto near_a = dataset("near_a", "near", 150, 4, 1.0);
  auto near_b = dataset("near_b", "near", 250, 5, 0.5);
  auto far_c = dataset("far_c", "far", 100, 6, -2.0);
  EvalOptions opt;
  opt.n_boot = 0;
  auto rep = evaluate_suite(id, {near_a, near_b, far_c}, opt);

  REQUIRE(rep.per_dataset.size() == 3);
  REQUIRE(rep.per_category.size() == 2);
  CHECK(rep.per_category[0].name == "near");
  CHECK(rep.per_category[1].name == "far");
  CHECK(rep.per_category[0].n_ood == 400);
  CHECK(rep.per_category[1].n_ood == 100);

  const double macro_auroc = 0.5 * (rep.per_dataset[0].metrics.auroc.value +
                                    rep.per_dataset[1].metrics.auroc.value);
  CHECK(rep.per_category[0].metrics.auroc.value ==
        doctest::Approx(macro_auroc).epsilon(1e-12));

  std::vector<double> pooled = near_a.scores;
  pooled.insert(pooled.end(), near_b.scores.begin(), near_b.scores.end());
  pooled.insert(pooled.end(), far_c.scores.begin(), far_c.scores.end());
  CHECK(rep.micro.n_ood == 500);
  CHECK(rep.micro.metrics.auroc.value ==
        doctest::Approx(auroc(id.scores, pooled)).epsilon(1e-12));
}

TEST_CASE("bootstrap CIs appear when requested and bracket the value") {
  auto id = dataset("id_test", "", 250, 7, 2.0);
  auto ood = dataset("shift", "near", 250, 8, 0.0);
  EvalOptions opt;
  opt.n_boot = 300;
  opt.seed = 5;
  auto rep = evaluate_suite(id, {ood}, opt);

  for (const MetricValue* mv :
       {&rep.per_dataset[0].metrics.fpr, &rep.per_dataset[0].metrics.auroc,
        &rep.per_dataset[0].metrics.aupr_in,
        &rep.per_dataset[0].metrics.aupr_out}) {
    CHECK(mv->has_ci);
    CHECK(mv->lo <= mv->value + 1e-12);
    CHECK(mv->value <= mv->hi + 1e-12);
  }
  // Macro rows carry plain means, no CIs.
  CHECK_FALSE(rep.per_category[0].metrics.auroc.has_ci);

  EvalOptions off;
  off.n_boot = 0;
  auto rep0 = evaluate_suite(id, {ood}, off);
  CHECK_FALSE(rep0.per_dataset[0].metrics.auroc.has_ci);
  CHECK(rep0.per_dataset[0].metrics.auroc.value ==
        rep.per_dataset[0].metrics.auroc.value);
}

TEST_CASE("evaluation is deterministic in the seed") {
  auto id = dataset("id_test", "", 200, 9, 1.5);
  auto ood = dataset("shift", "near", 200, 10, 0.0);
  EvalOptions opt;
  opt.n_boot = 200;
  opt.seed = 11;
  auto r1 = evaluate_suite(id, {ood}, opt);
  auto r2 = evaluate_suite(id, {ood}, opt);
  CHECK(report_to_json(r1) == report_to_json(r2));

  opt.seed = 12;
  auto r3 = evaluate_suite(id, {ood}, opt);
  CHECK(r1.per_dataset[0].metrics.auroc.lo !=
        r3.per_dataset[0].metrics.auroc.lo);
}

TEST_CASE("evaluate_suite validates inputs") {
  auto id = dataset("id_test", "", 100, 13, 1.0);
  CHECK(catch_kind([&] { evaluate_suite(id, {}); }) == ErrorKind::argument);

  auto bad = dataset("bad", "", 50, 14, 0.0);
  bad.scores[10] = std::numeric_limits<double>::quiet_NaN();
  CHECK(catch_kind([&] { evaluate_suite(id, {bad}); }) ==
        ErrorKind::validation);

  ScoredDataset empty;
  empty.name = "empty";
  CHECK(catch_kind([&] { evaluate_suite(id, {empty}); }) ==
        ErrorKind::validation);
}

TEST_CASE("comparing a scorer against itself is a null result") {
  Rng rng(15);
  std::vector<double> scores;
  std::vector<uint8_t> is_id;
  for (size_t i = 0; i < 300; ++i) {
    const bool id = i < 150;
    scores.push_back((id ? 1.5 : 0.0) + rng.gaussian());
    is_id.push_back(id ? 1 : 0);
  }
  auto rec = compare_scorers("flow", scores, "flow2", scores, is_id, "micro",
                             200, 3);
  CHECK(rec.scorer_a == "flow");
  CHECK(rec.scorer_b == "flow2");
  CHECK(rec.dataset == "micro");
  CHECK(rec.delta_auc == 0.0);
  CHECK(rec.auc_a == rec.auc_b);
  CHECK(rec.delong_p == doctest::Approx(1.0));
  CHECK(rec.bootstrap_p == doctest::Approx(1.0));
}

TEST_CASE("comparisons separate a real scorer from noise") {
  Rng rng(16);
  std::vector<double> good, bad;
  std::vector<uint8_t> is_id;
  for (size_t i = 0; i < 500; ++i) {
    const bool id = i < 250;
    good.push_back((id ? 2.0 : 0.0) + rng.gaussian());
    bad.push_back(rng.gaussian());
    is_id.push_back(id ? 1 : 0);
  }
  auto rec = compare_scorers("good", good, "bad", bad, is_id, "micro", 400, 7);
  CHECK(rec.delta_auc > 0.3);
  CHECK(rec.delong_p < 0.01);
  CHECK(rec.bootstrap_p <= 0.01);
}

TEST_CASE("json report carries the full schema") {
  auto id = dataset("id_test", "", 150, 17, 2.0);
  auto near = dataset("shift_near", "near", 100, 18, 1.0);
  auto far = dataset("shift_far", "far", 100, 19, -1.0);
  EvalOptions opt;
  opt.n_boot = 50;
  auto rep = evaluate_suite(id, {near, far}, opt);
  rep.id_name = "id_test";

  const auto j = json::parse(report_to_json(rep));
  CHECK(j.at("schema_version").get<int>() == 1);
  CHECK(j.at("id_dataset").get<std::string>() == "id_test");
  CHECK(j.at("n_id").get<size_t>() == 150);
  CHECK(j.at("tpr_target").get<double>() == doctest::Approx(0.95));
  CHECK(j.at("fpr_convention").get<std::string>() == "ood_positive");
  REQUIRE(j.at("datasets").size() == 2);
  const auto& row = j.at("datasets").at(0);
  CHECK(row.at("name").get<std::string>() == "shift_near");
  CHECK(row.at("category").get<std::string>() == "near");
  CHECK(row.at("n_ood").get<size_t>() == 100);
  for (const char* metric : {"fpr_at_tpr", "auroc", "aupr_in", "aupr_out"}) {
    CHECK(row.at(metric).contains("value"));
    CHECK(row.at(metric).contains("ci"));
    const auto& ci = row.at(metric).at("ci");
    REQUIRE(ci.size() == 2);
    CHECK(ci.at(0).get<double>() <= ci.at(1).get<double>());
  }
  CHECK(j.at("categories").size() == 2);
  CHECK_FALSE(j.at("categories").at(0).at("auroc").contains("ci"));
  CHECK(j.at("micro").at("n_ood").get<size_t>() == 200);
  CHECK(j.contains("comparisons"));
}

TEST_CASE("comparison placeholder is not serialized when empty") {
  auto id = dataset("id", "", 60, 20, 1.0);
  auto ood = dataset("o", "c", 60, 21, 0.0);
  EvalOptions opt;
  opt.n_boot = 0;
  auto rep = evaluate_suite(id, {ood}, opt);
  const auto j = json::parse(report_to_json(rep));
  CHECK(j.at("comparisons").empty());
}

TEST_CASE("text report renders aligned percent values") {
  auto id = dataset("id_test", "", 200, 22, 3.0);
  auto near = dataset("blob_near", "near", 150, 23, 0.0);
  EvalOptions opt;
  opt.n_boot = 0;
  auto rep = evaluate_suite(id, {near}, opt);
  rep.id_name = "id_test";
  const std::string text = report_to_text(rep);

  CHECK(text.find("id_test") != std::string::npos);
  CHECK(text.find("blob_near") != std::string::npos);
  CHECK(text.find("FPR@95") != std::string::npos);
  CHECK(text.find("AUROC") != std::string::npos);
  CHECK(text.find("AUPR-IN") != std::string::npos);
  CHECK(text.find("AUPR-OUT") != std::string::npos);
  CHECK(text.find("micro") != std::string::npos);

  // Two-decimal percent of the AUROC value must appear verbatim.
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.2f",
                100.0 * rep.per_dataset[0].metrics.auroc.value);
  CHECK(text.find(buf) != std::string::npos);
}

TEST_CASE("text report lists comparisons when present") {
  auto id = dataset("id_test", "", 100, 24, 2.0);
  auto ood = dataset("o", "c", 100, 25, 0.0);
  EvalOptions opt;
  opt.n_boot = 0;
  auto rep = evaluate_suite(id, {ood}, opt);

  std::vector<double> pooled = id.scores;
  pooled.insert(pooled.end(), ood.scores.begin(), ood.scores.end());
  std::vector<uint8_t> is_id(200, 0);
  std::fill(is_id.begin(), is_id.begin() + 100, 1);
  rep.comparisons.push_back(compare_scorers("flow", pooled, "energy", pooled,
                                            is_id, "micro", 100, 1));
  const std::string text = report_to_text(rep);
  CHECK(text.find("flow") != std::string::npos);
  CHECK(text.find("energy") != std::string::npos);
  CHECK(text.find("delong_p") != std::string::npos);
  CHECK(text.find("bootstrap_p") != std::string::npos);
}

TEST_CASE("histogram: counts sum to group sizes, top edge inclusive") {
  HistogramGroup a{"id", {0.0, 0.5, 1.0, 1.0, 2.0}};
  HistogramGroup b{"ood", {-1.0, 0.25, 2.0}};  // 2.0 = global max, top bin
  auto h = compute_histogram({a, b}, 6);
  REQUIRE(h.edges.size() == 7);
  CHECK(h.edges.front() == doctest::Approx(-1.0));
  CHECK(h.edges.back() == doctest::Approx(2.0));
  REQUIRE(h.counts.size() == 2);
  size_t sum_a = 0, sum_b = 0;
  for (size_t c : h.counts[0]) sum_a += c;
  for (size_t c : h.counts[1]) sum_b += c;
  CHECK(sum_a == 5);
  CHECK(sum_b == 3);
  CHECK(h.counts[0].back() == 1);  // the 2.0 in group a
  CHECK(h.counts[1].back() == 1);  // the 2.0 in group b
}

TEST_CASE("histogram: point mass lands in a single widened bin") {
  HistogramGroup a{"const", {3.0, 3.0, 3.0}};
  auto h = compute_histogram({a}, 4);
  CHECK(h.edges.front() == doctest::Approx(2.5));
  CHECK(h.edges.back() == doctest::Approx(3.5));
  size_t nonzero = 0, total = 0;
  for (size_t c : h.counts[0]) {
    nonzero += c > 0 ? 1 : 0;
    total += c;
  }
  CHECK(nonzero == 1);
  CHECK(total == 3);
}

TEST_CASE("histogram: disjoint groups do not overlap bins") {
  HistogramGroup lo{"lo", {0.0, 0.1, 0.2}};
  HistogramGroup hi{"hi", {10.0, 10.1, 10.2}};
  auto h = compute_histogram({lo, hi}, 10);
  for (size_t bin = 0; bin < 10; ++bin)
    CHECK((h.counts[0][bin] == 0 || h.counts[1][bin] == 0));
}

TEST_CASE("histogram: empty groups are skipped and reported") {
  HistogramGroup a{"full", {1.0, 2.0}};
  HistogramGroup b{"hollow", {}};
  auto h = compute_histogram({a, b}, 3);
  REQUIRE(h.names.size() == 1);
  CHECK(h.names[0] == "full");
  REQUIRE(h.skipped.size() == 1);
  CHECK(h.skipped[0] == "hollow");

  CHECK(catch_kind([&] { compute_histogram({b}, 3); }) == ErrorKind::argument);
  CHECK(catch_kind([&] { compute_histogram({a}, 1); }) == ErrorKind::argument);
  HistogramGroup nan_group{"nan", {std::numeric_limits<double>::quiet_NaN()}};
  CHECK(catch_kind([&] { compute_histogram({nan_group}, 3); }) ==
        ErrorKind::validation);
}

TEST_CASE("histogram serializers") {
  HistogramGroup a{"id", {0.0, 1.0, 2.0}};
  HistogramGroup b{"ood", {0.5, 1.5}};
  auto h = compute_histogram({a, b}, 4);

  const std::string csv = histogram_to_csv(h);
  CHECK(csv.rfind("bin_lo,bin_hi,count_id,count_ood\n", 0) == 0);
  size_t lines = 0;
  for (char c : csv) lines += c == '\n' ? 1 : 0;
  CHECK(lines == 5);  // header + 4 bins

  const std::string svg = histogram_to_svg(h);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("polygon") != std::string::npos);
  CHECK(svg.find("id") != std::string::npos);
  CHECK(svg.find("ood") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
}
