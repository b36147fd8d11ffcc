#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "oodflow/error.hpp"
#include "oodflow/flow.hpp"
#include "oodflow/mat.hpp"
#include "oodflow/reference.hpp"
#include "oodflow/rng.hpp"

using namespace oodflow;

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

MatF row1(std::initializer_list<float> vals) {
  MatF m(1, vals.size());
  std::copy(vals.begin(), vals.end(), m.v.begin());
  return m;
}

MatF random_mat(size_t rows, size_t cols, uint64_t seed, float scale = 1.0f) {
  MatF m(rows, cols);
  Rng rng(seed);
  for (auto& v : m.v) v = scale * static_cast<float>(rng.gaussian());
  return m;
}

// Fresh models are identity only once ActNorm stats are set; for hand cases
// we want the literal identity map.
void mark_initialized(FlowModel& m) {
  for (auto& an : m.actnorms) an.initialized = true;
}

FlowModel identity_flow(uint32_t dim, uint32_t blocks,
                        std::vector<uint32_t> hidden = {8}) {
  FlowModel m = make_flow(dim, blocks, hidden, 2.0f, 7);
  mark_initialized(m);
  return m;
}

// Adds small noise to every parameter (including the zero-initialized final
// layers) so couplings act nontrivially.
void perturb_model(FlowModel& m, uint64_t seed, float scale = 0.3f) {
  Rng rng(seed);
  visit_params(m, [&](std::vector<float>& p) {
    for (auto& v : p) v += scale * static_cast<float>(rng.gaussian());
  });
  mark_initialized(m);
  refresh_derived(m);
}

// Bias-only 1->1 net computing a constant; used for hand-computable couplings.
Mlp constant_net(size_t in, float value) {
  Mlp net;
  net.layers.emplace_back();
  net.layers[0].resize(in, 1);
  std::fill(net.layers[0].w.begin(), net.layers[0].w.end(), 0.0f);
  net.layers[0].b[0] = value;
  net.layers[0].refresh();
  return net;
}

// log|det J| via finite differences on the double-precision reference model,
// with partial-pivot Gaussian elimination for the determinant.
double fd_logdet(const ref::RefModel<double>& rm, const std::vector<double>& x,
                 double eps = 1e-6) {
  const size_t d = rm.dim;
  std::vector<double> jac(d * d);
  for (size_t j = 0; j < d; ++j) {
    std::vector<double> xp = x, xm = x;
    xp[j] += eps;
    xm[j] -= eps;
    double ld = 0.0;
    auto zp = ref::to_latent_row(rm, xp, ld);
    auto zm = ref::to_latent_row(rm, xm, ld);
    for (size_t i = 0; i < d; ++i) jac[i * d + j] = (zp[i] - zm[i]) / (2 * eps);
  }
  double log_abs_det = 0.0;
  for (size_t c = 0; c < d; ++c) {
    size_t piv = c;
    for (size_t r = c + 1; r < d; ++r)
      if (std::fabs(jac[r * d + c]) > std::fabs(jac[piv * d + c])) piv = r;
    if (piv != c)
      for (size_t k = 0; k < d; ++k) std::swap(jac[c * d + k], jac[piv * d + k]);
    REQUIRE(std::fabs(jac[c * d + c]) > 1e-14);
    log_abs_det += std::log(std::fabs(jac[c * d + c]));
    for (size_t r = c + 1; r < d; ++r) {
      const double f = jac[r * d + c] / jac[c * d + c];
      for (size_t k = c; k < d; ++k) jac[r * d + k] -= f * jac[c * d + k];
    }
  }
  return log_abs_det;
}

}  // namespace

TEST_CASE("actnorm identity parameters leave data unchanged") {
  ActNorm an;
  an.init_identity(3);
  MatF x = random_mat(4, 3, 11);
  MatF y;
  std::vector<double> ld;
  actnorm_apply(an, LayerDir::forward, x, y, ld);
  CHECK(std::memcmp(x.v.data(), y.v.data(), x.v.size() * 4) == 0);
  for (double v : ld) CHECK(v == 0.0);
}

TEST_CASE("actnorm hand case: scale 2, bias 1") {
  ActNorm an;
  an.log_scale = {std::log(2.0f)};
  an.bias = {1.0f};
  an.initialized = true;
  MatF x = row1({0.0f});
  MatF y;
  std::vector<double> ld;
  actnorm_apply(an, LayerDir::forward, x, y, ld);
  CHECK(y.at(0, 0) == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(ld[0] == doctest::Approx(std::log(2.0)).epsilon(1e-6));

  MatF back;
  std::vector<double> ld_inv;
  actnorm_apply(an, LayerDir::inverse, y, back, ld_inv);
  CHECK(back.at(0, 0) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(ld_inv[0] == doctest::Approx(-std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("actnorm logdet accumulates across calls") {
  ActNorm an;
  an.log_scale = {std::log(2.0f), 0.0f};
  an.bias = {0.0f, 0.0f};
  an.initialized = true;
  MatF x = random_mat(2, 2, 3);
  MatF y;
  std::vector<double> ld{5.0, 5.0};
  actnorm_apply(an, LayerDir::forward, x, y, ld);
  for (double v : ld) CHECK(v == doctest::Approx(5.0 + std::log(2.0)));
}

TEST_CASE("actnorm_init standardizes the init batch") {
  // Data {1, 3} per dim 0 and {5, 9} per dim 1: means (2, 7), stds (1, 2).
  FlowModel m = make_flow(2, 1, {4}, 2.0f, 5);
  MatF batch(2, 2);
  batch.at(0, 0) = 1.0f;
  batch.at(0, 1) = 5.0f;
  batch.at(1, 0) = 3.0f;
  batch.at(1, 1) = 9.0f;
  actnorm_init(m, batch);
  REQUIRE(m.actnorms[0].initialized);
  CHECK(m.actnorms[0].bias[0] == doctest::Approx(-2.0f));
  CHECK(m.actnorms[0].bias[1] == doctest::Approx(-7.0f));
  CHECK(m.actnorms[0].log_scale[0] == doctest::Approx(0.0f));
  CHECK(m.actnorms[0].log_scale[1] == doctest::Approx(-std::log(2.0f)));

  MatF y;
  std::vector<double> ld;
  actnorm_apply(m.actnorms[0], LayerDir::forward, batch, y, ld);
  CHECK(y.at(0, 0) == doctest::Approx(-1.0f));
  CHECK(y.at(1, 0) == doctest::Approx(1.0f));
  CHECK(y.at(0, 1) == doctest::Approx(-1.0f));
  CHECK(y.at(1, 1) == doctest::Approx(1.0f));
}

TEST_CASE("actnorm_init yields near zero mean, unit std per block input") {
  FlowModel m = make_flow(6, 4, {16}, 2.0f, 21);
  perturb_model(m, 77);  // nontrivial couplings between blocks
  for (auto& an : m.actnorms) an.initialized = false;
  MatF batch = random_mat(512, 6, 9, 3.0f);
  for (size_t r = 0; r < batch.rows; ++r) batch.at(r, 2) += 10.0f;
  actnorm_init(m, batch);

  // Walk the first block: its post-ActNorm activations must be standardized.
  MatF a;
  std::vector<double> ld;
  actnorm_apply(m.actnorms[0], LayerDir::forward, batch, a, ld);
  for (size_t d = 0; d < a.cols; ++d) {
    double mean = 0.0, sq = 0.0;
    for (size_t r = 0; r < a.rows; ++r) mean += a.at(r, d);
    mean /= static_cast<double>(a.rows);
    for (size_t r = 0; r < a.rows; ++r) {
      const double c = a.at(r, d) - mean;
      sq += c * c;
    }
    const double sd = std::sqrt(sq / static_cast<double>(a.rows));
    CHECK(std::fabs(mean) < 1e-4);
    CHECK(std::fabs(sd - 1.0) < 1e-3);
  }
}

TEST_CASE("scoring with uninitialized actnorm is a state error") {
  FlowModel m = make_flow(4, 2, {8}, 2.0f, 3);
  MatF x = random_mat(2, 4, 1);
  try {
    log_prob(m, x);
    FAIL("expected state error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::state);
  }
}

TEST_CASE("fresh coupling (zero final layers) is the identity") {
  FlowModel m = make_flow(5, 2, {16, 16}, 2.0f, 13);
  MatF x = random_mat(6, 5, 2);
  MatF y;
  std::vector<double> ld;
  coupling_apply(m.couplings[0], LayerDir::forward, x, y, ld);
  CHECK(std::memcmp(x.v.data(), y.v.data(), x.v.size() * 4) == 0);
  for (double v : ld) CHECK(v == 0.0);
}

TEST_CASE("coupling hand case: constant s=ln2, t=0.5") {
  Coupling c;
  c.mask = {1, 0};  // dim 0 passes through, dim 1 changes
  c.clamp = 1000.0f;  // effectively no clamping so s_eff ~= ln 2 exactly
  c.s_net = constant_net(1, std::log(2.0f));
  c.t_net = constant_net(1, 0.5f);
  c.rebuild_index();

  MatF x = row1({1.0f, 2.0f});
  MatF y;
  std::vector<double> ld;
  coupling_apply(c, LayerDir::forward, x, y, ld);
  CHECK(y.at(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(y.at(0, 1) == doctest::Approx(4.5).epsilon(1e-5));  // 2*2 + 0.5
  CHECK(ld[0] == doctest::Approx(std::log(2.0)).epsilon(1e-5));

  MatF back;
  std::vector<double> ld_inv;
  coupling_apply(c, LayerDir::inverse, y, back, ld_inv);
  CHECK(back.at(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(back.at(0, 1) == doctest::Approx(2.0).epsilon(1e-5));
  CHECK(ld_inv[0] == doctest::Approx(-std::log(2.0)).epsilon(1e-5));
}

TEST_CASE("coupling scale saturates at the clamp") {
  Coupling c;
  c.mask = {1, 0};
  c.clamp = 2.0f;
  c.s_net = constant_net(1, 50.0f);  // far past the clamp
  c.t_net = constant_net(1, 0.0f);
  c.rebuild_index();
  MatF x = row1({0.0f, 1.0f});
  MatF y;
  std::vector<double> ld;
  coupling_apply(c, LayerDir::forward, x, y, ld);
  CHECK(y.at(0, 1) == doctest::Approx(std::exp(2.0)).epsilon(1e-4));
  CHECK(ld[0] == doctest::Approx(2.0).epsilon(1e-4));
}

TEST_CASE("perturbed coupling: inverse undoes forward, logdet antisymmetric") {
  FlowModel m = make_flow(6, 1, {12, 12}, 2.0f, 31);
  perturb_model(m, 32);
  const Coupling& c = m.couplings[0];
  MatF x = random_mat(40, 6, 33);

  MatF y, back;
  std::vector<double> ld_f, ld_i;
  coupling_apply(c, LayerDir::forward, x, y, ld_f);
  coupling_apply(c, LayerDir::inverse, y, back, ld_i);
  for (size_t i = 0; i < x.v.size(); ++i)
    CHECK(back.v[i] == doctest::Approx(x.v[i]).epsilon(1e-5));
  for (size_t r = 0; r < x.rows; ++r)
    CHECK(ld_f[r] + ld_i[r] == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("make_flow masks alternate and are complementary") {
  FlowModel m = make_flow(5, 4, {8}, 2.0f, 1);
  REQUIRE(m.couplings.size() == 4);
  // D=5: even blocks pass dims {0,1,2}, odd blocks pass {3,4}.
  for (size_t k = 0; k < 4; ++k) {
    const auto& mask = m.couplings[k].mask;
    for (size_t d = 0; d < 5; ++d) {
      const bool first_half = d < 3;
      const bool expect_pass = (k % 2 == 0) ? first_half : !first_half;
      CHECK(mask[d] == (expect_pass ? 1 : 0));
    }
    if (k > 0)
      for (size_t d = 0; d < 5; ++d)
        CHECK(m.couplings[k].mask[d] + m.couplings[k - 1].mask[d] == 1);
  }
}

TEST_CASE("make_flow rejects dim 1 with coupling blocks") {
  try {
    make_flow(1, 2, {8}, 2.0f, 0);
    FAIL("expected argument error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::argument);
  }
  CHECK_NOTHROW(make_flow(1, 0, {}, 2.0f, 0));
}

TEST_CASE("identity flow maps to latent unchanged") {
  FlowModel m = identity_flow(4, 3);
  MatF x = random_mat(10, 4, 8);
  auto res = flow_transform(m, x, FlowDir::to_latent);
  CHECK(std::memcmp(x.v.data(), res.y.v.data(), x.v.size() * 4) == 0);
  for (double v : res.logdet) CHECK(v == 0.0);
}

TEST_CASE("to_data inverts to_latent on a perturbed 4-block flow") {
  FlowModel m = make_flow(6, 4, {16, 16}, 2.0f, 41);
  perturb_model(m, 42);
  MatF x = random_mat(100, 6, 43);
  auto fwd = flow_transform(m, x, FlowDir::to_latent);
  auto back = flow_transform(m, fwd.y, FlowDir::to_data);
  for (size_t i = 0; i < x.v.size(); ++i)
    CHECK(std::fabs(back.y.v[i] - x.v[i]) < 1e-5);
  for (size_t r = 0; r < x.rows; ++r)
    CHECK(std::fabs(fwd.logdet[r] + back.logdet[r]) < 1e-5);
}

TEST_CASE("flow logdet matches finite-difference Jacobian determinant") {
  FlowModel m = make_flow(4, 3, {8, 8}, 2.0f, 51);
  perturb_model(m, 52);
  auto rm = ref::from_model<double>(m);
  Rng rng(53);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> x(4);
    for (auto& v : x) v = rng.gaussian();
    double ld = 0.0;
    ref::to_latent_row(rm, x, ld);
    const double fd = fd_logdet(rm, x);
    CHECK(std::fabs(ld - fd) / std::max(1.0, std::fabs(fd)) < 1e-4);

    // And the float pipeline agrees with the double reference.
    MatF xf(1, 4);
    for (size_t d = 0; d < 4; ++d) xf.at(0, d) = static_cast<float>(x[d]);
    auto res = flow_transform(m, xf, FlowDir::to_latent);
    CHECK(res.logdet[0] == doctest::Approx(ld).epsilon(1e-4));
  }
}

TEST_CASE("identity log_prob is the standard normal density") {
  FlowModel m2 = identity_flow(2, 2);
  auto lp = log_prob(m2, row1({0.0f, 0.0f}));
  CHECK(lp[0] == doctest::Approx(-kLog2Pi).epsilon(1e-6));

  FlowModel m1 = make_flow(1, 0, {}, 2.0f, 0);
  auto lp1 = log_prob(m1, row1({1.0f}));
  CHECK(lp1[0] == doctest::Approx(-0.5 * kLog2Pi - 0.5).epsilon(1e-6));
}

TEST_CASE("log_prob agrees with the double reference on a perturbed model") {
  FlowModel m = make_flow(6, 4, {16}, 2.0f, 61);
  perturb_model(m, 62);
  auto rm = ref::from_model<double>(m);
  MatF x = random_mat(20, 6, 63);
  auto lp = log_prob(m, x);
  for (size_t r = 0; r < x.rows; ++r) {
    std::vector<double> row(x.row(r), x.row(r) + x.cols);
    CHECK(lp[r] == doctest::Approx(ref::log_prob_row(rm, row)).epsilon(1e-4));
  }
}

TEST_CASE("log_prob input validation") {
  FlowModel m = identity_flow(3, 1);
  MatF bad = random_mat(2, 3, 5);
  bad.at(1, 2) = std::numeric_limits<float>::quiet_NaN();
  try {
    log_prob(m, bad);
    FAIL("expected validation error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::validation);
  }

  MatF wrong = random_mat(2, 4, 6);
  try {
    log_prob(m, wrong);
    FAIL("expected argument error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::argument);
  }
}

TEST_CASE("chunked scoring is bitwise identical to one-shot") {
  FlowModel m = make_flow(5, 3, {16}, 2.0f, 71);
  perturb_model(m, 72);
  MatF x = random_mat(257, 5, 73);
  auto whole = log_prob(m, x);
  auto chunked = log_prob_chunked(m, x, 64);
  REQUIRE(whole.size() == chunked.size());
  CHECK(std::memcmp(whole.data(), chunked.data(), whole.size() * 8) == 0);
}

TEST_CASE("sampling an identity flow reproduces the raw gaussian stream") {
  FlowModel m = identity_flow(3, 2);
  MatF s = sample(m, 4, 99);
  Rng rng(99);
  for (size_t r = 0; r < 4; ++r)
    for (size_t d = 0; d < 3; ++d)
      CHECK(s.at(r, d) == static_cast<float>(rng.gaussian()));
}

TEST_CASE("sampling is deterministic in the seed") {
  FlowModel m = make_flow(4, 2, {8}, 2.0f, 81);
  perturb_model(m, 82);
  MatF a = sample(m, 50, 7);
  MatF b = sample(m, 50, 7);
  CHECK(std::memcmp(a.v.data(), b.v.data(), a.v.size() * 4) == 0);
  MatF c = sample(m, 50, 8);
  CHECK(std::memcmp(a.v.data(), c.v.data(), a.v.size() * 4) != 0);
}

TEST_CASE("samples from a perturbed flow land back near latent normal") {
  FlowModel m = make_flow(4, 3, {8}, 2.0f, 91);
  perturb_model(m, 92, 0.2f);
  MatF s = sample(m, 2000, 11);
  auto res = flow_transform(m, s, FlowDir::to_latent);
  double mean = 0.0, sq = 0.0;
  const size_t n = res.y.v.size();
  for (float v : res.y.v) mean += v;
  mean /= static_cast<double>(n);
  for (float v : res.y.v) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(n));
  CHECK(std::fabs(mean) < 0.05);
  CHECK(std::fabs(sd - 1.0) < 0.05);
}

TEST_CASE("visit_params covers param_count entries") {
  FlowModel m = make_flow(6, 2, {8, 8}, 2.0f, 14);
  size_t counted = 0;
  visit_params(m, [&](std::vector<float>& p) { counted += p.size(); });
  CHECK(counted == m.param_count());
}
