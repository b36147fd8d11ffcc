// Timing harness: tiled OpenMP kernels and the batched flow against the
// serial per-row reference. Run with OMP_NUM_THREADS to vary parallelism.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#include <omp.h>

#include "oodflow/flow.hpp"
#include "oodflow/kernels.hpp"
#include "oodflow/reference.hpp"
#include "oodflow/rng.hpp"

using namespace oodflow;
using clock_type = std::chrono::steady_clock;

namespace {

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

template <typename F>
double time_best_of(int reps, F&& fn) {
  double best = 1e100;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = clock_type::now();
    fn();
    best = std::min(best, seconds_since(t0));
  }
  return best;
}

void fill_uniform(std::vector<float>& v, Rng& rng) {
  for (auto& x : v) x = float(rng.uniform() * 2.0 - 1.0);
}

void bench_gemm() {
  std::printf("GEMM  C[m x n] += A[m x k] B[k x n]\n");
  std::printf("%8s %8s %8s  %12s %12s %9s\n", "m", "n", "k", "serial GF/s",
              "tiled GF/s", "speedup");
  Rng rng(7);
  for (size_t s : {128, 256, 512, 1024}) {
    const size_t m = s, n = s, k = s;
    std::vector<float> a(m * k), b(k * n), c0(m * n), c1(m * n);
    fill_uniform(a, rng);
    fill_uniform(b, rng);
    const double flops = 2.0 * double(m) * double(n) * double(k);

    const double t_ref = time_best_of(3, [&] {
      std::memset(c0.data(), 0, c0.size() * sizeof(float));
      ref::gemm_accum(c0.data(), a.data(), b.data(), m, n, k, n, k, n);
    });
    const double t_opt = time_best_of(5, [&] {
      std::memset(c1.data(), 0, c1.size() * sizeof(float));
      gemm_accum(c1.data(), a.data(), b.data(), m, n, k, n, k, n);
    });

    float max_diff = 0.0f;
    for (size_t i = 0; i < c0.size(); ++i)
      max_diff = std::max(max_diff, std::abs(c0[i] - c1[i]));

    std::printf("%8zu %8zu %8zu  %12.2f %12.2f %8.1fx  (max diff %.2e)\n", m,
                n, k, flops / t_ref * 1e-9, flops / t_opt * 1e-9,
                t_ref / t_opt, double(max_diff));
  }
  std::printf("\n");
}

void bench_flow_scoring() {
  const uint32_t dim = 64, blocks = 4;
  const std::vector<uint32_t> hidden = {256, 256};
  const size_t n = 8192;

  FlowModel m = make_flow(dim, blocks, hidden, 2.0f, 11);
  Rng rng(3);
  MatF x(n, dim);
  for (auto& v : x.v) v = float(rng.gaussian());
  actnorm_init(m, x);

  const ref::RefModel<float> rm = ref::from_model<float>(m);

  std::printf("flow log_prob  D=%u, %u blocks, hidden 256x256, %zu rows, %d thread(s)\n",
              dim, blocks, n, omp_get_max_threads());

  std::vector<double> lp_ref(n);
  const double t_ref = time_best_of(2, [&] {
    std::vector<float> row(dim);
    for (size_t r = 0; r < n; ++r) {
      std::memcpy(row.data(), x.row(r), dim * sizeof(float));
      lp_ref[r] = double(ref::log_prob_row(rm, row));
    }
  });

  std::vector<double> lp_opt;
  const double t_opt = time_best_of(3, [&] { lp_opt = log_prob(m, x); });

  double max_diff = 0.0;
  for (size_t r = 0; r < n; ++r)
    max_diff = std::max(max_diff, std::abs(lp_ref[r] - lp_opt[r]));

  std::printf("  serial reference  %10.0f rows/s\n", double(n) / t_ref);
  std::printf("  batched OpenMP    %10.0f rows/s   (%.1fx, max |diff| %.2e)\n",
              double(n) / t_opt, t_ref / t_opt, max_diff);
  std::printf("\n");
}

void bench_training_step() {
  const uint32_t dim = 32, blocks = 4;
  const std::vector<uint32_t> hidden = {512, 1024, 512};
  const size_t batch = 256;

  FlowModel m = make_flow(dim, blocks, hidden, 2.0f, 5);
  Rng rng(9);
  MatF x(batch, dim);
  for (auto& v : x.v) v = float(rng.gaussian());
  actnorm_init(m, x);

  Gradients g = make_gradients(m);
  const double t = time_best_of(3, [&] {
    for (int i = 0; i < 8; ++i) nll_and_gradients(m, x, g);
  });
  std::printf("training  D=%u, hidden 512/1024/512, batch %zu: %.1f steps/s "
              "(fwd+bwd)\n",
              dim, batch, 8.0 / t);
}

}  // namespace

int main() {
  bench_gemm();
  bench_flow_scoring();
  bench_training_step();
  return 0;
}
