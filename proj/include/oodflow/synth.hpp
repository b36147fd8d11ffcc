#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "oodflow/manifest.hpp"
#include "oodflow/mat.hpp"
#include "oodflow/rng.hpp"

namespace oodflow {

// Diagonal-covariance Gaussian mixture with a known density, the stand-in
// for backbone feature distributions. Component index doubles as the class
// label, so a linear head and Mahalanobis fits have real structure to find.
struct GaussComponent {
  double weight = 1.0;
  std::vector<double> mean;
  std::vector<double> var;
};

struct SyntheticSpec {
  size_t dim = 0;
  std::vector<GaussComponent> components;

  void validate() const;  // weights positive and sum to 1, variances > 0

  // Exact mixture log-density (the Bayes OOD score is this under the ID spec).
  double log_density(const float* x) const;

  // n rows; labels, when requested, record the component drawn per row.
  MatF sample(size_t n, Rng& rng, std::vector<uint32_t>* labels = nullptr) const;
};

// Every component mean moved by `sigmas` per-dim standard deviations along
// +1 in all dimensions: the near (1.5) / far (6.0) shift construction.
SyntheticSpec shifted_spec(const SyntheticSpec& id_spec, double sigmas);

struct OodSpecEntry {
  std::string name;
  std::string category;
  SyntheticSpec spec;
};

struct BenchmarkConfig {
  SyntheticSpec id_spec;
  std::vector<OodSpecEntry> ood_specs;
  std::vector<uint32_t> stage_dims;  // empty = one stage covering all dims
  uint32_t penultimate_stage = 0;
  size_t n_train = 4000;
  size_t n_val = 1000;
  size_t n_test = 1000;
  size_t n_ood = 1000;  // per OOD test set
  uint64_t seed = 0;

  void validate() const;
};

// C-class ID mixture (class means 3 sigma apart on interleaved dims, unit
// variance) with near (1.5 sigma) and far (6 sigma) shifted OOD sets; dims
// split evenly into `n_stages` segments, penultimate = last stage.
BenchmarkConfig default_benchmark(size_t dim = 16, size_t n_classes = 3,
                                  size_t n_stages = 1, uint64_t seed = 0);

// Samples every split on its own derived stream and writes FVEC files, a
// synthetic linear head (Bayes head of the ID mixture over the penultimate
// stage), and manifest.json under out_dir. ID splits carry labels; all
// splits carry head-computed logits. Returns the manifest (relative paths).
DatasetManifest generate_benchmark(const BenchmarkConfig& cfg,
                                   const std::string& out_dir);

// Monte-Carlo AUROC of the Bayes score log p_id(x) on fresh draws from both
// specs, with the structural-components standard error of the estimate.
struct OracleAuroc {
  double value = 0.0;
  double se = 0.0;
};

OracleAuroc oracle_auroc(const SyntheticSpec& id_spec,
                         const SyntheticSpec& ood_spec, size_t n_mc,
                         uint64_t seed);

}  // namespace oodflow
