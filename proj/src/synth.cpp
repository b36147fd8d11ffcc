#include "oodflow/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "oodflow/error.hpp"
#include "oodflow/fvec.hpp"
#include "oodflow/metrics.hpp"

namespace oodflow {

void SyntheticSpec::validate() const {
  if (dim == 0)
    throw_error(ErrorKind::argument, "synthetic spec: dim must be positive");
  if (components.empty())
    throw_error(ErrorKind::argument, "synthetic spec: no components");
  double wsum = 0.0;
  for (const auto& c : components) {
    if (!(c.weight > 0.0))
      throw_error(ErrorKind::argument,
                  "synthetic spec: component weights must be positive");
    wsum += c.weight;
    if (c.mean.size() != dim || c.var.size() != dim)
      throw_error(ErrorKind::argument,
                  "synthetic spec: component mean/var length != dim");
    for (double v : c.var)
      if (!(v > 0.0))
        throw_error(ErrorKind::argument,
                    "synthetic spec: variances must be positive");
  }
  if (std::abs(wsum - 1.0) > 1e-9)
    throw_error(ErrorKind::argument,
                "synthetic spec: component weights must sum to 1");
}

double SyntheticSpec::log_density(const float* x) const {
  constexpr double log2pi = 1.8378770664093453;  // log(2*pi)
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> lc(components.size());
  for (size_t c = 0; c < components.size(); ++c) {
    const auto& comp = components[c];
    double q = 0.0;
    for (size_t d = 0; d < dim; ++d) {
      const double r = double(x[d]) - comp.mean[d];
      q += r * r / comp.var[d] + std::log(comp.var[d]) + log2pi;
    }
    lc[c] = std::log(comp.weight) - 0.5 * q;
    best = std::max(best, lc[c]);
  }
  double acc = 0.0;
  for (double l : lc) acc += std::exp(l - best);
  return best + std::log(acc);
}

MatF SyntheticSpec::sample(size_t n, Rng& rng,
                           std::vector<uint32_t>* labels) const {
  MatF out(n, dim);
  if (labels) labels->resize(n);
  std::vector<double> cum(components.size());
  double acc = 0.0;
  for (size_t c = 0; c < components.size(); ++c) {
    acc += components[c].weight;
    cum[c] = acc;
  }
  for (size_t r = 0; r < n; ++r) {
    const double u = rng.uniform() * acc;
    size_t c = 0;
    while (c + 1 < cum.size() && u >= cum[c]) ++c;
    const auto& comp = components[c];
    float* row = out.row(r);
    for (size_t d = 0; d < dim; ++d)
      row[d] = float(comp.mean[d] + std::sqrt(comp.var[d]) * rng.gaussian());
    if (labels) (*labels)[r] = uint32_t(c);
  }
  return out;
}

SyntheticSpec shifted_spec(const SyntheticSpec& id_spec, double sigmas) {
  SyntheticSpec out = id_spec;
  for (auto& comp : out.components)
    for (size_t d = 0; d < out.dim; ++d)
      comp.mean[d] += sigmas * std::sqrt(comp.var[d]);
  return out;
}

void BenchmarkConfig::validate() const {
  id_spec.validate();
  if (ood_specs.empty())
    throw_error(ErrorKind::argument, "benchmark: no OOD specs");
  for (const auto& e : ood_specs) {
    if (e.name.empty())
      throw_error(ErrorKind::argument, "benchmark: OOD spec without a name");
    e.spec.validate();
    if (e.spec.dim != id_spec.dim)
      throw_error(ErrorKind::argument,
                  "benchmark: OOD spec '" + e.name + "' dim " +
                      std::to_string(e.spec.dim) + " != ID dim " +
                      std::to_string(id_spec.dim));
  }
  for (size_t i = 0; i < ood_specs.size(); ++i)
    for (size_t j = i + 1; j < ood_specs.size(); ++j)
      if (ood_specs[i].name == ood_specs[j].name)
        throw_error(ErrorKind::argument,
                    "benchmark: duplicate OOD name '" + ood_specs[i].name + "'");
  if (!stage_dims.empty()) {
    size_t sum = 0;
    for (uint32_t w : stage_dims) sum += w;
    if (sum != id_spec.dim)
      throw_error(ErrorKind::argument,
                  "benchmark: stage dims must sum to the feature dim");
    if (penultimate_stage >= stage_dims.size())
      throw_error(ErrorKind::argument,
                  "benchmark: penultimate stage out of range");
  }
  if (n_train == 0 || n_val == 0 || n_test == 0 || n_ood == 0)
    throw_error(ErrorKind::argument, "benchmark: split sizes must be positive");
}

BenchmarkConfig default_benchmark(size_t dim, size_t n_classes,
                                  size_t n_stages, uint64_t seed) {
  if (dim == 0 || n_classes == 0 || n_stages == 0 || n_stages > dim)
    throw_error(ErrorKind::argument, "default benchmark: bad shape");

  BenchmarkConfig cfg;
  cfg.seed = seed;
  cfg.id_spec.dim = dim;
  for (size_t c = 0; c < n_classes; ++c) {
    GaussComponent comp;
    comp.weight = 1.0 / double(n_classes);
    comp.mean.assign(dim, 0.0);
    comp.var.assign(dim, 1.0);
    for (size_t d = 0; d < dim; ++d)
      if (d % n_classes == c) comp.mean[d] = 3.0;
    cfg.id_spec.components.push_back(std::move(comp));
  }
  cfg.ood_specs.push_back({"near", "near", shifted_spec(cfg.id_spec, 1.5)});
  cfg.ood_specs.push_back({"far", "far", shifted_spec(cfg.id_spec, 6.0)});

  cfg.stage_dims.resize(n_stages);
  const size_t base = dim / n_stages, extra = dim % n_stages;
  for (size_t s = 0; s < n_stages; ++s)
    cfg.stage_dims[s] = uint32_t(base + (s < extra ? 1 : 0));
  cfg.penultimate_stage = uint32_t(n_stages - 1);
  return cfg;
}

namespace {

// Bayes-optimal linear head of the ID mixture over the penultimate slice,
// assuming unit shared covariance: w_c = mu_c, b_c = -|mu_c|^2/2 + log pi_c.
ClassifierHead make_head(const SyntheticSpec& id_spec, size_t off, size_t w) {
  ClassifierHead head;
  const size_t C = id_spec.components.size();
  head.w = MatF(C, w);
  head.b.resize(C);
  for (size_t c = 0; c < C; ++c) {
    const auto& comp = id_spec.components[c];
    double sq = 0.0;
    for (size_t d = 0; d < w; ++d) {
      head.w.at(c, d) = float(comp.mean[off + d]);
      sq += comp.mean[off + d] * comp.mean[off + d];
    }
    head.b[c] = float(-0.5 * sq + std::log(comp.weight));
  }
  return head;
}

MatF slice_cols(const MatF& x, size_t off, size_t w) {
  MatF out(x.rows, w);
  for (size_t r = 0; r < x.rows; ++r)
    std::copy_n(x.row(r) + off, w, out.row(r));
  return out;
}

}  // namespace

DatasetManifest generate_benchmark(const BenchmarkConfig& cfg,
                                   const std::string& out_dir) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec)
    throw_error(ErrorKind::io,
                "cannot create output directory '" + out_dir + "': " + ec.message());

  std::vector<uint32_t> stage_dims = cfg.stage_dims;
  if (stage_dims.empty()) stage_dims = {uint32_t(cfg.id_spec.dim)};
  FeatureSet probe;
  probe.stage_dims = stage_dims;
  const size_t pen_off = probe.stage_offset(cfg.penultimate_stage);
  const size_t pen_w = stage_dims[cfg.penultimate_stage];

  const ClassifierHead head = make_head(cfg.id_spec, pen_off, pen_w);

  DatasetManifest m;
  m.penultimate_stage = cfg.penultimate_stage;
  m.head_path = "head.fvec";
  save_head(out_dir + "/head.fvec", head);

  auto emit = [&](const std::string& name, SplitRole role,
                  const std::string& category, const SyntheticSpec& spec,
                  size_t n, const std::string& stream, uint64_t idx,
                  bool with_labels) {
    Rng rng(derive_seed(cfg.seed, stream, idx));
    FeatureSet fs;
    fs.name = name;
    std::vector<uint32_t> labels;
    fs.data = spec.sample(n, rng, with_labels ? &labels : nullptr);
    fs.stage_dims = stage_dims;
    fs.logits = head.logits(slice_cols(fs.data, pen_off, pen_w));
    if (with_labels) fs.labels = std::move(labels);
    fs.validate();
    const std::string file = name + ".fvec";
    save_fvec(out_dir + "/" + file, fs);
    m.entries.push_back({file, role, category, name});
  };

  emit("id_train", SplitRole::id_train, "", cfg.id_spec, cfg.n_train,
       "synth.id_train", 0, true);
  emit("id_val", SplitRole::id_val, "", cfg.id_spec, cfg.n_val,
       "synth.id_val", 0, true);
  emit("id_test", SplitRole::id_test, "", cfg.id_spec, cfg.n_test,
       "synth.id_test", 0, true);
  emit("ood_val", SplitRole::ood_val, cfg.ood_specs.front().category,
       cfg.ood_specs.front().spec, cfg.n_val, "synth.ood_val", 0, false);
  for (size_t i = 0; i < cfg.ood_specs.size(); ++i) {
    const auto& e = cfg.ood_specs[i];
    emit(e.name, SplitRole::ood_test, e.category, e.spec, cfg.n_ood,
         "synth.ood_test", i, false);
  }

  m.validate();
  save_manifest(out_dir + "/manifest.json", m);
  return m;
}

OracleAuroc oracle_auroc(const SyntheticSpec& id_spec,
                         const SyntheticSpec& ood_spec, size_t n_mc,
                         uint64_t seed) {
  id_spec.validate();
  ood_spec.validate();
  if (ood_spec.dim != id_spec.dim)
    throw_error(ErrorKind::argument, "oracle: specs disagree on dim");
  if (n_mc < 1000)
    throw_error(ErrorKind::argument, "oracle: n_mc must be at least 1000");

  Rng rng_id(derive_seed(seed, "oracle_id"));
  Rng rng_ood(derive_seed(seed, "oracle_ood"));
  const MatF xi = id_spec.sample(n_mc, rng_id);
  const MatF xo = ood_spec.sample(n_mc, rng_ood);

  std::vector<double> si(n_mc), so(n_mc);
  for (size_t r = 0; r < n_mc; ++r) {
    si[r] = id_spec.log_density(xi.row(r));
    so[r] = id_spec.log_density(xo.row(r));
  }

  OracleAuroc out;
  out.value = auroc(si, so);

  // DeLong structural components give the SE of the AUC estimate itself.
  const size_t m = n_mc, n = n_mc;
  std::vector<double> comb = si;
  comb.insert(comb.end(), so.begin(), so.end());
  const std::vector<double> tz = midranks(comb);
  const std::vector<double> tx = midranks(si);
  const std::vector<double> ty = midranks(so);
  std::vector<double> v10(m), v01(n);
  for (size_t i = 0; i < m; ++i) v10[i] = (tz[i] - tx[i]) / double(n);
  for (size_t j = 0; j < n; ++j)
    v01[j] = 1.0 - (tz[m + j] - ty[j]) / double(m);
  auto sample_var = [](const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= double(v.size());
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return acc / double(v.size() - 1);
  };
  out.se = std::sqrt(sample_var(v10) / double(m) + sample_var(v01) / double(n));
  return out;
}

}  // namespace oodflow
