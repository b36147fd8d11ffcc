#include "oodflow/scorers.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "oodflow/error.hpp"

namespace oodflow {

std::vector<double> score_msp(const MatF& logits, double temperature) {
  if (!(temperature > 0.0))
    throw_error(ErrorKind::argument, "msp: temperature must be positive");
  if (logits.cols < 2)
    throw_error(ErrorKind::argument, "msp needs at least 2 classes");
  std::vector<double> out(logits.rows);
#pragma omp parallel for schedule(static)
  for (size_t r = 0; r < logits.rows; ++r) {
    const float* l = logits.row(r);
    double m = l[0];
    for (size_t c = 1; c < logits.cols; ++c) m = std::max(m, double(l[c]));
    double denom = 0.0;
    for (size_t c = 0; c < logits.cols; ++c)
      denom += std::exp((double(l[c]) - m) / temperature);
    out[r] = 1.0 / denom;  // exp(0)/sum == max softmax probability
  }
  return out;
}

std::vector<double> score_energy(const MatF& logits, double temperature) {
  if (!(temperature > 0.0))
    throw_error(ErrorKind::argument, "energy: temperature must be positive");
  if (logits.cols == 0)
    throw_error(ErrorKind::argument, "energy: empty logits");
  std::vector<double> out(logits.rows);
#pragma omp parallel for schedule(static)
  for (size_t r = 0; r < logits.rows; ++r) {
    const float* l = logits.row(r);
    double m = l[0];
    for (size_t c = 1; c < logits.cols; ++c) m = std::max(m, double(l[c]));
    double acc = 0.0;
    for (size_t c = 0; c < logits.cols; ++c)
      acc += std::exp((double(l[c]) - m) / temperature);
    out[r] = m + temperature * std::log(acc);
  }
  return out;
}

namespace {

double param_or(const ScorerParams& p, const std::string& key, double dflt) {
  auto it = p.find(key);
  return it == p.end() ? dflt : it->second;
}

const MatF& need(const MatF* m, const char* what) {
  if (!m)
    throw_error(ErrorKind::argument,
                std::string("scorer input missing: ") + what);
  return *m;
}

Eigen::MatrixXd to_eigen(const MatF& m) {
  Eigen::MatrixXd out(m.rows, m.cols);
  for (size_t r = 0; r < m.rows; ++r)
    for (size_t c = 0; c < m.cols; ++c)
      out(Eigen::Index(r), Eigen::Index(c)) = m.at(r, c);
  return out;
}

class FlowScorer final : public Scorer {
 public:
  std::string kind() const override { return "flow"; }

  void fit(const ScorerContext& ctx) override {
    if (!ctx.flow)
      throw_error(ErrorKind::argument, "flow scorer: no model provided");
    model_ = *ctx.flow;
    fitted_ = true;
  }

  std::vector<double> score(const QueryBundle& q) const override {
    if (!fitted_)
      throw_error(ErrorKind::state, "flow scorer used before fit");
    const MatF& x = need(q.features, "features");
    x.require_width(model_.dim, "flow scorer input");
    return log_prob_chunked(model_, x);
  }

 private:
  FlowModel model_;
  bool fitted_ = false;
};

class MspScorer final : public Scorer {
 public:
  MspScorer(std::string kind, double temperature)
      : kind_(std::move(kind)), t_(temperature) {
    if (!(t_ > 0.0))
      throw_error(ErrorKind::argument, "msp: temperature must be positive");
  }
  std::string kind() const override { return kind_; }
  void fit(const ScorerContext&) override {}
  std::vector<double> score(const QueryBundle& q) const override {
    return score_msp(need(q.logits, "logits"), t_);
  }

 private:
  std::string kind_;
  double t_;
};

class EnergyScorer final : public Scorer {
 public:
  explicit EnergyScorer(double temperature) : t_(temperature) {
    if (!(t_ > 0.0))
      throw_error(ErrorKind::argument, "energy: temperature must be positive");
  }
  std::string kind() const override { return "energy"; }
  void fit(const ScorerContext&) override {}
  std::vector<double> score(const QueryBundle& q) const override {
    return score_energy(need(q.logits, "logits"), t_);
  }

 private:
  double t_;
};

// Mahalanobis to the nearest class mean under the pooled within-class
// covariance (1/N normalization), ridge 1e-6*trace/D on the diagonal.
class MdsScorer final : public Scorer {
 public:
  std::string kind() const override { return "mds"; }

  void fit(const ScorerContext& ctx) override {
    const MatF& x = need(ctx.id_penultimate, "ID penultimate features");
    if (!ctx.id_train || !ctx.id_train->labels)
      throw_error(ErrorKind::validation, "mds fit requires class labels");
    const std::vector<uint32_t>& labels = *ctx.id_train->labels;
    if (labels.size() != x.rows)
      throw_error(ErrorKind::argument, "mds: label/feature count mismatch");

    const size_t d = x.cols;
    uint32_t n_classes = 0;
    for (uint32_t y : labels) n_classes = std::max(n_classes, y + 1);
    std::vector<size_t> counts(n_classes, 0);
    for (uint32_t y : labels) counts[y]++;
    for (size_t c = 0; c < n_classes; ++c)
      if (counts[c] < 2)
        throw_error(ErrorKind::validation,
                    "mds: class " + std::to_string(c) +
                        " has fewer than 2 samples");

    means_ = Eigen::MatrixXd::Zero(n_classes, d);
    for (size_t i = 0; i < x.rows; ++i)
      for (size_t j = 0; j < d; ++j) means_(labels[i], j) += x.at(i, j);
    for (size_t c = 0; c < n_classes; ++c) means_.row(c) /= double(counts[c]);

    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd diff(d);
    for (size_t i = 0; i < x.rows; ++i) {
      for (size_t j = 0; j < d; ++j)
        diff(j) = double(x.at(i, j)) - means_(labels[i], j);
      cov.selfadjointView<Eigen::Lower>().rankUpdate(diff, 1.0);
    }
    cov = cov.selfadjointView<Eigen::Lower>();
    cov /= double(x.rows);
    cov.diagonal().array() += 1e-6 * cov.trace() / double(d);

    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success)
      throw_error(ErrorKind::numerical,
                  "mds: pooled covariance singular after ridge");
    precision_ = llt.solve(Eigen::MatrixXd::Identity(d, d));
    fitted_ = true;
  }

  std::vector<double> score(const QueryBundle& q) const override {
    if (!fitted_) throw_error(ErrorKind::state, "mds scored before fit");
    const MatF& x = need(q.penultimate, "penultimate features");
    x.require_width(size_t(means_.cols()), "mds query");
    std::vector<double> out(x.rows);
#pragma omp parallel for schedule(static)
    for (size_t r = 0; r < x.rows; ++r) {
      Eigen::VectorXd v(x.cols);
      for (size_t j = 0; j < x.cols; ++j) v(j) = x.at(r, j);
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index c = 0; c < means_.rows(); ++c) {
        const Eigen::VectorXd d = v - means_.row(c).transpose();
        best = std::min(best, d.dot(precision_ * d));
      }
      out[r] = -best;
    }
    return out;
  }

 private:
  Eigen::MatrixXd means_;      // C x D
  Eigen::MatrixXd precision_;  // D x D
  bool fitted_ = false;
};

// Principal-subspace residual combined with the energy of head logits:
// score = logsumexp(W x + b) - alpha * ||(I - P P^T)(x - u)||.
class VimScorer final : public Scorer {
 public:
  explicit VimScorer(const ScorerParams& params) : params_(params) {}

  std::string kind() const override { return "vim"; }

  void fit(const ScorerContext& ctx) override {
    if (!ctx.head) throw_error(ErrorKind::argument, "vim requires a classifier head");
    head_ = *ctx.head;
    const MatF& x = need(ctx.id_penultimate, "ID penultimate features");
    x.require_width(head_.in_dim(), "vim fit features");
    const size_t d = head_.in_dim();

    auto dp = static_cast<Eigen::Index>(param_or(
        params_, "d_principal", d >= 128 ? 64.0 : std::max(1.0, double(d / 2))));
    if (dp < 1 || dp >= Eigen::Index(d))
      throw_error(ErrorKind::argument,
                  "vim: d_principal must lie in [1, D_pen)");

    const Eigen::MatrixXd w = to_eigen(head_.w);
    Eigen::VectorXd b(head_.b.size());
    for (size_t c = 0; c < head_.b.size(); ++c) b(c) = head_.b[c];
    u_ = -w.completeOrthogonalDecomposition().pseudoInverse() * b;

    Eigen::MatrixXd centered = to_eigen(x);
    centered.rowwise() -= u_.transpose();
    const Eigen::MatrixXd scatter =
        centered.transpose() * centered / double(x.rows);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(scatter);
    if (es.info() != Eigen::Success)
      throw_error(ErrorKind::numerical, "vim: eigendecomposition failed");
    principal_ = es.eigenvectors().rightCols(dp);  // top-dp eigenvectors

    if (auto it = params_.find("alpha"); it != params_.end()) {
      alpha_ = it->second;
    } else {
      const MatF id_logits = head_.logits(x);
      double mean_max = 0.0;
      for (size_t r = 0; r < id_logits.rows; ++r) {
        const float* l = id_logits.row(r);
        double m = l[0];
        for (size_t c = 1; c < id_logits.cols; ++c)
          m = std::max(m, double(l[c]));
        mean_max += m;
      }
      mean_max /= double(id_logits.rows);
      double mean_res = 0.0;
      for (Eigen::Index r = 0; r < centered.rows(); ++r)
        mean_res += residual(centered.row(r).transpose());
      mean_res /= double(centered.rows());
      if (mean_res < 1e-12)
        throw_error(ErrorKind::numerical,
                    "vim: degenerate fit (zero mean residual)");
      alpha_ = mean_max / mean_res;
    }
    fitted_ = true;
  }

  std::vector<double> score(const QueryBundle& q) const override {
    if (!fitted_) throw_error(ErrorKind::state, "vim scored before fit");
    const MatF& x = need(q.penultimate, "penultimate features");
    x.require_width(head_.in_dim(), "vim query");
    const MatF logits = head_.logits(x);
    const std::vector<double> en = score_energy(logits, 1.0);
    std::vector<double> out(x.rows);
#pragma omp parallel for schedule(static)
    for (size_t r = 0; r < x.rows; ++r) {
      Eigen::VectorXd v(x.cols);
      for (size_t j = 0; j < x.cols; ++j) v(j) = x.at(r, j);
      out[r] = en[r] - alpha_ * residual(v - u_);
    }
    return out;
  }

 private:
  double residual(const Eigen::VectorXd& centered) const {
    const double total = centered.squaredNorm();
    const double in_plane = (principal_.transpose() * centered).squaredNorm();
    return std::sqrt(std::max(total - in_plane, 0.0));
  }

  ScorerParams params_;
  ClassifierHead head_;
  Eigen::VectorXd u_;
  Eigen::MatrixXd principal_;  // D x d_principal
  double alpha_ = 0.0;
  bool fitted_ = false;
};

// Energy of head logits after clipping penultimate activations at the p-th
// percentile of pooled ID activations.
class ReactScorer final : public Scorer {
 public:
  explicit ReactScorer(const ScorerParams& params) : params_(params) {
    const double p = param_or(params_, "percentile", 90.0);
    if (!(p > 0.0) || p > 100.0)
      throw_error(ErrorKind::argument, "react: percentile must be in (0,100]");
  }

  std::string kind() const override { return "react"; }

  void fit(const ScorerContext& ctx) override {
    if (!ctx.head)
      throw_error(ErrorKind::argument, "react requires a classifier head");
    head_ = *ctx.head;
    if (auto it = params_.find("tau"); it != params_.end()) {
      tau_ = static_cast<float>(it->second);
    } else {
      const MatF& x = need(ctx.id_penultimate, "ID penultimate features");
      x.require_width(head_.in_dim(), "react fit features");
      std::vector<float> pool(x.v);
      std::sort(pool.begin(), pool.end());
      const double p = param_or(params_, "percentile", 90.0);
      const double pos = (p / 100.0) * double(pool.size() - 1);
      const size_t lo = static_cast<size_t>(pos);
      const size_t hi = std::min(lo + 1, pool.size() - 1);
      const double frac = pos - double(lo);
      tau_ = static_cast<float>(pool[lo] * (1.0 - frac) + pool[hi] * frac);
    }
    fitted_ = true;
  }

  std::vector<double> score(const QueryBundle& q) const override {
    if (!fitted_) throw_error(ErrorKind::state, "react scored before fit");
    const MatF& x = need(q.penultimate, "penultimate features");
    x.require_width(head_.in_dim(), "react query");
    MatF clipped = x;
    for (auto& v : clipped.v) v = std::min(v, tau_);
    return score_energy(head_.logits(clipped), 1.0);
  }

 private:
  ScorerParams params_;
  ClassifierHead head_;
  float tau_ = 0.0f;
  bool fitted_ = false;
};

}  // namespace

ScorerRegistry& ScorerRegistry::instance() {
  static ScorerRegistry reg;
  return reg;
}

ScorerRegistry::ScorerRegistry() {
  factories_["flow"] = [](const ScorerParams&) {
    return std::make_unique<FlowScorer>();
  };
  factories_["msp"] = [](const ScorerParams& p) {
    return std::make_unique<MspScorer>("msp", param_or(p, "temperature", 1.0));
  };
  factories_["msp_temp"] = [](const ScorerParams& p) {
    return std::make_unique<MspScorer>("msp_temp",
                                       param_or(p, "temperature", 1000.0));
  };
  factories_["energy"] = [](const ScorerParams& p) {
    return std::make_unique<EnergyScorer>(param_or(p, "temperature", 1.0));
  };
  factories_["mds"] = [](const ScorerParams&) {
    return std::make_unique<MdsScorer>();
  };
  factories_["vim"] = [](const ScorerParams& p) {
    return std::make_unique<VimScorer>(p);
  };
  factories_["react"] = [](const ScorerParams& p) {
    return std::make_unique<ReactScorer>(p);
  };
}

void ScorerRegistry::add(const std::string& name, ScorerFactory factory) {
  if (factories_.count(name))
    throw_error(ErrorKind::registration,
                "scorer '" + name + "' is already registered");
  factories_[name] = std::move(factory);
}

std::unique_ptr<Scorer> ScorerRegistry::create(
    const std::string& name, const ScorerParams& params) const {
  auto it = factories_.find(name);
  if (it == factories_.end()) {
    std::string available;
    for (const auto& [n, _] : factories_)
      available += (available.empty() ? "" : ", ") + n;
    throw_error(ErrorKind::registration,
                "unknown scorer '" + name + "' (available: " + available + ")");
  }
  return it->second(params);
}

std::vector<std::string> ScorerRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [n, _] : factories_) out.push_back(n);
  return out;
}

}  // namespace oodflow
