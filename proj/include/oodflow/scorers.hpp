#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "oodflow/flow.hpp"
#include "oodflow/fvec.hpp"

namespace oodflow {

// Post-hoc OOD scorers. Uniform convention: higher score = more ID.
//
// Fit-time inputs: the transformed flow features (for the flow scorer), the
// raw penultimate stage segment (MDS/ViM/ReAct), the frozen classifier head,
// and the trained flow. Query-time inputs mirror them. Scorers that need
// fitting throw a state error when scored before fit.

struct ScorerContext {
  const FeatureSet* id_train = nullptr;  // transformed features + labels
  const MatF* id_penultimate = nullptr;  // raw penultimate activations
  const ClassifierHead* head = nullptr;
  const FlowModel* flow = nullptr;
};

struct QueryBundle {
  const MatF* features = nullptr;      // transformed like the flow's input
  const MatF* penultimate = nullptr;
  const MatF* logits = nullptr;        // stored or head-recomputed logits
};

// Numeric hyperparameters by name (temperature, percentile, d_principal,
// alpha, tau). Unknown keys are ignored by built-ins.
using ScorerParams = std::map<std::string, double>;

class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::string kind() const = 0;
  virtual void fit(const ScorerContext& ctx) = 0;
  virtual std::vector<double> score(const QueryBundle& q) const = 0;
};

using ScorerFactory =
    std::function<std::unique_ptr<Scorer>(const ScorerParams&)>;

// Name -> factory registry; built-ins (flow, msp, msp_temp, energy, mds,
// vim, react) are registered on first use. Plugins join via add().
class ScorerRegistry {
 public:
  static ScorerRegistry& instance();

  void add(const std::string& name, ScorerFactory factory);
  std::unique_ptr<Scorer> create(const std::string& name,
                                 const ScorerParams& params = {}) const;
  std::vector<std::string> names() const;

 private:
  ScorerRegistry();
  std::map<std::string, ScorerFactory> factories_;
};

// Stateless scorers as plain functions (also used by the class wrappers).
// Both are numerically stabilized by max subtraction.
std::vector<double> score_msp(const MatF& logits, double temperature = 1.0);
std::vector<double> score_energy(const MatF& logits, double temperature = 1.0);

}  // namespace oodflow
