#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "oodflow/binio.hpp"
#include "oodflow/checkpoint.hpp"
#include "oodflow/error.hpp"
#include "oodflow/histogram.hpp"
#include "oodflow/manifest.hpp"
#include "oodflow/report.hpp"
#include "oodflow/scorers.hpp"
#include "oodflow/synth.hpp"
#include "oodflow/trainer.hpp"

#define OODFLOW_VERSION "0.3.0"

namespace {

using namespace oodflow;
using ordered_json = nlohmann::ordered_json;

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::argument:
    case ErrorKind::state:
    case ErrorKind::registration:
      return 2;
    case ErrorKind::io:
    case ErrorKind::format:
    case ErrorKind::version:
    case ErrorKind::corruption:
    case ErrorKind::validation:
      return 3;
    case ErrorKind::numerical:
      return 4;
  }
  return 1;
}

// Single-line diagnostics: `oodflow: error kind=<kind> msg="..."`.
void print_error(const std::string& kind, std::string msg) {
  for (auto& c : msg)
    if (c == '\n' || c == '\r') c = ' ';
  std::string quoted;
  for (char c : msg) {
    if (c == '"' || c == '\\') quoted += '\\';
    quoted += c;
  }
  std::cerr << "oodflow: error kind=" << kind << " msg=\"" << quoted << "\"\n";
}

// JSON config files: flat keys set main-app options, one nesting level per
// subcommand section ({"train": {"epochs": 50}}); arrays become repeated
// values. Command-line flags always win.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override {
    return "{}\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(input);
    } catch (const nlohmann::json::exception& e) {
      throw_error(ErrorKind::format,
                  std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object())
      throw_error(ErrorKind::format, "config file must be a JSON object");
    std::vector<CLI::ConfigItem> items;
    walk(j, {}, items);
    return items;
  }

 private:
  static std::string scalar(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static void walk(const nlohmann::json& j, std::vector<std::string> parents,
                   std::vector<CLI::ConfigItem>& out) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it->is_object()) {
        auto p = parents;
        p.push_back(it.key());
        walk(*it, std::move(p), out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = it.key();
      if (it->is_array())
        for (const auto& v : *it) item.inputs.push_back(scalar(v));
      else
        item.inputs.push_back(scalar(*it));
      out.push_back(std::move(item));
    }
  }
};

std::string default_out() {
  const char* e = std::getenv("OODFLOW_OUT");
  return (e && *e) ? std::string(e) : std::string("out");
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec)
    throw_error(ErrorKind::io,
                "cannot create output directory '" + dir + "': " + ec.message());
}

void write_resolved(const std::string& out_dir, const std::string& command,
                    const ordered_json& options) {
  ordered_json j;
  j["schema_version"] = 1;
  j["tool"] = "oodflow " OODFLOW_VERSION;
  j["command"] = command;
  j["options"] = options;
  write_text_atomic(out_dir + "/resolved_config.json", j.dump(2) + "\n");
}

ScorerParams parse_params(const std::vector<std::string>& kvs) {
  ScorerParams p;
  for (const auto& s : kvs) {
    const size_t eq = s.find('=');
    if (eq == std::string::npos || eq == 0)
      throw_error(ErrorKind::argument,
                  "--param expects key=value, got '" + s + "'");
    try {
      size_t used = 0;
      const double v = std::stod(s.substr(eq + 1), &used);
      if (used != s.size() - eq - 1) throw std::invalid_argument("trailing");
      p[s.substr(0, eq)] = v;
    } catch (const std::exception&) {
      throw_error(ErrorKind::argument,
                  "--param value in '" + s + "' is not a number");
    }
  }
  return p;
}

FprConvention parse_convention(const std::string& s) {
  if (s == "ood_positive") return FprConvention::ood_positive;
  if (s == "id_positive") return FprConvention::id_positive;
  throw_error(ErrorKind::argument,
              "--fpr-convention must be ood_positive or id_positive, got '" +
                  s + "'");
}

// ---- shared data plumbing ----------------------------------------------

struct Bench {
  std::string manifest_path;
  DatasetManifest m;
};

Bench open_bench(const std::string& manifest_path) {
  Bench b;
  b.manifest_path = manifest_path;
  b.m = load_manifest(manifest_path);
  b.m.validate();
  return b;
}

FeatureSet load_entry(const Bench& b, const ManifestEntry& e) {
  return load_fvec(resolve_manifest_path(b.manifest_path, e.path), e.name);
}

std::optional<ClassifierHead> load_bench_head(const Bench& b) {
  if (!b.m.head_path) return std::nullopt;
  return load_head(resolve_manifest_path(b.manifest_path, *b.m.head_path));
}

// Everything a fitted scorer needs, with storage owned here so the context
// pointers stay valid.
struct ScoringStack {
  FeatureTransform transform;  // identity unless a checkpoint provides one
  std::optional<LoadedCheckpoint> ckpt;
  std::optional<ClassifierHead> head;
  FeatureSet id_train_t;
  MatF id_pen;

  ScorerContext ctx() const {
    ScorerContext c;
    c.id_train = &id_train_t;
    c.id_penultimate = &id_pen;
    c.head = head ? &*head : nullptr;
    c.flow = ckpt ? &ckpt->model : nullptr;
    return c;
  }
};

ScoringStack make_stack(const Bench& b, const std::string& checkpoint_path) {
  ScoringStack st;
  if (!checkpoint_path.empty()) {
    st.ckpt = load_checkpoint(checkpoint_path);
    if (!st.ckpt->meta.note.empty())
      st.transform = FeatureTransform::from_json(st.ckpt->meta.note);
  } else {
    st.transform.l2 = false;  // nothing trained: leave features untouched
  }
  st.head = load_bench_head(b);
  const FeatureSet id_train = load_entry(b, b.m.sole(SplitRole::id_train));
  st.id_pen = stage_slice(id_train, b.m.penultimate_stage);
  st.id_train_t = st.transform.apply(id_train);
  return st;
}

std::vector<double> score_split(const Scorer& scorer, const ScoringStack& st,
                                const Bench& b, const FeatureSet& split) {
  const FeatureSet transformed = st.transform.apply(split);
  const MatF pen = stage_slice(split, b.m.penultimate_stage);
  std::optional<MatF> computed_logits;
  QueryBundle q;
  q.features = &transformed.data;
  q.penultimate = &pen;
  if (split.logits) {
    q.logits = &*split.logits;
  } else if (st.head) {
    computed_logits = st.head->logits(pen);
    q.logits = &*computed_logits;
  }
  return scorer.score(q);
}

// ---- synth ---------------------------------------------------------------

struct SynthArgs {
  std::string out = default_out();
  size_t dim = 16, classes = 3, stages = 1;
  size_t n_train = 4000, n_val = 1000, n_test = 1000, n_ood = 1000;
  double near_sigma = 1.5, far_sigma = 6.0;
  uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
  BenchmarkConfig cfg = default_benchmark(a.dim, a.classes, a.stages, a.seed);
  cfg.n_train = a.n_train;
  cfg.n_val = a.n_val;
  cfg.n_test = a.n_test;
  cfg.n_ood = a.n_ood;
  cfg.ood_specs = {{"near", "near", shifted_spec(cfg.id_spec, a.near_sigma)},
                   {"far", "far", shifted_spec(cfg.id_spec, a.far_sigma)}};
  const DatasetManifest m = generate_benchmark(cfg, a.out);

  ordered_json opts;
  opts["dim"] = a.dim;
  opts["classes"] = a.classes;
  opts["stages"] = a.stages;
  opts["n_train"] = a.n_train;
  opts["n_val"] = a.n_val;
  opts["n_test"] = a.n_test;
  opts["n_ood"] = a.n_ood;
  opts["near_sigma"] = a.near_sigma;
  opts["far_sigma"] = a.far_sigma;
  opts["seed"] = a.seed;
  opts["out"] = a.out;
  write_resolved(a.out, "synth", opts);

  std::cout << "wrote " << m.entries.size() << " splits + head under " << a.out
            << " (dim " << a.dim << ", " << a.classes << " classes, "
            << a.stages << " stage" << (a.stages > 1 ? "s" : "") << ")\n";
  return 0;
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
  std::string manifest;
  std::string out = default_out();
  TrainConfig cfg;
  std::vector<size_t> stages;
  bool no_l2 = false;
  bool per_stage_l2 = false;
  bool quiet = false;
};

ordered_json train_options_json(const TrainArgs& a, const FeatureTransform& tf) {
  ordered_json opts;
  opts["manifest"] = a.manifest;
  opts["out"] = a.out;
  opts["epochs"] = a.cfg.epochs;
  opts["batch_size"] = a.cfg.batch_size;
  opts["learning_rate"] = a.cfg.learning_rate;
  opts["blocks"] = a.cfg.n_blocks;
  opts["hidden"] = a.cfg.hidden;
  opts["clamp"] = a.cfg.clamp;
  opts["fraction"] = a.cfg.data_fraction;
  opts["eval_every"] = a.cfg.eval_every;
  opts["seed"] = a.cfg.seed;
  opts["stages"] = tf.stages;
  opts["l2"] = tf.l2;
  opts["per_stage_l2"] = tf.per_stage;
  return opts;
}

int run_train(const TrainArgs& a) {
  const Bench b = open_bench(a.manifest);
  const ManifestEntry* val = b.m.find(SplitRole::id_val);
  const ManifestEntry* oval = b.m.find(SplitRole::ood_val);
  if (!val || !oval)
    throw_error(ErrorKind::argument,
                "training needs id_val and ood_val entries in the manifest");

  FeatureTransform tf;
  tf.stages = a.stages;
  tf.l2 = !a.no_l2;
  tf.per_stage = a.per_stage_l2;

  const FeatureSet id_train = tf.apply(load_entry(b, b.m.sole(SplitRole::id_train)));
  const FeatureSet id_val = tf.apply(load_entry(b, *val));
  const FeatureSet ood_val = tf.apply(load_entry(b, *oval));

  std::function<void(const std::string&)> log;
  if (!a.quiet) log = [](const std::string& line) { std::cout << line << "\n"; };

  TrainResult res = train(id_train, id_val, ood_val, a.cfg, log);

  ensure_dir(a.out);
  CheckpointMeta meta;
  meta.config = a.cfg;
  meta.best_epoch = res.info.best_epoch;
  meta.best_val_auroc = res.info.best_val_auroc;
  meta.best_train_nll = res.info.best_train_nll;
  meta.train_nll = res.info.train_nll;
  meta.val_auroc = res.info.val_auroc;
  meta.note = tf.to_json();
  const std::string ck = a.out + "/flow.nfck";
  save_checkpoint(ck, res.model, meta);
  write_resolved(a.out, "train", train_options_json(a, tf));

  std::cout << "best epoch " << res.info.best_epoch << " (val AUROC "
            << res.info.best_val_auroc << ") -> " << ck << "\n";
  return 0;
}

// ---- score ---------------------------------------------------------------

struct ScoreArgs {
  std::string manifest, checkpoint;
  std::string out = default_out();
  std::string scorer = "flow";
  std::vector<std::string> params;
};

int run_score(const ScoreArgs& a) {
  const Bench b = open_bench(a.manifest);
  const ScoringStack st = make_stack(b, a.checkpoint);
  auto scorer = ScorerRegistry::instance().create(a.scorer, parse_params(a.params));
  scorer->fit(st.ctx());

  ordered_json splits = ordered_json::array();
  auto emit = [&](const ManifestEntry& e) {
    const FeatureSet fs = load_entry(b, e);
    const std::vector<double> s = score_split(*scorer, st, b, fs);
    ordered_json js;
    js["name"] = e.name;
    js["role"] = split_role_name(e.role);
    if (!e.category.empty()) js["category"] = e.category;
    js["n"] = s.size();
    js["scores"] = s;
    splits.push_back(std::move(js));
  };
  for (const auto* e : b.m.all(SplitRole::id_test)) emit(*e);
  for (const auto* e : b.m.all(SplitRole::ood_test)) emit(*e);

  ordered_json j;
  j["schema_version"] = 1;
  j["scorer"] = a.scorer;
  j["params"] = parse_params(a.params);
  j["convention"] = "higher_is_id";
  j["splits"] = std::move(splits);

  ensure_dir(a.out);
  const std::string path = a.out + "/scores_" + a.scorer + ".json";
  write_text_atomic(path, j.dump(2) + "\n");

  ordered_json opts;
  opts["manifest"] = a.manifest;
  opts["checkpoint"] = a.checkpoint;
  opts["scorer"] = a.scorer;
  opts["params"] = parse_params(a.params);
  opts["out"] = a.out;
  write_resolved(a.out, "score", opts);

  std::cout << "wrote " << path << "\n";
  return 0;
}

// ---- eval ----------------------------------------------------------------

struct EvalArgs {
  std::string manifest, checkpoint;
  std::string out = default_out();
  std::string scorer = "flow";
  std::vector<std::string> compare;
  std::vector<std::string> params;
  size_t n_boot = 1000;
  double tpr = 0.95;
  std::string fpr_convention = "ood_positive";
  uint64_t seed = 0;
};

int run_eval(const EvalArgs& a) {
  const Bench b = open_bench(a.manifest);
  const ScoringStack st = make_stack(b, a.checkpoint);
  const ScorerParams params = parse_params(a.params);
  auto scorer = ScorerRegistry::instance().create(a.scorer, params);
  scorer->fit(st.ctx());

  const ManifestEntry& id_entry = *b.m.all(SplitRole::id_test).front();
  const FeatureSet id_test = load_entry(b, id_entry);
  ScoredDataset id_sd;
  id_sd.name = id_entry.name;
  id_sd.scores = score_split(*scorer, st, b, id_test);

  std::vector<ScoredDataset> oods;
  std::vector<FeatureSet> ood_sets;
  for (const auto* e : b.m.all(SplitRole::ood_test)) {
    ood_sets.push_back(load_entry(b, *e));
    ScoredDataset sd;
    sd.name = e->name;
    sd.category = e->category;
    sd.scores = score_split(*scorer, st, b, ood_sets.back());
    oods.push_back(std::move(sd));
  }

  EvalOptions opt;
  opt.tpr_target = a.tpr;
  opt.convention = parse_convention(a.fpr_convention);
  opt.n_boot = a.n_boot;
  opt.seed = a.seed;
  EvalReport rep = evaluate_suite(id_sd, oods, opt);

  if (!a.compare.empty()) {
    std::vector<double> sa = id_sd.scores;
    std::vector<uint8_t> is_id(id_sd.scores.size(), 1);
    for (const auto& sd : oods) {
      sa.insert(sa.end(), sd.scores.begin(), sd.scores.end());
      is_id.insert(is_id.end(), sd.scores.size(), 0);
    }
    const size_t cmp_boot = a.n_boot > 0 ? a.n_boot : 1000;
    for (size_t i = 0; i < a.compare.size(); ++i) {
      auto other = ScorerRegistry::instance().create(a.compare[i], params);
      other->fit(st.ctx());
      std::vector<double> sb = score_split(*other, st, b, id_test);
      for (size_t k = 0; k < ood_sets.size(); ++k) {
        const std::vector<double> s = score_split(*other, st, b, ood_sets[k]);
        sb.insert(sb.end(), s.begin(), s.end());
      }
      rep.comparisons.push_back(
          compare_scorers(a.scorer, sa, a.compare[i], sb, is_id, "micro",
                          cmp_boot, derive_seed(a.seed, "compare", i)));
    }
  }

  ensure_dir(a.out);
  const std::string text = report_to_text(rep);
  write_text_atomic(a.out + "/report.json", report_to_json(rep));
  write_text_atomic(a.out + "/report.txt", text);

  ordered_json opts;
  opts["manifest"] = a.manifest;
  opts["checkpoint"] = a.checkpoint;
  opts["scorer"] = a.scorer;
  opts["params"] = params;
  opts["compare"] = a.compare;
  opts["n_boot"] = a.n_boot;
  opts["tpr"] = a.tpr;
  opts["fpr_convention"] = a.fpr_convention;
  opts["seed"] = a.seed;
  opts["out"] = a.out;
  write_resolved(a.out, "eval", opts);

  std::cout << text;
  return 0;
}

// ---- compare -------------------------------------------------------------

struct CompareArgs {
  std::string manifest, checkpoint;
  std::string out = default_out();
  std::string scorer_a, scorer_b;
  std::vector<std::string> params;
  size_t n_boot = 1000;
  uint64_t seed = 0;
};

int run_compare(const CompareArgs& a) {
  const Bench b = open_bench(a.manifest);
  const ScoringStack st = make_stack(b, a.checkpoint);
  const ScorerParams params = parse_params(a.params);

  const FeatureSet id_test = load_entry(b, *b.m.all(SplitRole::id_test).front());
  std::vector<FeatureSet> ood_sets;
  for (const auto* e : b.m.all(SplitRole::ood_test))
    ood_sets.push_back(load_entry(b, *e));

  auto pooled = [&](const std::string& name) {
    auto scorer = ScorerRegistry::instance().create(name, params);
    scorer->fit(st.ctx());
    std::vector<double> s = score_split(*scorer, st, b, id_test);
    for (const auto& fs : ood_sets) {
      const std::vector<double> o = score_split(*scorer, st, b, fs);
      s.insert(s.end(), o.begin(), o.end());
    }
    return s;
  };
  const std::vector<double> sa = pooled(a.scorer_a);
  const std::vector<double> sb = pooled(a.scorer_b);
  std::vector<uint8_t> is_id(sa.size(), 0);
  std::fill(is_id.begin(), is_id.begin() + id_test.n(), 1);

  const ComparisonRecord rec = compare_scorers(
      a.scorer_a, sa, a.scorer_b, sb, is_id, "micro", a.n_boot, a.seed);

  ordered_json j;
  j["schema_version"] = 1;
  j["scorer_a"] = rec.scorer_a;
  j["scorer_b"] = rec.scorer_b;
  j["dataset"] = rec.dataset;
  j["auc_a"] = rec.auc_a;
  j["auc_b"] = rec.auc_b;
  j["delta_auc"] = rec.delta_auc;
  j["delong_p"] = rec.delong_p;
  j["bootstrap_p"] = rec.bootstrap_p;

  ensure_dir(a.out);
  write_text_atomic(a.out + "/compare.json", j.dump(2) + "\n");

  ordered_json opts;
  opts["manifest"] = a.manifest;
  opts["checkpoint"] = a.checkpoint;
  opts["scorer_a"] = a.scorer_a;
  opts["scorer_b"] = a.scorer_b;
  opts["params"] = params;
  opts["n_boot"] = a.n_boot;
  opts["seed"] = a.seed;
  opts["out"] = a.out;
  write_resolved(a.out, "compare", opts);

  std::cout << rec.scorer_a << " AUC " << rec.auc_a << " vs " << rec.scorer_b
            << " AUC " << rec.auc_b << ": dAUC " << rec.delta_auc
            << ", delong_p " << rec.delong_p << ", bootstrap_p "
            << rec.bootstrap_p << "\n";
  return 0;
}

// ---- ablate ----------------------------------------------------------------

struct AblateArgs {
  std::string manifest;
  std::string out = default_out();
  std::string stage_sets = "all";
  std::vector<uint32_t> epochs_list;
  std::vector<double> fractions;
  TrainConfig cfg;
  bool no_l2 = false;
  bool per_stage_l2 = false;
  bool quiet = false;
  size_t n_boot = 0;
  double tpr = 0.95;
  std::string fpr_convention = "ood_positive";
};

std::vector<std::vector<size_t>> parse_stage_sets(const std::string& text) {
  std::vector<std::vector<size_t>> sets;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ';')) {
    if (tok.empty())
      throw_error(ErrorKind::argument, "--stage-sets has an empty subset");
    if (tok == "all") {
      sets.push_back({});
      continue;
    }
    std::vector<size_t> set;
    std::stringstream is(tok);
    std::string n;
    while (std::getline(is, n, ',')) {
      try {
        size_t used = 0;
        const unsigned long v = std::stoul(n, &used);
        if (used != n.size()) throw std::invalid_argument("trailing");
        set.push_back(v);
      } catch (const std::exception&) {
        throw_error(ErrorKind::argument,
                    "--stage-sets: '" + n + "' is not a stage index");
      }
    }
    sets.push_back(std::move(set));
  }
  if (sets.empty())
    throw_error(ErrorKind::argument, "--stage-sets is empty");
  return sets;
}

std::string stage_label(const std::vector<size_t>& set) {
  if (set.empty()) return "all";
  std::string s;
  for (size_t i = 0; i < set.size(); ++i)
    s += (i ? "+" : "") + std::to_string(set[i]);
  return s;
}

int run_ablate(const AblateArgs& a) {
  const Bench b = open_bench(a.manifest);
  const ManifestEntry* val = b.m.find(SplitRole::id_val);
  const ManifestEntry* oval = b.m.find(SplitRole::ood_val);
  if (!val || !oval)
    throw_error(ErrorKind::argument,
                "ablate needs id_val and ood_val entries in the manifest");

  const std::vector<std::vector<size_t>> sets = parse_stage_sets(a.stage_sets);
  std::vector<uint32_t> epochs = a.epochs_list;
  if (epochs.empty()) epochs = {a.cfg.epochs};
  std::vector<double> fractions = a.fractions;
  if (fractions.empty()) fractions = {1.0};

  const FeatureSet id_train = load_entry(b, b.m.sole(SplitRole::id_train));
  const FeatureSet id_val = load_entry(b, *val);
  const FeatureSet ood_val = load_entry(b, *oval);
  const FeatureSet id_test = load_entry(b, *b.m.all(SplitRole::id_test).front());
  std::vector<FeatureSet> ood_sets;
  std::vector<const ManifestEntry*> ood_entries = b.m.all(SplitRole::ood_test);
  for (const auto* e : ood_entries) ood_sets.push_back(load_entry(b, *e));

  std::ostringstream csv;
  csv << "stages,epochs,fraction,n_train,fpr_at_tpr,auroc,aupr_in,aupr_out\n";
  csv << std::fixed << std::setprecision(6);

  EvalOptions opt;
  opt.tpr_target = a.tpr;
  opt.convention = parse_convention(a.fpr_convention);
  opt.n_boot = a.n_boot;
  opt.seed = a.cfg.seed;

  for (const auto& set : sets) {
    FeatureTransform tf;
    tf.stages = set;
    tf.l2 = !a.no_l2;
    tf.per_stage = a.per_stage_l2;
    const FeatureSet train_t = tf.apply(id_train);
    const FeatureSet val_t = tf.apply(id_val);
    const FeatureSet oval_t = tf.apply(ood_val);
    const FeatureSet test_t = tf.apply(id_test);
    std::vector<FeatureSet> ood_t;
    for (const auto& fs : ood_sets) ood_t.push_back(tf.apply(fs));

    for (uint32_t e : epochs) {
      for (double f : fractions) {
        TrainConfig cfg = a.cfg;
        cfg.epochs = e;
        cfg.data_fraction = f;
        if (!a.quiet)
          std::cout << "cell stages=" << stage_label(set) << " epochs=" << e
                    << " fraction=" << f << "\n";
        std::function<void(const std::string&)> log;
        if (!a.quiet)
          log = [](const std::string& line) { std::cout << "  " << line << "\n"; };
        const TrainResult res = train(train_t, val_t, oval_t, cfg, log);

        ScoredDataset id_sd;
        id_sd.name = "id_test";
        id_sd.scores = log_prob_chunked(res.model, test_t.data);
        std::vector<ScoredDataset> oods;
        for (size_t k = 0; k < ood_t.size(); ++k) {
          ScoredDataset sd;
          sd.name = ood_entries[k]->name;
          sd.category = ood_entries[k]->category;
          sd.scores = log_prob_chunked(res.model, ood_t[k].data);
          oods.push_back(std::move(sd));
        }
        const EvalReport rep = evaluate_suite(id_sd, oods, opt);

        const size_t n_used =
            size_t(std::ceil(f * double(train_t.n()) - 1e-9));
        csv << stage_label(set) << "," << e << "," << f << "," << n_used << ","
            << rep.micro.metrics.fpr.value << "," << rep.micro.metrics.auroc.value
            << "," << rep.micro.metrics.aupr_in.value << ","
            << rep.micro.metrics.aupr_out.value << "\n";
      }
    }
  }

  ensure_dir(a.out);
  write_text_atomic(a.out + "/ablate.csv", csv.str());

  ordered_json opts;
  opts["manifest"] = a.manifest;
  opts["stage_sets"] = a.stage_sets;
  opts["epochs_list"] = epochs;
  opts["fractions"] = fractions;
  opts["batch_size"] = a.cfg.batch_size;
  opts["learning_rate"] = a.cfg.learning_rate;
  opts["blocks"] = a.cfg.n_blocks;
  opts["hidden"] = a.cfg.hidden;
  opts["clamp"] = a.cfg.clamp;
  opts["eval_every"] = a.cfg.eval_every;
  opts["seed"] = a.cfg.seed;
  opts["l2"] = !a.no_l2;
  opts["per_stage_l2"] = a.per_stage_l2;
  opts["n_boot"] = a.n_boot;
  opts["tpr"] = a.tpr;
  opts["fpr_convention"] = a.fpr_convention;
  opts["out"] = a.out;
  write_resolved(a.out, "ablate", opts);

  std::cout << "wrote " << a.out << "/ablate.csv\n";
  return 0;
}

// ---- export-hist -----------------------------------------------------------

struct HistArgs {
  std::string manifest, checkpoint;
  std::string out = default_out();
  std::string scorer = "flow";
  std::vector<std::string> params;
  size_t bins = 50;
};

int run_hist(const HistArgs& a) {
  const Bench b = open_bench(a.manifest);
  const ScoringStack st = make_stack(b, a.checkpoint);
  auto scorer = ScorerRegistry::instance().create(a.scorer, parse_params(a.params));
  scorer->fit(st.ctx());

  std::vector<HistogramGroup> groups;
  auto add = [&](const ManifestEntry& e) {
    const FeatureSet fs = load_entry(b, e);
    groups.push_back({e.name, score_split(*scorer, st, b, fs)});
  };
  for (const auto* e : b.m.all(SplitRole::id_test)) add(*e);
  for (const auto* e : b.m.all(SplitRole::ood_test)) add(*e);

  const Histogram h = compute_histogram(groups, a.bins);
  for (const auto& name : h.skipped)
    std::cerr << "oodflow: warning empty group '" << name << "' skipped\n";

  ensure_dir(a.out);
  write_text_atomic(a.out + "/hist.csv", histogram_to_csv(h));
  write_text_atomic(a.out + "/hist.svg", histogram_to_svg(h));

  ordered_json opts;
  opts["manifest"] = a.manifest;
  opts["checkpoint"] = a.checkpoint;
  opts["scorer"] = a.scorer;
  opts["params"] = parse_params(a.params);
  opts["bins"] = a.bins;
  opts["out"] = a.out;
  write_resolved(a.out, "export-hist", opts);

  std::cout << "wrote " << a.out << "/hist.csv and " << a.out << "/hist.svg\n";
  return 0;
}

// ---- inspect ---------------------------------------------------------------

int run_inspect(const std::vector<std::string>& paths) {
  for (const auto& path : paths) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw_error(ErrorKind::io, "cannot open '" + path + "'");
    char magic[4] = {0, 0, 0, 0};
    in.read(magic, 4);
    const std::string m(magic, magic + in.gcount());
    if (m == "FVEC") {
      std::cout << path << ": " << describe_fvec(path) << "\n";
    } else if (m == "NFCK") {
      std::cout << path << ": " << describe_checkpoint(path) << "\n";
    } else if (!m.empty() && (m[0] == '{' || path.ends_with(".json"))) {
      const DatasetManifest man = load_manifest(path);
      size_t counts[5] = {0, 0, 0, 0, 0};
      for (const auto& e : man.entries) counts[size_t(e.role)]++;
      std::cout << path << ": manifest, " << man.entries.size()
                << " entries (id_train " << counts[0] << ", id_val "
                << counts[1] << ", id_test " << counts[2] << ", ood_val "
                << counts[3] << ", ood_test " << counts[4]
                << "), penultimate_stage " << man.penultimate_stage;
      if (man.head_path) std::cout << ", head " << *man.head_path;
      std::cout << "\n";
    } else {
      throw_error(ErrorKind::format,
                  "'" + path + "' is not an FVEC, checkpoint, or manifest file");
    }
  }
  return 0;
}

void add_train_config_flags(CLI::App* c, TrainConfig& cfg) {
  c->add_option("--epochs", cfg.epochs, "training epochs")->capture_default_str();
  c->add_option("--batch-size", cfg.batch_size, "minibatch size")->capture_default_str();
  c->add_option("--lr", cfg.learning_rate, "Adam learning rate")->capture_default_str();
  c->add_option("--blocks", cfg.n_blocks, "coupling blocks")->capture_default_str();
  c->add_option("--hidden", cfg.hidden, "hidden layer widths")
      ->delimiter(',')
      ->capture_default_str();
  c->add_option("--clamp", cfg.clamp, "soft clamp on coupling log-scales")
      ->capture_default_str();
  c->add_option("--eval-every", cfg.eval_every, "epochs between validation passes")
      ->capture_default_str();
  c->add_option("--seed", cfg.seed, "master seed")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"feature-space OOD detection: normalizing-flow likelihoods and "
               "post-hoc baselines over frozen classifier features"};
  app.require_subcommand(0, 1);
  app.set_version_flag("--version",
                       "oodflow " OODFLOW_VERSION
                       " (fvec format 1, checkpoint format 1, report schema 1)");
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "",
                 "JSON config file; top-level keys name subcommands "
                 "({\"train\": {\"epochs\": 50}}); flags take precedence");

  SynthArgs sy;
  CLI::App* c_synth = app.add_subcommand("synth", "generate a synthetic benchmark");
  c_synth->add_option("--out", sy.out, "output directory")->capture_default_str();
  c_synth->add_option("--dim", sy.dim, "feature dimension")->capture_default_str();
  c_synth->add_option("--classes", sy.classes, "ID mixture components")->capture_default_str();
  c_synth->add_option("--stages", sy.stages, "feature stages")->capture_default_str();
  c_synth->add_option("--n-train", sy.n_train, "ID training samples")->capture_default_str();
  c_synth->add_option("--n-val", sy.n_val, "validation samples per split")->capture_default_str();
  c_synth->add_option("--n-test", sy.n_test, "ID test samples")->capture_default_str();
  c_synth->add_option("--n-ood", sy.n_ood, "samples per OOD test set")->capture_default_str();
  c_synth->add_option("--near-sigma", sy.near_sigma, "near-OOD mean shift in sigmas")
      ->capture_default_str();
  c_synth->add_option("--far-sigma", sy.far_sigma, "far-OOD mean shift in sigmas")
      ->capture_default_str();
  c_synth->add_option("--seed", sy.seed, "master seed")->capture_default_str();

  TrainArgs tr;
  CLI::App* c_train = app.add_subcommand("train", "fit the flow on ID features");
  c_train->add_option("--manifest", tr.manifest, "dataset manifest")->required();
  c_train->add_option("--out", tr.out, "output directory")->capture_default_str();
  add_train_config_flags(c_train, tr.cfg);
  c_train->add_option("--fraction", tr.cfg.data_fraction,
                      "fraction of id_train used (subsampled)")
      ->capture_default_str();
  c_train->add_option("--stages", tr.stages, "stage indices fed to the flow (default all)")
      ->delimiter(',');
  c_train->add_flag("--no-l2", tr.no_l2, "skip row L2 normalization");
  c_train->add_flag("--per-stage-l2", tr.per_stage_l2, "L2-normalize each stage separately");
  c_train->add_flag("--quiet", tr.quiet, "suppress per-epoch logs");

  ScoreArgs sc;
  CLI::App* c_score = app.add_subcommand("score", "write per-split scores for one scorer");
  c_score->add_option("--manifest", sc.manifest, "dataset manifest")->required();
  c_score->add_option("--checkpoint", sc.checkpoint, "flow checkpoint (.nfck)");
  c_score->add_option("--out", sc.out, "output directory")->capture_default_str();
  c_score->add_option("--scorer", sc.scorer, "scorer name")->capture_default_str();
  c_score->add_option("--param", sc.params, "scorer hyperparameter key=value (repeatable)");

  EvalArgs ev;
  CLI::App* c_eval = app.add_subcommand("eval", "full detection report for one scorer");
  c_eval->add_option("--manifest", ev.manifest, "dataset manifest")->required();
  c_eval->add_option("--checkpoint", ev.checkpoint, "flow checkpoint (.nfck)");
  c_eval->add_option("--out", ev.out, "output directory")->capture_default_str();
  c_eval->add_option("--scorer", ev.scorer, "scorer name")->capture_default_str();
  c_eval->add_option("--compare", ev.compare, "scorers compared against --scorer")
      ->delimiter(',');
  c_eval->add_option("--param", ev.params, "scorer hyperparameter key=value (repeatable)");
  c_eval->add_option("--n-boot", ev.n_boot, "bootstrap replicates (0 disables CIs)")
      ->capture_default_str();
  c_eval->add_option("--tpr", ev.tpr, "TPR target for FPR@TPR")->capture_default_str();
  c_eval->add_option("--fpr-convention", ev.fpr_convention,
                     "ood_positive or id_positive")
      ->capture_default_str();
  c_eval->add_option("--seed", ev.seed, "bootstrap seed")->capture_default_str();

  CompareArgs cm;
  CLI::App* c_cmp = app.add_subcommand("compare", "paired comparison of two scorers");
  c_cmp->add_option("--manifest", cm.manifest, "dataset manifest")->required();
  c_cmp->add_option("--checkpoint", cm.checkpoint, "flow checkpoint (.nfck)");
  c_cmp->add_option("--out", cm.out, "output directory")->capture_default_str();
  c_cmp->add_option("--scorer-a", cm.scorer_a, "first scorer")->required();
  c_cmp->add_option("--scorer-b", cm.scorer_b, "second scorer")->required();
  c_cmp->add_option("--param", cm.params, "scorer hyperparameter key=value (repeatable)");
  c_cmp->add_option("--n-boot", cm.n_boot, "bootstrap replicates")->capture_default_str();
  c_cmp->add_option("--seed", cm.seed, "bootstrap seed")->capture_default_str();

  AblateArgs ab;
  CLI::App* c_abl = app.add_subcommand(
      "ablate", "stage/epoch/fraction sweep; one CSV row of metrics per cell");
  c_abl->add_option("--manifest", ab.manifest, "dataset manifest")->required();
  c_abl->add_option("--out", ab.out, "output directory")->capture_default_str();
  c_abl->add_option("--stage-sets", ab.stage_sets,
                    "semicolon-separated stage subsets, e.g. '2;1,2;all'")
      ->capture_default_str();
  c_abl->add_option("--epochs-list", ab.epochs_list, "epoch counts to sweep")
      ->delimiter(',');
  c_abl->add_option("--fractions", ab.fractions, "id_train fractions to sweep")
      ->delimiter(',');
  add_train_config_flags(c_abl, ab.cfg);
  c_abl->add_flag("--no-l2", ab.no_l2, "skip row L2 normalization");
  c_abl->add_flag("--per-stage-l2", ab.per_stage_l2, "L2-normalize each stage separately");
  c_abl->add_flag("--quiet", ab.quiet, "suppress per-cell logs");
  c_abl->add_option("--n-boot", ab.n_boot, "bootstrap replicates (0 disables CIs)")
      ->capture_default_str();
  c_abl->add_option("--tpr", ab.tpr, "TPR target for FPR@TPR")->capture_default_str();
  c_abl->add_option("--fpr-convention", ab.fpr_convention,
                    "ood_positive or id_positive")
      ->capture_default_str();

  HistArgs hi;
  CLI::App* c_hist = app.add_subcommand("export-hist", "score histograms as CSV + SVG");
  c_hist->add_option("--manifest", hi.manifest, "dataset manifest")->required();
  c_hist->add_option("--checkpoint", hi.checkpoint, "flow checkpoint (.nfck)");
  c_hist->add_option("--out", hi.out, "output directory")->capture_default_str();
  c_hist->add_option("--scorer", hi.scorer, "scorer name")->capture_default_str();
  c_hist->add_option("--param", hi.params, "scorer hyperparameter key=value (repeatable)");
  c_hist->add_option("--bins", hi.bins, "histogram bins")->capture_default_str();

  std::vector<std::string> inspect_paths;
  CLI::App* c_insp = app.add_subcommand("inspect", "print file format headers");
  c_insp->add_option("paths", inspect_paths, "FVEC / checkpoint / manifest files")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::FileError& e) {
    print_error("io", e.what());
    return 3;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("argument", e.what());
    return 2;
  } catch (const Error& e) {  // config formatter failures
    print_error(error_kind_name(e.kind()), e.what());
    return exit_code(e.kind());
  }

  try {
    if (c_synth->parsed()) return run_synth(sy);
    if (c_train->parsed()) return run_train(tr);
    if (c_score->parsed()) return run_score(sc);
    if (c_eval->parsed()) return run_eval(ev);
    if (c_cmp->parsed()) return run_compare(cm);
    if (c_abl->parsed()) return run_ablate(ab);
    if (c_hist->parsed()) return run_hist(hi);
    if (c_insp->parsed()) return run_inspect(inspect_paths);
    std::cout << app.help();
    return 2;
  } catch (const Error& e) {
    print_error(error_kind_name(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
}
