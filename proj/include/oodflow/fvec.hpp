#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "oodflow/mat.hpp"

namespace oodflow {

// A dump of pooled backbone features: one row per sample, columns split
// into per-stage segments. Logits and class labels ride along when the
// extractor produced them. Immutable after construction by convention;
// the transforms below return new sets.
struct FeatureSet {
  std::string name;
  MatF data;                             // N x D
  std::vector<uint32_t> stage_dims;      // segment widths, sum == D
  std::optional<MatF> logits;            // N x C
  std::optional<std::vector<uint32_t>> labels;  // class index per row, < C

  size_t n() const { return data.rows; }
  size_t dim() const { return data.cols; }
  size_t num_stages() const { return stage_dims.size(); }
  size_t num_classes() const { return logits ? logits->cols : 0; }

  // Column offset of a stage segment.
  size_t stage_offset(size_t stage) const;

  // Throws ValidationError when an invariant is broken.
  void validate() const;
};

// FVEC container, format version 1. Little-endian throughout:
//   "FVEC" | u16 version | u8 flags (1=logits, 2=labels) | u8 reserved |
//   u64 N | u32 D | u16 n_stages | u32 stage_dims[n_stages] |
//   u32 C (present iff flags != 0) |
//   f32 data[N*D] | f32 logits[N*C] | u32 labels[N]
void save_fvec(const std::string& path, const FeatureSet& fs);
FeatureSet load_fvec(const std::string& path, const std::string& name = "");

// Header summary for `inspect`.
std::string describe_fvec(const std::string& path);

// Keeps the listed stage segments (strictly increasing indices), in order.
FeatureSet select_stages(const FeatureSet& fs, const std::vector<size_t>& stages);

// Copy of one stage segment as a plain matrix.
MatF stage_slice(const FeatureSet& fs, size_t stage);

// Row-wise x / max(||x||2, epsilon). With per_stage, each segment is
// normalized independently instead of the concatenated vector.
FeatureSet l2_normalize(const FeatureSet& fs, double epsilon = 1e-12,
                        bool per_stage = false);

// ceil(fraction*N) rows drawn uniformly without replacement, original row
// order preserved. fraction == 1 returns an unchanged copy.
FeatureSet subsample(const FeatureSet& fs, double fraction, uint64_t seed);

// The feature pipeline applied before the flow (stage selection then
// row-wise L2 normalization). Serialized into checkpoint metadata so scoring
// reapplies exactly the transform the model was trained on.
struct FeatureTransform {
  std::vector<size_t> stages;  // empty = keep all stages
  bool l2 = true;
  bool per_stage = false;

  FeatureSet apply(const FeatureSet& fs) const;
  std::string to_json() const;
  static FeatureTransform from_json(const std::string& text);
};

// Frozen final linear layer of the backbone classifier.
struct ClassifierHead {
  MatF w;                 // C x D_pen
  std::vector<float> b;   // length C

  size_t num_classes() const { return w.rows; }
  size_t in_dim() const { return w.cols; }
  void validate() const;

  // logits = x W^T + b for each row of x (width D_pen).
  MatF logits(const MatF& x) const;
};

// Head files reuse the FVEC container: N = C rows, D = D_pen + 1 columns,
// stage_dims [D_pen, 1]; each row is (w_c, b_c).
void save_head(const std::string& path, const ClassifierHead& head);
ClassifierHead load_head(const std::string& path);

}  // namespace oodflow
