#include "oodflow/fvec.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "oodflow/binio.hpp"
#include "oodflow/error.hpp"
#include "oodflow/rng.hpp"

namespace oodflow {

namespace {

constexpr char kMagic[4] = {'F', 'V', 'E', 'C'};
constexpr uint16_t kVersion = 1;
constexpr uint8_t kFlagLogits = 1;
constexpr uint8_t kFlagLabels = 2;

}  // namespace

size_t FeatureSet::stage_offset(size_t stage) const {
  if (stage >= stage_dims.size())
    throw_error(ErrorKind::argument, "stage index " + std::to_string(stage) +
                                         " out of range (" +
                                         std::to_string(stage_dims.size()) +
                                         " stages)");
  size_t off = 0;
  for (size_t i = 0; i < stage; ++i) off += stage_dims[i];
  return off;
}

void FeatureSet::validate() const {
  uint64_t sum = 0;
  for (uint32_t w : stage_dims) {
    if (w == 0)
      throw_error(ErrorKind::validation, "feature set '" + name +
                                             "': zero-width stage segment");
    sum += w;
  }
  if (stage_dims.empty())
    throw_error(ErrorKind::validation,
                "feature set '" + name + "': no stage segments");
  if (sum != data.cols)
    throw_error(ErrorKind::validation,
                "feature set '" + name + "': stage widths sum to " +
                    std::to_string(sum) + " but data has " +
                    std::to_string(data.cols) + " columns");
  if (data.v.size() != data.rows * data.cols)
    throw_error(ErrorKind::validation,
                "feature set '" + name + "': data buffer size mismatch");
  for (float x : data.v)
    if (!std::isfinite(x))
      throw_error(ErrorKind::validation,
                  "feature set '" + name + "': non-finite feature value");
  if (logits) {
    if (logits->rows != data.rows)
      throw_error(ErrorKind::validation,
                  "feature set '" + name + "': logit row count " +
                      std::to_string(logits->rows) + " != sample count " +
                      std::to_string(data.rows));
    if (logits->cols == 0)
      throw_error(ErrorKind::validation,
                  "feature set '" + name + "': zero-width logits");
    for (float x : logits->v)
      if (!std::isfinite(x))
        throw_error(ErrorKind::validation,
                    "feature set '" + name + "': non-finite logit");
  }
  if (labels) {
    if (labels->size() != data.rows)
      throw_error(ErrorKind::validation,
                  "feature set '" + name + "': label count " +
                      std::to_string(labels->size()) + " != sample count " +
                      std::to_string(data.rows));
    if (logits) {
      for (uint32_t y : *labels)
        if (y >= logits->cols)
          throw_error(ErrorKind::validation,
                      "feature set '" + name + "': label " +
                          std::to_string(y) + " out of range for " +
                          std::to_string(logits->cols) + " classes");
    }
  }
}

void save_fvec(const std::string& path, const FeatureSet& fs) {
  fs.validate();
  ByteWriter w;
  w.bytes(kMagic, 4);
  w.u16(kVersion);
  uint8_t flags = 0;
  if (fs.logits) flags |= kFlagLogits;
  if (fs.labels) flags |= kFlagLabels;
  w.u8(flags);
  w.u8(0);
  w.u64(fs.data.rows);
  w.u32(static_cast<uint32_t>(fs.data.cols));
  w.u16(static_cast<uint16_t>(fs.stage_dims.size()));
  for (uint32_t d : fs.stage_dims) w.u32(d);
  if (flags != 0) {
    uint32_t c = fs.logits ? static_cast<uint32_t>(fs.logits->cols) : 0;
    if (!fs.logits && fs.labels) {
      // Labels without logits: record the class count as max label + 1.
      uint32_t m = 0;
      for (uint32_t y : *fs.labels) m = std::max(m, y + 1);
      c = m;
    }
    w.u32(c);
  }
  w.f32_array(fs.data.v.data(), fs.data.v.size());
  if (fs.logits) w.f32_array(fs.logits->v.data(), fs.logits->v.size());
  if (fs.labels) w.u32_array(fs.labels->data(), fs.labels->size());
  write_file_atomic(path, w.data().data(), w.size());
}

namespace {

struct FvecHeader {
  uint16_t version = 0;
  uint8_t flags = 0;
  uint64_t n = 0;
  uint32_t d = 0;
  std::vector<uint32_t> stage_dims;
  uint32_t c = 0;
};

FvecHeader read_fvec_header(ByteReader& r, const std::string& path) {
  char magic[4];
  if (r.remaining() < 4)
    throw_error(ErrorKind::format, path + ": not an FVEC file");
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw_error(ErrorKind::format, path + ": not an FVEC file");
  FvecHeader h;
  h.version = r.u16();
  if (h.version != kVersion)
    throw_error(ErrorKind::version,
                path + ": FVEC version " + std::to_string(h.version) +
                    " unsupported (expect " + std::to_string(kVersion) + ")");
  h.flags = r.u8();
  if (h.flags & ~(kFlagLogits | kFlagLabels))
    throw_error(ErrorKind::format, path + ": unknown FVEC flags");
  r.u8();  // reserved
  h.n = r.u64();
  h.d = r.u32();
  uint16_t n_stages = r.u16();
  h.stage_dims.resize(n_stages);
  for (auto& sd : h.stage_dims) sd = r.u32();
  if (h.flags != 0) h.c = r.u32();
  return h;
}

}  // namespace

FeatureSet load_fvec(const std::string& path, const std::string& name) {
  std::vector<uint8_t> buf = read_file(path);
  ByteReader r(buf.data(), buf.size());
  FvecHeader h = read_fvec_header(r, path);

  FeatureSet fs;
  fs.name = name.empty() ? path : name;
  fs.data = MatF(h.n, h.d);
  fs.stage_dims = h.stage_dims;
  r.f32_array(fs.data.v.data(), fs.data.v.size());
  if (h.flags & kFlagLogits) {
    MatF lg(h.n, h.c);
    r.f32_array(lg.v.data(), lg.v.size());
    fs.logits = std::move(lg);
  }
  if (h.flags & kFlagLabels) {
    std::vector<uint32_t> lb(h.n);
    r.u32_array(lb.data(), lb.size());
    fs.labels = std::move(lb);
  }
  if (r.remaining() != 0)
    throw_error(ErrorKind::corruption, path + ": trailing bytes after payload");
  fs.validate();
  return fs;
}

std::string describe_fvec(const std::string& path) {
  std::vector<uint8_t> buf = read_file(path);
  ByteReader r(buf.data(), buf.size());
  FvecHeader h = read_fvec_header(r, path);
  std::ostringstream os;
  os << "fvec v" << h.version << "  samples=" << h.n << "  dim=" << h.d
     << "  stages=[";
  for (size_t i = 0; i < h.stage_dims.size(); ++i)
    os << (i ? "," : "") << h.stage_dims[i];
  os << "]";
  if (h.flags & kFlagLogits) os << "  logits=" << h.c;
  if (h.flags & kFlagLabels) os << "  labels=yes";
  return os.str();
}

FeatureSet select_stages(const FeatureSet& fs,
                         const std::vector<size_t>& stages) {
  if (stages.empty())
    throw_error(ErrorKind::argument, "select_stages: empty stage list");
  for (size_t i = 0; i < stages.size(); ++i) {
    if (stages[i] >= fs.num_stages())
      throw_error(ErrorKind::argument,
                  "select_stages: stage " + std::to_string(stages[i]) +
                      " out of range (" + std::to_string(fs.num_stages()) +
                      " stages)");
    if (i > 0 && stages[i] <= stages[i - 1])
      throw_error(ErrorKind::argument,
                  "select_stages: stage indices must be strictly increasing");
  }

  std::vector<size_t> offs(stages.size());
  size_t out_d = 0;
  for (size_t i = 0; i < stages.size(); ++i) {
    offs[i] = fs.stage_offset(stages[i]);
    out_d += fs.stage_dims[stages[i]];
  }

  FeatureSet out;
  out.name = fs.name;
  out.logits = fs.logits;
  out.labels = fs.labels;
  out.data = MatF(fs.n(), out_d);
  out.stage_dims.reserve(stages.size());
  for (size_t s : stages) out.stage_dims.push_back(fs.stage_dims[s]);
  for (size_t i = 0; i < fs.n(); ++i) {
    const float* src = fs.data.row(i);
    float* dst = out.data.row(i);
    size_t pos = 0;
    for (size_t j = 0; j < stages.size(); ++j) {
      size_t w = fs.stage_dims[stages[j]];
      std::memcpy(dst + pos, src + offs[j], w * sizeof(float));
      pos += w;
    }
  }
  return out;
}

MatF stage_slice(const FeatureSet& fs, size_t stage) {
  if (stage >= fs.num_stages())
    throw_error(ErrorKind::argument,
                "stage_slice: stage " + std::to_string(stage) +
                    " out of range (" + std::to_string(fs.num_stages()) +
                    " stages)");
  const size_t off = fs.stage_offset(stage);
  const size_t w = fs.stage_dims[stage];
  MatF out(fs.n(), w);
  for (size_t r = 0; r < fs.n(); ++r)
    std::memcpy(out.row(r), fs.data.row(r) + off, w * sizeof(float));
  return out;
}

FeatureSet l2_normalize(const FeatureSet& fs, double epsilon, bool per_stage) {
  if (epsilon <= 0)
    throw_error(ErrorKind::argument, "l2_normalize: epsilon must be positive");
  FeatureSet out = fs;
  std::vector<size_t> offs(fs.num_stages());
  for (size_t s = 0; s < fs.num_stages(); ++s) offs[s] = fs.stage_offset(s);

  auto normalize_span = [epsilon](float* p, size_t w) {
    double ss = 0;
    for (size_t j = 0; j < w; ++j) ss += double(p[j]) * double(p[j]);
    double norm = std::max(std::sqrt(ss), epsilon);
    float inv = static_cast<float>(1.0 / norm);
    for (size_t j = 0; j < w; ++j) p[j] *= inv;
  };

  for (size_t i = 0; i < out.n(); ++i) {
    float* row = out.data.row(i);
    if (per_stage) {
      for (size_t s = 0; s < fs.num_stages(); ++s)
        normalize_span(row + offs[s], fs.stage_dims[s]);
    } else {
      normalize_span(row, out.dim());
    }
  }
  return out;
}

FeatureSet subsample(const FeatureSet& fs, double fraction, uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0)
    throw_error(ErrorKind::argument,
                "subsample: fraction must be in (0, 1], got " +
                    std::to_string(fraction));
  if (fraction == 1.0) return fs;

  size_t n = fs.n();
  // Guard against 0.25 * 4 style cases landing just above an integer.
  size_t k = static_cast<size_t>(std::ceil(fraction * double(n) - 1e-9));
  k = std::min(std::max<size_t>(k, 1), n);

  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  Rng rng(seed);
  rng.shuffle(idx);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());

  FeatureSet out;
  out.name = fs.name;
  out.stage_dims = fs.stage_dims;
  out.data = MatF(k, fs.dim());
  if (fs.logits) out.logits = MatF(k, fs.logits->cols);
  if (fs.labels) out.labels = std::vector<uint32_t>(k);
  for (size_t i = 0; i < k; ++i) {
    std::memcpy(out.data.row(i), fs.data.row(idx[i]),
                fs.dim() * sizeof(float));
    if (fs.logits)
      std::memcpy(out.logits->row(i), fs.logits->row(idx[i]),
                  fs.logits->cols * sizeof(float));
    if (fs.labels) (*out.labels)[i] = (*fs.labels)[idx[i]];
  }
  return out;
}

FeatureSet FeatureTransform::apply(const FeatureSet& fs) const {
  FeatureSet out = stages.empty() ? fs : select_stages(fs, stages);
  if (l2) out = l2_normalize(out, 1e-12, per_stage);
  return out;
}

std::string FeatureTransform::to_json() const {
  nlohmann::ordered_json j;
  j["stages"] = stages;
  j["l2"] = l2;
  j["per_stage"] = per_stage;
  return j.dump();
}

FeatureTransform FeatureTransform::from_json(const std::string& text) {
  FeatureTransform t;
  if (text.empty()) return t;
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw_error(ErrorKind::format,
                std::string("bad feature-transform record: ") + e.what());
  }
  if (j.contains("stages")) t.stages = j["stages"].get<std::vector<size_t>>();
  t.l2 = j.value("l2", true);
  t.per_stage = j.value("per_stage", false);
  return t;
}

void ClassifierHead::validate() const {
  if (w.rows == 0 || w.cols == 0)
    throw_error(ErrorKind::validation, "classifier head: empty weight matrix");
  if (b.size() != w.rows)
    throw_error(ErrorKind::validation,
                "classifier head: bias length " + std::to_string(b.size()) +
                    " != class count " + std::to_string(w.rows));
  for (float x : w.v)
    if (!std::isfinite(x))
      throw_error(ErrorKind::validation, "classifier head: non-finite weight");
  for (float x : b)
    if (!std::isfinite(x))
      throw_error(ErrorKind::validation, "classifier head: non-finite bias");
}

MatF ClassifierHead::logits(const MatF& x) const {
  if (x.cols != w.cols)
    throw_error(ErrorKind::argument,
                "head expects width " + std::to_string(w.cols) + ", got " +
                    std::to_string(x.cols));
  MatF out(x.rows, w.rows);
  for (size_t i = 0; i < x.rows; ++i) {
    const float* xi = x.row(i);
    float* oi = out.row(i);
    for (size_t c = 0; c < w.rows; ++c) {
      const float* wc = w.row(c);
      double acc = b[c];
      for (size_t j = 0; j < w.cols; ++j) acc += double(xi[j]) * double(wc[j]);
      oi[c] = static_cast<float>(acc);
    }
  }
  return out;
}

void save_head(const std::string& path, const ClassifierHead& head) {
  head.validate();
  FeatureSet fs;
  fs.name = "head";
  fs.data = MatF(head.w.rows, head.w.cols + 1);
  fs.stage_dims = {static_cast<uint32_t>(head.w.cols), 1};
  for (size_t c = 0; c < head.w.rows; ++c) {
    float* row = fs.data.row(c);
    std::memcpy(row, head.w.row(c), head.w.cols * sizeof(float));
    row[head.w.cols] = head.b[c];
  }
  save_fvec(path, fs);
}

ClassifierHead load_head(const std::string& path) {
  FeatureSet fs = load_fvec(path, "head");
  if (fs.stage_dims.size() != 2 || fs.stage_dims[1] != 1)
    throw_error(ErrorKind::format,
                path + ": not a classifier head (want stage layout [D, 1])");
  ClassifierHead head;
  head.w = MatF(fs.n(), fs.dim() - 1);
  head.b.resize(fs.n());
  for (size_t c = 0; c < fs.n(); ++c) {
    const float* row = fs.data.row(c);
    std::memcpy(head.w.row(c), row, head.w.cols * sizeof(float));
    head.b[c] = row[head.w.cols];
  }
  head.validate();
  return head;
}

}  // namespace oodflow
