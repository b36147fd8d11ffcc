#include "oodflow/checkpoint.hpp"

#include <cstring>
#include <sstream>

#include <nlohmann/json.hpp>

#include "oodflow/binio.hpp"
#include "oodflow/error.hpp"

namespace oodflow {

namespace {

constexpr char kMagic[4] = {'N', 'F', 'C', 'K'};
constexpr uint16_t kVersion = 1;
using ordered_json = nlohmann::ordered_json;

ordered_json config_to_json(const TrainConfig& c) {
  ordered_json j;
  j["learning_rate"] = c.learning_rate;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["clamp"] = c.clamp;
  j["n_blocks"] = c.n_blocks;
  j["hidden"] = c.hidden;
  j["data_fraction"] = c.data_fraction;
  j["eval_every"] = c.eval_every;
  return j;
}

TrainConfig config_from_json(const ordered_json& j) {
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.clamp = j.value("clamp", c.clamp);
  c.n_blocks = j.value("n_blocks", c.n_blocks);
  if (j.contains("hidden")) c.hidden = j["hidden"].get<std::vector<uint32_t>>();
  c.data_fraction = j.value("data_fraction", c.data_fraction);
  c.eval_every = j.value("eval_every", c.eval_every);
  return c;
}

std::string meta_to_json(const CheckpointMeta& meta) {
  ordered_json j;
  j["schema_version"] = 1;
  j["config"] = config_to_json(meta.config);
  j["best_epoch"] = meta.best_epoch;
  j["best_val_auroc"] = meta.best_val_auroc;
  j["best_train_nll"] = meta.best_train_nll;
  j["train_nll"] = meta.train_nll;
  ordered_json va = ordered_json::array();
  for (const auto& [epoch, v] : meta.val_auroc) va.push_back({epoch, v});
  j["val_auroc"] = va;
  j["note"] = meta.note;
  return j.dump();
}

CheckpointMeta meta_from_json(const std::string& text,
                              const std::string& path) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw_error(ErrorKind::corruption,
                path + ": checkpoint metadata is not valid JSON: " + e.what());
  }
  CheckpointMeta meta;
  try {
    if (j.contains("config")) meta.config = config_from_json(j["config"]);
    meta.best_epoch = j.value("best_epoch", 0u);
    meta.best_val_auroc = j.value("best_val_auroc", 0.0);
    meta.best_train_nll = j.value("best_train_nll", 0.0);
    if (j.contains("train_nll"))
      meta.train_nll = j["train_nll"].get<std::vector<double>>();
    if (j.contains("val_auroc"))
      for (const auto& pair : j["val_auroc"])
        meta.val_auroc.push_back(
            {pair.at(0).get<uint32_t>(), pair.at(1).get<double>()});
    meta.note = j.value("note", "");
  } catch (const std::exception& e) {
    throw_error(ErrorKind::corruption,
                path + ": bad checkpoint metadata field: " + e.what());
  }
  return meta;
}

}  // namespace

void save_checkpoint(const std::string& path, const FlowModel& m,
                     const CheckpointMeta& meta) {
  ByteWriter w;
  w.bytes(kMagic, 4);
  w.u16(kVersion);
  w.u32(m.dim);
  w.u16(static_cast<uint16_t>(m.blocks()));
  w.f32(m.clamp);
  w.u16(static_cast<uint16_t>(m.hidden.size()));
  for (uint32_t h : m.hidden) w.u32(h);

  const size_t mask_bytes = (m.dim + 7) / 8;
  for (const auto& c : m.couplings) {
    std::vector<uint8_t> bits(mask_bytes, 0);
    for (uint32_t d = 0; d < m.dim; ++d)
      if (c.mask[d]) bits[d / 8] |= uint8_t(1u << (d % 8));
    w.bytes(bits.data(), bits.size());
  }
  for (const auto& an : m.actnorms) w.u8(an.initialized ? 1 : 0);

  w.u64(m.param_count());
  visit_params(m, [&](const std::vector<float>& a) {
    w.f32_array(a.data(), a.size());
  });

  const std::string meta_json = meta_to_json(meta);
  w.u32(static_cast<uint32_t>(meta_json.size()));
  w.bytes(meta_json.data(), meta_json.size());

  const uint32_t crc = crc32(w.data().data(), w.size());
  w.u32(crc);
  write_file_atomic(path, w.data().data(), w.size());
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  const std::vector<uint8_t> buf = read_file(path);
  if (buf.size() < 10)
    throw_error(ErrorKind::format, path + ": too short to be a checkpoint");
  if (std::memcmp(buf.data(), kMagic, 4) != 0)
    throw_error(ErrorKind::format, path + ": not a checkpoint file");

  // Integrity first: trailing CRC over everything before it.
  const uint32_t stored = uint32_t(buf[buf.size() - 4]) |
                          uint32_t(buf[buf.size() - 3]) << 8 |
                          uint32_t(buf[buf.size() - 2]) << 16 |
                          uint32_t(buf[buf.size() - 1]) << 24;
  if (crc32(buf.data(), buf.size() - 4) != stored)
    throw_error(ErrorKind::corruption, path + ": checksum mismatch");

  ByteReader r(buf.data(), buf.size() - 4);
  char magic[4];
  r.bytes(magic, 4);
  const uint16_t version = r.u16();
  if (version != kVersion)
    throw_error(ErrorKind::version,
                path + ": unsupported checkpoint version " +
                    std::to_string(version));

  LoadedCheckpoint lc;
  FlowModel& m = lc.model;
  m.dim = r.u32();
  const uint16_t n_blocks = r.u16();
  m.clamp = r.f32();
  const uint16_t n_hidden = r.u16();
  m.hidden.resize(n_hidden);
  for (auto& h : m.hidden) h = r.u32();
  if (m.dim == 0)
    throw_error(ErrorKind::corruption, path + ": zero model dim");

  const size_t mask_bytes = (m.dim + 7) / 8;
  m.couplings.resize(n_blocks);
  m.actnorms.resize(n_blocks);
  for (auto& c : m.couplings) {
    std::vector<uint8_t> bits(mask_bytes);
    r.bytes(bits.data(), bits.size());
    c.clamp = m.clamp;
    c.mask.assign(m.dim, 0);
    for (uint32_t d = 0; d < m.dim; ++d)
      c.mask[d] = (bits[d / 8] >> (d % 8)) & 1u;
    c.rebuild_index();
    for (auto [net, out_w] :
         {std::pair{&c.s_net, c.change_idx.size()},
          std::pair{&c.t_net, c.change_idx.size()}}) {
      size_t prev = c.pass_idx.size();
      net->layers.clear();
      for (uint32_t h : m.hidden) {
        Linear l;
        l.resize(prev, h);
        net->layers.push_back(std::move(l));
        prev = h;
      }
      Linear last;
      last.resize(prev, out_w);
      net->layers.push_back(std::move(last));
    }
  }
  for (auto& an : m.actnorms) {
    an.log_scale.assign(m.dim, 0.0f);
    an.bias.assign(m.dim, 0.0f);
  }
  std::vector<uint8_t> init_flags(n_blocks);
  for (auto& f : init_flags) f = r.u8();

  const uint64_t n_params = r.u64();
  if (n_params != m.param_count())
    throw_error(ErrorKind::corruption,
                path + ": parameter count " + std::to_string(n_params) +
                    " does not match architecture (" +
                    std::to_string(m.param_count()) + ")");
  visit_params(m, [&](std::vector<float>& a) {
    r.f32_array(a.data(), a.size());
  });
  for (size_t k = 0; k < m.actnorms.size(); ++k)
    m.actnorms[k].initialized = init_flags[k] != 0;

  const uint32_t meta_len = r.u32();
  if (meta_len > r.remaining())
    throw_error(ErrorKind::corruption, path + ": truncated metadata block");
  std::string meta_json(meta_len, '\0');
  r.bytes(meta_json.data(), meta_len);
  if (r.remaining() != 0)
    throw_error(ErrorKind::corruption, path + ": trailing bytes in payload");
  lc.meta = meta_from_json(meta_json, path);

  refresh_derived(m);
  return lc;
}

std::string describe_checkpoint(const std::string& path) {
  LoadedCheckpoint lc = load_checkpoint(path);
  std::ostringstream os;
  os << "checkpoint v" << kVersion << "  dim=" << lc.model.dim
     << "  blocks=" << lc.model.blocks() << "  hidden=[";
  for (size_t i = 0; i < lc.model.hidden.size(); ++i)
    os << (i ? "," : "") << lc.model.hidden[i];
  os << "]  clamp=" << lc.model.clamp
     << "  params=" << lc.model.param_count()
     << "  best_epoch=" << lc.meta.best_epoch
     << "  best_val_auroc=" << lc.meta.best_val_auroc;
  return os.str();
}

}  // namespace oodflow
