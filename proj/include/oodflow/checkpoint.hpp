#pragma once

#include <string>

#include "oodflow/flow.hpp"
#include "oodflow/trainer.hpp"

namespace oodflow {

// Checkpoint container (format version 1), little-endian:
//   "NFCK" | u16 version | u32 D | u16 K | f32 clamp |
//   u16 n_hidden | u32 hidden[] |
//   K mask bitmaps of ceil(D/8) bytes (LSB-first; bit = pass-through) |
//   K u8 actnorm-initialized flags |
//   u64 n_params | f32 params in canonical traversal order |
//   u32 meta_len | meta JSON (UTF-8) | u32 crc32 of all preceding bytes
// Loading reproduces log_prob bit-identically on the same build.

struct CheckpointMeta {
  TrainConfig config;
  uint32_t best_epoch = 0;
  double best_val_auroc = 0.0;
  double best_train_nll = 0.0;
  std::vector<double> train_nll;
  std::vector<std::pair<uint32_t, double>> val_auroc;
  std::string note;  // free-form provenance (feature transform, stages, ...)
};

struct LoadedCheckpoint {
  FlowModel model;
  CheckpointMeta meta;
};

void save_checkpoint(const std::string& path, const FlowModel& m,
                     const CheckpointMeta& meta);
LoadedCheckpoint load_checkpoint(const std::string& path);

// Header summary for `inspect`.
std::string describe_checkpoint(const std::string& path);

}  // namespace oodflow
