#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace oodflow {

enum class SplitRole { id_train, id_val, id_test, ood_val, ood_test };

const char* split_role_name(SplitRole role);
SplitRole parse_split_role(const std::string& s);

struct ManifestEntry {
  std::string path;      // FVEC file, relative paths resolve against the manifest
  SplitRole role;
  std::string category;  // free shift tag, e.g. "near" / "far"; may be empty
  std::string name;      // display name; defaults to the file stem
};

// Declares the benchmark layout: which feature dumps play which role, which
// stage segment counts as penultimate activations, and where the frozen
// classifier head lives.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  uint32_t penultimate_stage = 0;
  std::optional<std::string> head_path;

  const ManifestEntry& sole(SplitRole role) const;
  const ManifestEntry* find(SplitRole role) const;  // first match or nullptr
  std::vector<const ManifestEntry*> all(SplitRole role) const;

  // Structural checks: exactly one id_train, at least one id_test and one
  // ood_test, no duplicate names within a role. Throws ValidationError.
  void validate() const;
};

// JSON schema (schema_version 1):
//   { "schema_version": 1,
//     "penultimate_stage": 4,
//     "head_path": "head.fvec",            // optional
//     "entries": [ {"path": "...", "role": "id_train",
//                   "category": "near",     // optional
//                   "name": "train"} ] }    // optional
DatasetManifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const DatasetManifest& m);

// Resolves an entry path relative to the manifest's directory.
std::string resolve_manifest_path(const std::string& manifest_path,
                                  const std::string& entry_path);

}  // namespace oodflow
