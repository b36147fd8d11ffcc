#include "oodflow/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "oodflow/binio.hpp"
#include "oodflow/error.hpp"

namespace oodflow {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

const char* split_role_name(SplitRole role) {
  switch (role) {
    case SplitRole::id_train: return "id_train";
    case SplitRole::id_val: return "id_val";
    case SplitRole::id_test: return "id_test";
    case SplitRole::ood_val: return "ood_val";
    case SplitRole::ood_test: return "ood_test";
  }
  return "?";
}

SplitRole parse_split_role(const std::string& s) {
  for (SplitRole r : {SplitRole::id_train, SplitRole::id_val, SplitRole::id_test,
                      SplitRole::ood_val, SplitRole::ood_test})
    if (s == split_role_name(r)) return r;
  throw_error(ErrorKind::format, "unknown split role '" + s + "'");
}

const ManifestEntry& DatasetManifest::sole(SplitRole role) const {
  const ManifestEntry* found = nullptr;
  for (const auto& e : entries) {
    if (e.role != role) continue;
    if (found)
      throw_error(ErrorKind::validation, std::string("manifest: multiple ") +
                                             split_role_name(role) +
                                             " entries");
    found = &e;
  }
  if (!found)
    throw_error(ErrorKind::validation,
                std::string("manifest: no ") + split_role_name(role) +
                    " entry");
  return *found;
}

const ManifestEntry* DatasetManifest::find(SplitRole role) const {
  for (const auto& e : entries)
    if (e.role == role) return &e;
  return nullptr;
}

std::vector<const ManifestEntry*> DatasetManifest::all(SplitRole role) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries)
    if (e.role == role) out.push_back(&e);
  return out;
}

void DatasetManifest::validate() const {
  size_t n_train = 0, n_id_test = 0, n_ood_test = 0;
  std::set<std::pair<SplitRole, std::string>> seen;
  for (const auto& e : entries) {
    if (e.path.empty())
      throw_error(ErrorKind::validation, "manifest: entry with empty path");
    if (e.role == SplitRole::id_train) ++n_train;
    if (e.role == SplitRole::id_test) ++n_id_test;
    if (e.role == SplitRole::ood_test) ++n_ood_test;
    if (!seen.insert({e.role, e.name}).second)
      throw_error(ErrorKind::validation,
                  "manifest: duplicate name '" + e.name + "' within role " +
                      split_role_name(e.role));
  }
  if (n_train != 1)
    throw_error(ErrorKind::validation,
                "manifest: expected exactly one id_train entry, found " +
                    std::to_string(n_train));
  if (n_id_test == 0)
    throw_error(ErrorKind::validation, "manifest: no id_test entry");
  if (n_ood_test == 0)
    throw_error(ErrorKind::validation, "manifest: no ood_test entry");
}

namespace {

std::string stem_of(const std::string& path) {
  return fs::path(path).stem().string();
}

}  // namespace

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_error(ErrorKind::io, "cannot open manifest " + path);
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw_error(ErrorKind::format, path + ": invalid JSON: " + e.what());
  }
  if (!j.is_object() || !j.contains("schema_version"))
    throw_error(ErrorKind::format, path + ": missing schema_version");
  if (j["schema_version"].get<int64_t>() != 1)
    throw_error(ErrorKind::version,
                path + ": unsupported manifest schema_version " +
                    j["schema_version"].dump());

  DatasetManifest m;
  try {
    m.penultimate_stage = j.value("penultimate_stage", 0u);
    if (j.contains("head_path") && !j["head_path"].is_null())
      m.head_path = j["head_path"].get<std::string>();
    if (!j.contains("entries") || !j["entries"].is_array())
      throw_error(ErrorKind::format, path + ": missing entries array");
    for (const auto& je : j["entries"]) {
      ManifestEntry e;
      e.path = je.at("path").get<std::string>();
      e.role = parse_split_role(je.at("role").get<std::string>());
      e.category = je.value("category", "");
      e.name = je.value("name", "");
      if (e.name.empty()) e.name = stem_of(e.path);
      m.entries.push_back(std::move(e));
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw_error(ErrorKind::format, path + ": bad manifest field: " + e.what());
  }
  m.validate();
  return m;
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
  m.validate();
  ordered_json j;
  j["schema_version"] = 1;
  j["penultimate_stage"] = m.penultimate_stage;
  if (m.head_path) j["head_path"] = *m.head_path;
  j["entries"] = ordered_json::array();
  for (const auto& e : m.entries) {
    ordered_json je;
    je["path"] = e.path;
    je["role"] = split_role_name(e.role);
    if (!e.category.empty()) je["category"] = e.category;
    je["name"] = e.name;
    j["entries"].push_back(std::move(je));
  }
  write_text_atomic(path, j.dump(2) + "\n");
}

std::string resolve_manifest_path(const std::string& manifest_path,
                                  const std::string& entry_path) {
  fs::path p(entry_path);
  if (p.is_absolute()) return entry_path;
  return (fs::path(manifest_path).parent_path() / p).string();
}

}  // namespace oodflow
