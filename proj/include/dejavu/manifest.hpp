#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "dejavu/audit.hpp"
#include "dejavu/embedding_store.hpp"

namespace dejavu {

/// On-disk description of one audit: the four embedding headers (each with
/// its payload) and two annotation files of an AuditDataset, plus test
/// parameters. Relative paths resolve against the manifest's directory.
struct AuditManifest {
  std::filesystem::path text_target;
  std::filesystem::path text_reference;
  std::filesystem::path public_target;
  std::filesystem::path public_reference;
  std::filesystem::path split_annotations;
  std::filesystem::path public_annotations;
  std::string split_name = "A";
  std::size_t k = kDefaultK;
  std::size_t top_m = 10;
  std::size_t bootstrap_reps = 100;
  double bootstrap_fraction = 0.1;
  std::optional<std::uint64_t> seed;
  std::map<std::string, std::string> metadata;
};

AuditManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const AuditManifest& m, const std::filesystem::path& path);

/// Loads and assembles every file the manifest names.
AuditDataset load_dataset(const AuditManifest& m);

/// Lowercase hex SHA-256 of a file's bytes.
std::string file_sha256(const std::filesystem::path& path);

/// Digests of every input file (headers, payloads, annotations), keyed
/// "digest.<role>".
std::map<std::string, std::string> manifest_digests(const AuditManifest& m);

}  // namespace dejavu
