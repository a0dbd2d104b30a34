#include "dejavu/manifest.hpp"

#include <array>
#include <cstdio>
#include <fstream>
#include <memory>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "dejavu/error.hpp"

namespace dejavu {
namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const nlohmann::json& j,
                              const char* key) {
  if (!j.contains(key) || !j[key].is_string())
    throw ValidationError(std::string("manifest field \"") + key + "\" must be a path string");
  std::filesystem::path p = j[key].get<std::string>();
  return p.is_absolute() ? p : base / p;
}

}  // namespace

AuditManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw FormatError(path.string() + ": manifest must be a JSON object");
  const auto base = path.parent_path();
  AuditManifest m;
  m.text_target = resolve(base, j, "text_target");
  m.text_reference = resolve(base, j, "text_reference");
  m.public_target = resolve(base, j, "public_target");
  m.public_reference = resolve(base, j, "public_reference");
  m.split_annotations = resolve(base, j, "split_annotations");
  m.public_annotations = resolve(base, j, "public_annotations");
  try {
    m.split_name = j.value("split_name", m.split_name);
    m.k = j.value("k", m.k);
    m.top_m = j.value("top_m", m.top_m);
    if (j.contains("bootstrap")) {
      m.bootstrap_reps = j["bootstrap"].value("reps", m.bootstrap_reps);
      m.bootstrap_fraction = j["bootstrap"].value("fraction", m.bootstrap_fraction);
    }
    if (j.contains("seed") && !j["seed"].is_null()) m.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("metadata"))
      for (const auto& [key, value] : j["metadata"].items())
        m.metadata[key] = value.is_string() ? value.get<std::string>() : value.dump();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  for (const auto& p : {m.text_target, m.text_reference, m.public_target, m.public_reference,
                        m.split_annotations, m.public_annotations})
    if (!std::filesystem::exists(p))
      throw ValidationError("manifest " + path.string() + " references missing file " + p.string());
  return m;
}

void save_manifest(const AuditManifest& m, const std::filesystem::path& path) {
  const auto base = path.parent_path();
  auto rel = [&](const std::filesystem::path& p) {
    return std::filesystem::relative(p, base.empty() ? "." : base).generic_string();
  };
  nlohmann::ordered_json j;
  j["split_name"] = m.split_name;
  j["text_target"] = rel(m.text_target);
  j["text_reference"] = rel(m.text_reference);
  j["public_target"] = rel(m.public_target);
  j["public_reference"] = rel(m.public_reference);
  j["split_annotations"] = rel(m.split_annotations);
  j["public_annotations"] = rel(m.public_annotations);
  j["k"] = m.k;
  j["top_m"] = m.top_m;
  j["bootstrap"]["reps"] = m.bootstrap_reps;
  j["bootstrap"]["fraction"] = m.bootstrap_fraction;
  j["seed"] = m.seed ? nlohmann::ordered_json(*m.seed) : nlohmann::ordered_json(nullptr);
  j["metadata"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : m.metadata) j["metadata"][k] = v;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

AuditDataset load_dataset(const AuditManifest& m) {
  return assemble(load_embeddings(m.text_target), load_embeddings(m.text_reference),
                  load_annotations(m.split_annotations), load_embeddings(m.public_target),
                  load_embeddings(m.public_reference), load_annotations(m.public_annotations),
                  m.split_name);
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 unavailable");
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::string hex;
  char byte[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(byte, sizeof byte, "%02x", md[i]);
    hex += byte;
  }
  return hex;
}

std::map<std::string, std::string> manifest_digests(const AuditManifest& m) {
  std::map<std::string, std::string> out;
  auto add_embedding = [&](const std::string& role, const std::filesystem::path& header) {
    out["digest." + role + ".header"] = file_sha256(header);
    std::ifstream in(header);
    nlohmann::json j;
    in >> j;
    auto payload = j.contains("payload") ? header.parent_path() / j["payload"].get<std::string>()
                                         : default_payload_path(header);
    out["digest." + role + ".payload"] = file_sha256(payload);
  };
  add_embedding("text_target", m.text_target);
  add_embedding("text_reference", m.text_reference);
  add_embedding("public_target", m.public_target);
  add_embedding("public_reference", m.public_reference);
  out["digest.split_annotations"] = file_sha256(m.split_annotations);
  out["digest.public_annotations"] = file_sha256(m.public_annotations);
  return out;
}

}  // namespace dejavu
