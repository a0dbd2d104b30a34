#include "dejavu/embedding_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "dejavu/error.hpp"
#include "dejavu/text.hpp"

namespace dejavu {
namespace {

constexpr const char* kMagic = "DVEMB1";
// Rows whose norm is already this close to 1 are left untouched so that
// normalize() is exactly idempotent.
constexpr double kUnitSlack = 1e-6;
constexpr double kUnitTolerance = 1e-5;

std::string join_ids(const std::vector<std::string>& ids) {
  std::string out;
  for (const auto& id : ids) {
    if (!out.empty()) out += ", ";
    out += '"' + id + '"';
  }
  return out;
}

double row_norm(std::span<const float> row) {
  double acc = 0.0;
  for (float v : row) acc += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(acc);
}

std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

void to_little_endian(std::vector<float>& values) {
  if constexpr (std::endian::native == std::endian::big) {
    for (float& f : values) f = std::bit_cast<float>(byteswap32(std::bit_cast<std::uint32_t>(f)));
  }
}

std::vector<std::string> sorted_difference(const std::vector<std::string>& a,
                                           const std::vector<std::string>& b) {
  std::unordered_set<std::string> in_b(b.begin(), b.end());
  std::vector<std::string> out;
  for (const auto& id : a)
    if (!in_b.contains(id)) out.push_back(id);
  std::sort(out.begin(), out.end());
  return out;
}

// Reorders `m` so its IDs follow `order`; both must hold the same ID set.
EmbeddingMatrix align_to(const EmbeddingMatrix& m, const std::vector<std::string>& order) {
  if (m.ids() == order) return m;
  std::unordered_map<std::string, std::size_t> pos;
  pos.reserve(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) pos.emplace(m.id(i), i);
  std::vector<std::size_t> idx;
  idx.reserve(order.size());
  for (const auto& id : order) idx.push_back(pos.at(id));
  return m.select(idx);
}

void check_same_ids(const EmbeddingMatrix& target, const EmbeddingMatrix& reference,
                    const std::string& what) {
  auto missing_ref = sorted_difference(target.ids(), reference.ids());
  auto missing_tgt = sorted_difference(reference.ids(), target.ids());
  if (missing_ref.empty() && missing_tgt.empty()) return;
  std::ostringstream msg;
  msg << what << " ID sets differ between target and reference models";
  if (!missing_ref.empty()) msg << "; missing under reference: " << join_ids(missing_ref);
  if (!missing_tgt.empty()) msg << "; missing under target: " << join_ids(missing_tgt);
  throw AlignmentError(msg.str());
}

void check_annotated(const EmbeddingMatrix& m, const AnnotationTable& table,
                     const std::string& what) {
  std::vector<std::string> missing;
  for (const auto& id : m.ids())
    if (!table.contains(id)) missing.push_back(id);
  if (missing.empty()) return;
  std::sort(missing.begin(), missing.end());
  throw AlignmentError(what + " records without annotations: " + join_ids(missing));
}

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::vector<std::string> ids, std::vector<float> data,
                                 std::size_t dim, bool normalized)
    : ids_(std::move(ids)), data_(std::move(data)), dim_(dim), normalized_(normalized) {
  if (data_.size() != ids_.size() * dim_) {
    throw FormatError("embedding payload holds " + std::to_string(data_.size()) +
                      " floats, expected " + std::to_string(ids_.size()) + " x " +
                      std::to_string(dim_));
  }
  std::unordered_set<std::string> seen;
  seen.reserve(ids_.size());
  std::vector<std::string> dupes;
  for (const auto& id : ids_)
    if (!seen.insert(id).second) dupes.push_back(id);
  if (!dupes.empty()) throw ValidationError("duplicate record IDs: " + join_ids(dupes));

  for (std::size_t i = 0; i < ids_.size(); ++i) {
    auto r = row(i);
    if (!std::all_of(r.begin(), r.end(), [](float v) { return std::isfinite(v); }))
      throw ValidationError("non-finite value in embedding of record \"" + ids_[i] + "\"");
    if (normalized_ && std::abs(row_norm(r) - 1.0) > kUnitTolerance)
      throw ValidationError("record \"" + ids_[i] + "\" is not unit-norm");
  }
}

EmbeddingMatrix EmbeddingMatrix::select(std::span<const std::size_t> rows) const {
  std::vector<std::string> ids;
  std::vector<float> data;
  ids.reserve(rows.size());
  data.reserve(rows.size() * dim_);
  for (std::size_t r : rows) {
    ids.push_back(ids_.at(r));
    auto src = row(r);
    data.insert(data.end(), src.begin(), src.end());
  }
  EmbeddingMatrix out;
  out.ids_ = std::move(ids);
  out.data_ = std::move(data);
  out.dim_ = dim_;
  out.normalized_ = normalized_;
  return out;
}

std::filesystem::path default_payload_path(const std::filesystem::path& header) {
  auto p = header;
  p.replace_extension(".f32");
  return p;
}

EmbeddingMatrix load_embeddings(const std::filesystem::path& header) {
  std::ifstream hin(header);
  if (!hin) throw FormatError("cannot open embedding header " + header.string());
  nlohmann::json j;
  try {
    hin >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(header.string() + ": invalid JSON header: " + e.what());
  }
  if (!j.is_object() || j.value("magic", "") != kMagic)
    throw FormatError(header.string() + ": missing magic \"" + kMagic + "\"");
  if (!j.contains("n") || !j["n"].is_number_unsigned() || !j.contains("d") ||
      !j["d"].is_number_unsigned())
    throw FormatError(header.string() + ": n and d must be non-negative integers");
  const auto n = j["n"].get<std::size_t>();
  const auto d = j["d"].get<std::size_t>();
  if (!j.contains("ids") || !j["ids"].is_array() || j["ids"].size() != n)
    throw FormatError(header.string() + ": ids array must hold exactly n entries");
  std::vector<std::string> ids;
  ids.reserve(n);
  for (const auto& id : j["ids"]) {
    if (!id.is_string()) throw FormatError(header.string() + ": ids must be strings");
    ids.push_back(id.get<std::string>());
  }

  std::filesystem::path payload = default_payload_path(header);
  if (j.contains("payload")) payload = header.parent_path() / j["payload"].get<std::string>();
  std::ifstream pin(payload, std::ios::binary | std::ios::ate);
  if (!pin) throw FormatError("cannot open embedding payload " + payload.string());
  const auto bytes = static_cast<std::size_t>(pin.tellg());
  if (bytes != n * d * sizeof(float)) {
    throw FormatError(payload.string() + ": payload has " + std::to_string(bytes) +
                      " bytes, header requires " + std::to_string(n * d * sizeof(float)));
  }
  std::vector<float> data(n * d);
  pin.seekg(0);
  pin.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
  if (!pin) throw FormatError(payload.string() + ": short read");
  to_little_endian(data);
  return EmbeddingMatrix(std::move(ids), std::move(data), d, false);
}

EmbeddingPaths save_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& header) {
  const auto payload = default_payload_path(header);
  nlohmann::ordered_json j;
  j["magic"] = kMagic;
  j["n"] = m.rows();
  j["d"] = m.dim();
  j["ids"] = m.ids();
  j["payload"] = payload.filename().string();
  {
    std::ofstream out(header, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + header.string());
    out << j.dump() << '\n';
  }
  std::vector<float> data(m.data().begin(), m.data().end());
  to_little_endian(data);
  std::ofstream out(payload, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + payload.string());
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
  return {header, payload};
}

LabelSet make_label_set(std::span<const std::string> labels) {
  LabelSet out;
  out.reserve(labels.size());
  for (const auto& l : labels) {
    if (l.empty()) throw ValidationError("empty object label");
    out.push_back(text::fold_case(l));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

AnnotationTable parse_annotations(std::istream& in, const std::string& source) {
  AnnotationTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("objects") ||
        !j["objects"].is_array())
      throw FormatError(where + ": expected {\"id\": string, \"objects\": [string, ...]}");
    std::vector<std::string> labels;
    for (const auto& o : j["objects"]) {
      if (!o.is_string()) throw FormatError(where + ": object labels must be strings");
      labels.push_back(o.get<std::string>());
    }
    auto id = j["id"].get<std::string>();
    LabelSet set;
    try {
      set = make_label_set(labels);
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
    if (!table.emplace(id, std::move(set)).second)
      throw ValidationError(where + ": duplicate record ID \"" + id + "\"");
  }
  return table;
}

AnnotationTable load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open annotation file " + path.string());
  return parse_annotations(in, path.string());
}

void save_annotations(const AnnotationTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& [id, labels] : table) {
    nlohmann::ordered_json j;
    j["id"] = id;
    j["objects"] = labels;
    out << j.dump() << '\n';
  }
}

EmbeddingMatrix normalize(const EmbeddingMatrix& m) {
  std::vector<float> data(m.data().begin(), m.data().end());
  const std::size_t d = m.dim();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    std::span<float> r(data.data() + i * d, d);
    const double norm = row_norm(r);
    if (norm == 0.0) throw ValidationError("zero embedding for record \"" + m.id(i) + "\"");
    if (std::abs(norm - 1.0) <= kUnitSlack) continue;
    for (float& v : r) v = static_cast<float>(static_cast<double>(v) / norm);
  }
  return EmbeddingMatrix(m.ids(), std::move(data), d, true);
}

AuditDataset assemble(const EmbeddingMatrix& split_text_target,
                      const EmbeddingMatrix& split_text_reference,
                      const AnnotationTable& split_annotations,
                      const EmbeddingMatrix& public_target,
                      const EmbeddingMatrix& public_reference,
                      const AnnotationTable& public_annotations, std::string split_name) {
  check_same_ids(split_text_target, split_text_reference, "split text");
  check_same_ids(public_target, public_reference, "public image");
  if (split_text_target.dim() != public_target.dim())
    throw ValidationError("target model: text dim " + std::to_string(split_text_target.dim()) +
                          " != public image dim " + std::to_string(public_target.dim()));
  if (split_text_reference.dim() != public_reference.dim())
    throw ValidationError("reference model: text dim " +
                          std::to_string(split_text_reference.dim()) + " != public image dim " +
                          std::to_string(public_reference.dim()));
  check_annotated(split_text_target, split_annotations, "split");
  check_annotated(public_target, public_annotations, "public");

  std::vector<std::string> overlap;
  std::unordered_set<std::string> split_ids(split_text_target.ids().begin(),
                                            split_text_target.ids().end());
  for (const auto& id : public_target.ids())
    if (split_ids.contains(id)) overlap.push_back(id);
  if (!overlap.empty()) {
    std::sort(overlap.begin(), overlap.end());
    throw ValidationError("split and public sets overlap: " + join_ids(overlap));
  }

  AuditDataset ds;
  ds.split_name = std::move(split_name);
  ds.text_target = normalize(split_text_target);
  ds.text_reference = normalize(align_to(split_text_reference, split_text_target.ids()));
  ds.public_target = normalize(public_target);
  ds.public_reference = normalize(align_to(public_reference, public_target.ids()));
  for (const auto& id : split_text_target.ids()) ds.ground_truth[id] = split_annotations.at(id);
  for (const auto& id : public_target.ids())
    ds.public_annotations[id] = public_annotations.at(id);
  return ds;
}

EmbeddingSummary summarize(const EmbeddingMatrix& m) {
  EmbeddingSummary s;
  s.rows = m.rows();
  s.dim = m.dim();
  if (m.empty()) return s;
  s.min_norm = std::numeric_limits<double>::infinity();
  double total = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double n = row_norm(m.row(i));
    s.min_norm = std::min(s.min_norm, n);
    s.max_norm = std::max(s.max_norm, n);
    total += n;
    if (n == 0.0) ++s.zero_rows;
  }
  s.mean_norm = total / static_cast<double>(m.rows());
  return s;
}

}  // namespace dejavu
