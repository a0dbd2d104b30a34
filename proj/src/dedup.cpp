#include "dejavu/dedup.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "dejavu/error.hpp"
#include "dejavu/knn.hpp"
#include "dejavu/text.hpp"

namespace dejavu {

CorpusIndex load_captions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open caption file " + path.string());
  CorpusIndex corpus;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("caption") ||
        !j["caption"].is_string())
      throw FormatError(where + ": expected {\"id\": string, \"caption\": string}");
    auto id = j["id"].get<std::string>();
    if (!seen.insert(id).second) throw ValidationError(where + ": duplicate record ID \"" + id + "\"");
    corpus.ids.push_back(std::move(id));
    corpus.captions.push_back(j["caption"].get<std::string>());
  }
  return corpus;
}

std::vector<std::string> caption_dedup(const CorpusIndex& corpus) {
  if (corpus.ids.size() != corpus.captions.size())
    throw ArgumentError("corpus has " + std::to_string(corpus.ids.size()) + " IDs but " +
                        std::to_string(corpus.captions.size()) + " captions");
  std::unordered_map<std::string, std::size_t> winner;
  for (std::size_t i = 0; i < corpus.ids.size(); ++i) {
    auto [it, inserted] = winner.emplace(text::caption_key(corpus.captions[i]), i);
    if (!inserted && corpus.ids[i] < corpus.ids[it->second]) it->second = i;
  }
  std::vector<bool> keep(corpus.ids.size(), false);
  for (const auto& [_, i] : winner) keep[i] = true;
  std::vector<std::string> out;
  for (std::size_t i = 0; i < corpus.ids.size(); ++i)
    if (keep[i]) out.push_back(corpus.ids[i]);
  return out;
}

std::vector<std::string> semantic_dedup(const EmbeddingMatrix& embeddings, double threshold) {
  if (!embeddings.normalized()) throw ContractError("semantic_dedup needs normalized embeddings");
  if (!(threshold > -1.0 && threshold <= 1.0))
    throw ArgumentError("similarity threshold must lie in (-1, 1]");
  const std::size_t n = embeddings.rows();
  std::vector<std::size_t> scan(n);
  std::iota(scan.begin(), scan.end(), std::size_t{0});
  std::sort(scan.begin(), scan.end(),
            [&](std::size_t a, std::size_t b) { return embeddings.id(a) < embeddings.id(b); });

  std::vector<std::size_t> kept;
  std::vector<bool> keep(n, false);
  for (std::size_t cand : scan) {
    const auto row = embeddings.row(cand);
    const auto m = static_cast<std::ptrdiff_t>(kept.size());
    bool duplicate = false;
#pragma omp parallel for reduction(|| : duplicate) schedule(static)
    for (std::ptrdiff_t j = 0; j < m; ++j)
      duplicate = duplicate || dot_exact(row, embeddings.row(kept[static_cast<std::size_t>(j)])) >= threshold;
    if (!duplicate) {
      kept.push_back(cand);
      keep[cand] = true;
    }
  }
  std::vector<std::string> out;
  out.reserve(kept.size());
  for (std::size_t i = 0; i < n; ++i)
    if (keep[i]) out.push_back(embeddings.id(i));
  return out;
}

DisjointSplit split_disjoint(std::span<const std::string> ids, std::array<std::size_t, 3> sizes,
                             std::uint64_t seed) {
  const std::size_t need = sizes[0] + sizes[1] + sizes[2];
  if (need > ids.size())
    throw ArgumentError("split needs " + std::to_string(need) + " records, corpus has " +
                        std::to_string(ids.size()));
  // Sorting first makes the split depend only on the ID set, not its order.
  std::vector<std::string> pool(ids.begin(), ids.end());
  std::sort(pool.begin(), pool.end());
  if (std::adjacent_find(pool.begin(), pool.end()) != pool.end())
    throw ValidationError("split input contains duplicate IDs");
  std::mt19937_64 gen(seed);
  std::shuffle(pool.begin(), pool.end(), gen);

  DisjointSplit split;
  auto cut = pool.begin();
  auto take = [&](std::vector<std::string>& dst, std::size_t count) {
    dst.assign(std::make_move_iterator(cut), std::make_move_iterator(cut + static_cast<std::ptrdiff_t>(count)));
    cut += static_cast<std::ptrdiff_t>(count);
  };
  take(split.a, sizes[0]);
  take(split.b, sizes[1]);
  take(split.pub, sizes[2]);
  return split;
}

}  // namespace dejavu
