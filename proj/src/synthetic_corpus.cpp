#include <algorithm>
#include <cmath>
#include <cstdio>

#include "dejavu/error.hpp"
#include "dejavu/toy_trainer.hpp"

namespace dejavu::toy {
namespace {

// Independent stream per (seed, purpose, index) so parallel generation is
// schedule-independent.
std::mt19937_64 stream(std::uint64_t seed, std::uint32_t purpose, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    purpose, static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

std::string record_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "r%07zu", i);
  return buf;
}

}  // namespace

void SyntheticCorpusConfig::validate() const {
  if (vocab_size == 0) throw ArgumentError("vocab_size must be positive");
  if (min_objects < 1 || min_objects > max_objects)
    throw ArgumentError("objects per scene must satisfy 1 <= min <= max");
  if (vocab_size < max_objects)
    throw ArgumentError("vocab_size " + std::to_string(vocab_size) +
                        " is smaller than max objects per scene " + std::to_string(max_objects));
  if (!(caption_coverage > 0.0 && caption_coverage <= 1.0))
    throw ArgumentError("caption_coverage must lie in (0, 1]");
  if (latent_dim == 0) throw ArgumentError("latent_dim must be positive");
  if (!(noise_std >= 0.0)) throw ArgumentError("noise_std must be non-negative");
  if (!(zipf_exponent >= 0.0)) throw ArgumentError("zipf_exponent must be non-negative");
}

std::string object_label(std::uint32_t o) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "obj%03u", o);
  return buf;
}

std::string caption_text(const SyntheticRecord& r) {
  std::string out;
  for (auto t : r.caption) {
    if (!out.empty()) out += ' ';
    out += object_label(t);
  }
  return out;
}

AnnotationTable annotations_of(std::span<const SyntheticRecord> records) {
  AnnotationTable table;
  for (const auto& r : records) {
    LabelSet labels;
    labels.reserve(r.objects.size());
    for (auto o : r.objects) labels.push_back(object_label(o));
    std::sort(labels.begin(), labels.end());
    table.emplace(r.id, std::move(labels));
  }
  return table;
}

SyntheticCorpus generate_corpus(const SyntheticCorpusConfig& cfg) {
  cfg.validate();
  SyntheticCorpus corpus;
  corpus.config = cfg;
  const auto v = cfg.vocab_size;
  const auto dim = static_cast<Eigen::Index>(cfg.latent_dim);

  corpus.prototypes.resize(dim, static_cast<Eigen::Index>(v));
  {
    auto gen = stream(cfg.seed, 1, 0);
    std::normal_distribution<double> normal;
    for (Eigen::Index o = 0; o < corpus.prototypes.cols(); ++o) {
      for (Eigen::Index c = 0; c < dim; ++c) corpus.prototypes(c, o) = normal(gen);
      corpus.prototypes.col(o).normalize();
    }
  }

  std::vector<double> weights(v);
  for (std::size_t r = 0; r < v; ++r)
    weights[r] = std::pow(static_cast<double>(r + 1), -cfg.zipf_exponent);
  const std::discrete_distribution<std::uint32_t>::param_type zipf(weights.begin(), weights.end());

  corpus.records.resize(cfg.n_records);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < cfg.n_records; ++i) {
    auto gen = stream(cfg.seed, 2, i);
    std::discrete_distribution<std::uint32_t> pick(zipf);
    std::uniform_int_distribution<std::size_t> size_dist(cfg.min_objects, cfg.max_objects);
    std::normal_distribution<double> noise(0.0, 1.0);

    SyntheticRecord& rec = corpus.records[i];
    rec.id = record_id(i);
    const std::size_t s = size_dist(gen);
    while (rec.objects.size() < s) {
      const auto o = pick(gen);
      if (std::find(rec.objects.begin(), rec.objects.end(), o) == rec.objects.end())
        rec.objects.push_back(o);
    }

    // Caption names a uniformly chosen subset of ceil(c * s) objects.
    const auto named = static_cast<std::size_t>(
        std::ceil(cfg.caption_coverage * static_cast<double>(s) - 1e-9));
    std::vector<std::uint32_t> shuffled = rec.objects;
    std::shuffle(shuffled.begin(), shuffled.end(), gen);
    rec.caption.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(named));
    std::sort(rec.caption.begin(), rec.caption.end());
    std::sort(rec.objects.begin(), rec.objects.end());

    Eigen::VectorXd img = Eigen::VectorXd::Zero(dim);
    for (auto o : rec.objects) img += corpus.prototypes.col(o);
    img.normalize();
    if (cfg.noise_std > 0.0)
      for (Eigen::Index c = 0; c < dim; ++c) img(c) += cfg.noise_std * noise(gen);
    rec.image = std::move(img);
  }
  return corpus;
}

std::vector<std::uint32_t> mask_tokens(std::span<const std::uint32_t> tokens, double mask_ratio,
                                       std::mt19937_64& rng) {
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0))
    throw ArgumentError("mask_ratio must lie in [0, 1)");
  const auto drop = static_cast<std::size_t>(
      std::floor(mask_ratio * static_cast<double>(tokens.size()) + 1e-9));
  std::vector<std::uint32_t> out(tokens.begin(), tokens.end());
  if (drop == 0) return out;
  // Partial Fisher-Yates: the first `drop` slots become the dropped tokens.
  for (std::size_t i = 0; i < drop; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, out.size() - 1);
    std::swap(out[i], out[pick(rng)]);
  }
  out.erase(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(drop));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace dejavu::toy
