#include <cmath>
#include <limits>
#include <unordered_map>

#include "dejavu/dedup.hpp"
#include "dejavu/error.hpp"
#include "dejavu/toy_trainer.hpp"

namespace dejavu::toy {
namespace {

std::vector<SyntheticRecord> pick(const std::vector<SyntheticRecord>& all,
                                  const std::unordered_map<std::string, std::size_t>& index,
                                  const std::vector<std::string>& ids) {
  std::vector<SyntheticRecord> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(all[index.at(id)]);
  return out;
}

std::string direction_name(InfoNceDirection d) {
  switch (d) {
    case InfoNceDirection::text_to_image: return "text_to_image";
    case InfoNceDirection::image_to_text: return "image_to_text";
    case InfoNceDirection::symmetric: return "symmetric";
  }
  return "?";
}

InfoNceDirection parse_direction(const std::string& s) {
  if (s == "text_to_image") return InfoNceDirection::text_to_image;
  if (s == "image_to_text") return InfoNceDirection::image_to_text;
  if (s == "symmetric") return InfoNceDirection::symmetric;
  throw ArgumentError("unknown InfoNCE direction \"" + s + "\"");
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ArgumentError(std::string("config field \"") + key + "\": " + e.what());
    }
  }
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  if (cfg.grid.empty()) throw ArgumentError("experiment grid is empty");
  for (const auto& t : cfg.grid) t.validate();
  const SyntheticCorpus corpus = generate_corpus(cfg.corpus);

  ExperimentResult result;
  result.corpus_records = corpus.records.size();

  CorpusIndex index;
  for (const auto& r : corpus.records) {
    index.ids.push_back(r.id);
    index.captions.push_back(caption_text(r));
  }
  std::vector<std::string> kept = caption_dedup(index);
  if (cfg.semantic_dedup_threshold) {
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < corpus.records.size(); ++i) pos.emplace(corpus.records[i].id, i);
    const std::size_t dim = cfg.corpus.latent_dim;
    std::vector<float> data;
    data.reserve(kept.size() * dim);
    for (const auto& id : kept) {
      const auto& img = corpus.records[pos.at(id)].image;
      for (Eigen::Index c = 0; c < img.size(); ++c) data.push_back(static_cast<float>(img(c)));
    }
    kept = semantic_dedup(normalize(EmbeddingMatrix(kept, std::move(data), dim)),
                          *cfg.semantic_dedup_threshold);
  }
  result.after_dedup = kept.size();

  const auto& s = cfg.splits;
  const DisjointSplit split = split_disjoint(kept, {s.a, s.b, s.pub + s.holdout}, cfg.split_seed);
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < corpus.records.size(); ++i) pos.emplace(corpus.records[i].id, i);
  const auto recs_a = pick(corpus.records, pos, split.a);
  const auto recs_b = pick(corpus.records, pos, split.b);
  const std::vector<std::string> pub_ids(split.pub.begin(),
                                         split.pub.begin() + static_cast<std::ptrdiff_t>(s.pub));
  const std::vector<std::string> holdout_ids(split.pub.begin() + static_cast<std::ptrdiff_t>(s.pub),
                                             split.pub.end());
  const auto recs_p = pick(corpus.records, pos, pub_ids);
  const auto recs_h = pick(corpus.records, pos, holdout_ids);
  result.split_annotations = annotations_of(recs_a);
  result.public_annotations = annotations_of(recs_p);

  const std::size_t vocab = cfg.corpus.vocab_size;
  for (const auto& tcfg : cfg.grid) {
    GridPointResult point;
    point.train = tcfg;
    TrainResult fa, fb;
    std::exception_ptr failure;
#pragma omp parallel sections
    {
#pragma omp section
      {
        try {
          fa = train(recs_a, vocab, tcfg);
        } catch (...) {
#pragma omp critical(dejavu_experiment_failure)
          failure = std::current_exception();
        }
      }
#pragma omp section
      {
        try {
          fb = train(cfg.null_reference ? recs_a : recs_b, vocab, tcfg);
        } catch (...) {
#pragma omp critical(dejavu_experiment_failure)
          failure = std::current_exception();
        }
      }
    }
    if (failure) std::rethrow_exception(failure);
    point.loss_trace_target = fa.loss_trace;
    point.loss_trace_reference = fb.loss_trace;
    point.holdout_loss_target =
        recs_h.size() >= 2 ? evaluate_loss(fa.towers, recs_h, tcfg.batch_size, tcfg.direction)
                           : std::numeric_limits<double>::quiet_NaN();

    point.text_target = embed_corpus(fa.towers, recs_a).text;
    point.text_reference = embed_corpus(fb.towers, recs_a).text;
    point.public_target = embed_corpus(fa.towers, recs_p).image;
    point.public_reference = embed_corpus(fb.towers, recs_p).image;

    const AuditDataset ds =
        assemble(point.text_target, point.text_reference, result.split_annotations,
                 point.public_target, point.public_reference, result.public_annotations, "A");
    point.audit = run_audit(ds, cfg.audit);
    auto& meta = point.audit.report.metadata;
    meta["model_target"] = "toy two-tower trained on split A";
    meta["model_reference"] = cfg.null_reference ? "toy two-tower trained on split A (null control)"
                                                 : "toy two-tower trained on split B";
    meta["train_config"] = to_json(tcfg).dump();
    meta["corpus_config"] = to_json(cfg.corpus).dump();
    meta["split_seed"] = std::to_string(cfg.split_seed);
    meta["utility_proxy"] = "holdout InfoNCE loss of the target model";
    if (!std::isnan(point.holdout_loss_target))
      meta["holdout_loss_target"] = std::to_string(point.holdout_loss_target);
    result.points.push_back(std::move(point));
  }
  return result;
}

ExperimentConfig standard_benchmark(std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.corpus.vocab_size = 200;
  cfg.corpus.min_objects = 3;
  cfg.corpus.max_objects = 8;
  cfg.corpus.caption_coverage = 0.5;
  cfg.corpus.n_records = 12000;
  cfg.corpus.seed = seed;
  cfg.splits = {1000, 1000, 5000, 500};
  cfg.split_seed = seed;
  TrainConfig t;
  t.epochs = 200;
  t.seed = seed;
  t.hidden_dim = 512;
  t.learning_rate = 0.4;
  t.logit_scale = 5.0;
  cfg.grid = {t};
  cfg.audit.seed = seed;
  cfg.audit.public_set_name = "synthetic-P";
  return cfg;
}

nlohmann::ordered_json to_json(const SyntheticCorpusConfig& c) {
  nlohmann::ordered_json j;
  j["vocab_size"] = c.vocab_size;
  j["min_objects"] = c.min_objects;
  j["max_objects"] = c.max_objects;
  j["caption_coverage"] = c.caption_coverage;
  j["latent_dim"] = c.latent_dim;
  j["noise_std"] = c.noise_std;
  j["zipf_exponent"] = c.zipf_exponent;
  j["n_records"] = c.n_records;
  j["seed"] = c.seed;
  return j;
}

nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["weight_decay"] = c.weight_decay;
  j["logit_scale"] = c.logit_scale;
  j["mask_ratio"] = c.mask_ratio;
  j["early_stop_epoch"] = c.early_stop_epoch ? nlohmann::ordered_json(*c.early_stop_epoch)
                                             : nlohmann::ordered_json(nullptr);
  j["seed"] = c.seed;
  j["embed_dim"] = c.embed_dim;
  j["hidden_dim"] = c.hidden_dim;
  j["direction"] = direction_name(c.direction);
  j["optimizer"] = c.optimizer == Optimizer::sgd ? "sgd" : "adam";
  return j;
}

SyntheticCorpusConfig corpus_config_from_json(const nlohmann::json& j) {
  SyntheticCorpusConfig c;
  read(j, "vocab_size", c.vocab_size);
  read(j, "min_objects", c.min_objects);
  read(j, "max_objects", c.max_objects);
  read(j, "caption_coverage", c.caption_coverage);
  read(j, "latent_dim", c.latent_dim);
  read(j, "noise_std", c.noise_std);
  read(j, "zipf_exponent", c.zipf_exponent);
  read(j, "n_records", c.n_records);
  read(j, "seed", c.seed);
  c.validate();
  return c;
}

TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& defaults) {
  TrainConfig c = defaults;
  read(j, "epochs", c.epochs);
  read(j, "batch_size", c.batch_size);
  read(j, "learning_rate", c.learning_rate);
  read(j, "weight_decay", c.weight_decay);
  read(j, "logit_scale", c.logit_scale);
  read(j, "mask_ratio", c.mask_ratio);
  if (j.contains("early_stop_epoch") && !j["early_stop_epoch"].is_null()) {
    std::size_t e = 0;
    read(j, "early_stop_epoch", e);
    c.early_stop_epoch = e;
  }
  read(j, "seed", c.seed);
  read(j, "embed_dim", c.embed_dim);
  read(j, "hidden_dim", c.hidden_dim);
  if (j.contains("direction")) c.direction = parse_direction(j["direction"].get<std::string>());
  if (j.contains("optimizer")) {
    const auto o = j["optimizer"].get<std::string>();
    if (o == "sgd") c.optimizer = Optimizer::sgd;
    else if (o == "adam") c.optimizer = Optimizer::adam;
    else throw ArgumentError("unknown optimizer \"" + o + "\"");
  }
  c.validate();
  return c;
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg = standard_benchmark(j.value("seed", std::uint64_t{0}));
  if (j.contains("corpus")) cfg.corpus = corpus_config_from_json(j["corpus"]);
  if (j.contains("splits")) {
    const auto& s = j["splits"];
    read(s, "A", cfg.splits.a);
    read(s, "B", cfg.splits.b);
    read(s, "P", cfg.splits.pub);
    read(s, "holdout", cfg.splits.holdout);
  }
  read(j, "split_seed", cfg.split_seed);
  read(j, "null_reference", cfg.null_reference);
  if (j.contains("semantic_dedup_threshold") && !j["semantic_dedup_threshold"].is_null())
    cfg.semantic_dedup_threshold = j["semantic_dedup_threshold"].get<double>();
  TrainConfig base = cfg.grid.front();
  if (j.contains("train")) base = train_config_from_json(j["train"], base);
  if (j.contains("grid")) {
    if (!j["grid"].is_array() || j["grid"].empty())
      throw ArgumentError("\"grid\" must be a nonempty array of train-config overrides");
    cfg.grid.clear();
    for (const auto& g : j["grid"]) cfg.grid.push_back(train_config_from_json(g, base));
  } else {
    cfg.grid = {base};
  }
  if (j.contains("audit")) {
    const auto& a = j["audit"];
    read(a, "k", cfg.audit.k);
    read(a, "top_m", cfg.audit.top_m);
    read(a, "bootstrap_fraction", cfg.audit.bootstrap_fraction);
    read(a, "bootstrap_reps", cfg.audit.bootstrap_reps);
    read(a, "seed", cfg.audit.seed);
    read(a, "public_set", cfg.audit.public_set_name);
  }
  return cfg;
}

}  // namespace dejavu::toy
