#pragma once

// Desk-scale two-tower contrastive trainer on a synthetic object-scene corpus.
//
// Each scene is a set of objects; its "image" is the normalized sum of the
// objects' prototype vectors plus Gaussian noise, and its caption names only a
// random subset of the objects. A model that recovers unnamed objects from the
// caption of a training scene, but not from one it never saw, shows the
// caption-to-image memorization the auditor is built to detect.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dejavu/audit.hpp"
#include "dejavu/embedding_store.hpp"

namespace dejavu::toy {

struct SyntheticCorpusConfig {
  std::size_t vocab_size = 200;
  std::size_t min_objects = 3;
  std::size_t max_objects = 8;
  double caption_coverage = 0.5;
  std::size_t latent_dim = 64;
  double noise_std = 0.05;
  double zipf_exponent = 1.0;
  std::size_t n_records = 1000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticRecord {
  std::string id;
  /// Sorted object indices in [0, vocab_size).
  std::vector<std::uint32_t> objects;
  /// Sorted subset of `objects` named by the caption.
  std::vector<std::uint32_t> caption;
  Eigen::VectorXd image;
};

struct SyntheticCorpus {
  SyntheticCorpusConfig config;
  /// Column o is the unit prototype of object o.
  Eigen::MatrixXd prototypes;
  std::vector<SyntheticRecord> records;
};

/// Label string of object index o ("obj007").
std::string object_label(std::uint32_t o);

/// Caption text: the caption's labels joined by single spaces.
std::string caption_text(const SyntheticRecord& r);

AnnotationTable annotations_of(std::span<const SyntheticRecord> records);

/// Deterministic given cfg.seed, independent of the thread count.
SyntheticCorpus generate_corpus(const SyntheticCorpusConfig& cfg);

/// Drops exactly floor(mask_ratio * |tokens|) uniformly chosen tokens.
std::vector<std::uint32_t> mask_tokens(std::span<const std::uint32_t> tokens, double mask_ratio,
                                       std::mt19937_64& rng);

enum class InfoNceDirection { text_to_image, image_to_text, symmetric };

struct InfoNceResult {
  double loss = 0.0;
  /// dL/d(text) and dL/d(image); same shape as the inputs (n x d).
  Eigen::MatrixXd grad_text;
  Eigen::MatrixXd grad_image;
};

/// InfoNCE over a batch whose rows are unit embeddings, logits
/// logit_scale * <t_i, v_j>, positives on the diagonal. text_to_image averages
/// -log softmax over images for each caption, image_to_text the transpose,
/// symmetric the mean of both.
InfoNceResult info_nce(const Eigen::MatrixXd& text, const Eigen::MatrixXd& image,
                       double logit_scale,
                       InfoNceDirection direction = InfoNceDirection::symmetric,
                       bool with_gradients = false);

double info_nce_loss(const Eigen::MatrixXd& text, const Eigen::MatrixXd& image,
                     double logit_scale,
                     InfoNceDirection direction = InfoNceDirection::symmetric);

enum class Optimizer { sgd, adam };

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  double learning_rate = 0.05;
  double weight_decay = 0.0;
  /// 1 / temperature.
  double logit_scale = 20.0;
  double mask_ratio = 0.0;
  std::optional<std::size_t> early_stop_epoch;
  std::uint64_t seed = 0;
  std::size_t embed_dim = 32;
  /// 0 means each tower is a single affine map.
  std::size_t hidden_dim = 0;
  InfoNceDirection direction = InfoNceDirection::symmetric;
  Optimizer optimizer = Optimizer::sgd;

  void validate() const;
};

/// Layer widths of both towers.
struct TowerShape {
  std::vector<std::size_t> text;   // vocab_size, [hidden], embed_dim
  std::vector<std::size_t> image;  // latent_dim, [hidden], embed_dim

  std::size_t parameter_count() const;
  friend bool operator==(const TowerShape&, const TowerShape&) = default;
};

TowerShape tower_shape(std::size_t vocab_size, std::size_t latent_dim, const TrainConfig& cfg);

/// Text and image towers. All weights live in one flat vector; layer l of a
/// tower stores W (out x in, column-major) followed by b (out). Hidden layers
/// use tanh.
struct TowerPair {
  TowerShape shape;
  Eigen::VectorXd params;
  double logit_scale = 20.0;

  /// Unnormalized embeddings. Text input is the caption's token indices.
  Eigen::VectorXd embed_text(std::span<const std::uint32_t> tokens) const;
  Eigen::VectorXd embed_image(const Eigen::VectorXd& image) const;
};

/// Seeded Gaussian initialization scaled by 1/sqrt(fan_in), zero biases.
TowerPair init_towers(const TowerShape& shape, double logit_scale, std::uint64_t seed);

struct Batch {
  std::vector<std::vector<std::uint32_t>> tokens;
  Eigen::MatrixXd images;  // latent_dim x n
};

/// Contrastive loss of the towers on one batch; `weight_decay > 0` adds
/// 0.5 * wd * |params|^2. Fills `grad` (same size as params) when given.
double tower_loss(const TowerPair& towers, const Batch& batch, InfoNceDirection direction,
                  double weight_decay, Eigen::VectorXd* grad);

struct TrainResult {
  TowerPair towers;
  /// Mean training loss of each completed epoch.
  std::vector<double> loss_trace;
};

/// Minibatch training with decoupled weight decay. Serial and bit-reproducible
/// for a given seed. Non-finite loss raises TrainingError.
TrainResult train(std::span<const SyntheticRecord> records, std::size_t vocab_size,
                  const TrainConfig& cfg);

struct CorpusEmbeddings {
  EmbeddingMatrix text;
  EmbeddingMatrix image;
};

/// Normalized caption (unmasked) and image embeddings, IDs preserved.
CorpusEmbeddings embed_corpus(const TowerPair& towers, std::span<const SyntheticRecord> records);

/// Mean unmasked InfoNCE over consecutive batches; the utility proxy.
double evaluate_loss(const TowerPair& towers, std::span<const SyntheticRecord> records,
                     std::size_t batch_size, InfoNceDirection direction);

struct SplitSizes {
  std::size_t a = 1000;
  std::size_t b = 1000;
  std::size_t pub = 5000;
  std::size_t holdout = 0;
};

struct ExperimentConfig {
  SyntheticCorpusConfig corpus;
  SplitSizes splits;
  std::vector<TrainConfig> grid;
  AuditConfig audit;
  /// Applied after caption dedup when set (image vectors, cosine).
  std::optional<double> semantic_dedup_threshold;
  std::uint64_t split_seed = 0;
  /// Train the reference model on split A as well (the null control).
  bool null_reference = false;
};

struct GridPointResult {
  TrainConfig train;
  std::vector<double> loss_trace_target;
  std::vector<double> loss_trace_reference;
  /// NaN when no holdout split was requested.
  double holdout_loss_target = 0.0;
  EmbeddingMatrix text_target;
  EmbeddingMatrix text_reference;
  EmbeddingMatrix public_target;
  EmbeddingMatrix public_reference;
  AuditResult audit;
};

struct ExperimentResult {
  std::size_t corpus_records = 0;
  std::size_t after_dedup = 0;
  AnnotationTable split_annotations;
  AnnotationTable public_annotations;
  std::vector<GridPointResult> points;
};

/// Corpus -> dedup -> disjoint split -> train target on A and reference on B
/// -> embed A's captions and P's images under both -> audit. One result per
/// grid point.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// The reference synthetic benchmark: 200 labels, scenes of 3-8 objects,
/// caption coverage 0.5, |A| = |B| = 1000, |P| = 5000, 200 epochs; towers with
/// one 512-wide hidden layer, SGD at lr 0.4, logit scale 5.
ExperimentConfig standard_benchmark(std::uint64_t seed = 0);

nlohmann::ordered_json to_json(const SyntheticCorpusConfig& cfg);
nlohmann::ordered_json to_json(const TrainConfig& cfg);
SyntheticCorpusConfig corpus_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& defaults = {});
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

}  // namespace dejavu::toy
