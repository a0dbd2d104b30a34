#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dejavu/embedding_store.hpp"
#include "dejavu/knn.hpp"

namespace dejavu {

/// Object-recovery quality of one record under one model.
///
/// precision = |GT ∩ R| / |R|, recall = |GT ∩ R| / |GT|, each 0 when its
/// denominator is 0; f_score is their harmonic mean (0 when both are 0).
struct SampleMetrics {
  std::string record_id;
  double precision = 0.0;
  double recall = 0.0;
  double f_score = 0.0;
  std::size_t n_correct = 0;
  std::size_t n_ground_truth = 0;
  std::size_t n_recovered = 0;
  /// Cosine distance from the caption to its nearest public image.
  double min_dist = 0.0;

  bool has_ground_truth() const noexcept { return n_ground_truth > 0; }
};

/// Per-record metrics of the target and reference models, aligned by index.
struct PerRecordTable {
  std::vector<SampleMetrics> target;
  std::vector<SampleMetrics> reference;

  std::size_t size() const noexcept { return target.size(); }
};

/// Union of the neighbors' object sets. Unannotated neighbors raise DataError.
LabelSet recovered_objects(const NeighborSet& neighbors, const AnnotationTable& public_annotations);

SampleMetrics sample_metrics(const LabelSet& ground_truth, const LabelSet& recovered);

/// The m labels with the largest summed neighbor similarity; ties by label.
LabelSet top_m_objects(const NeighborSet& neighbors, const AnnotationTable& public_annotations,
                       std::size_t m);

struct PopulationGaps {
  double ppg = 0.0;
  double prg = 0.0;
  std::size_t n_records = 0;
  /// Records left out of recall-based metrics because their ground truth is empty.
  std::size_t n_recall_excluded = 0;
};

/// PPG over all records, PRG over records with nonempty ground truth. Tables
/// must be aligned by record ID (ArgumentError otherwise).
PopulationGaps population_gaps(std::span<const SampleMetrics> target,
                               std::span<const SampleMetrics> reference);

/// Signed area between the empirical recall CDFs, integral over [0, 1] of
/// (F_reference - F_target). Positive when the target model recovers more.
double auc_gap(std::span<const double> recalls_target, std::span<const double> recalls_reference);

enum class GapMetric { ppg, prg, aucg };

GapMetric parse_gap_metric(const std::string& name);
std::string to_string(GapMetric m);

/// Gap metric over the records at `indices` (duplicates allowed).
double evaluate_gap(const PerRecordTable& table, std::span<const std::size_t> indices, GapMetric m);

struct BootstrapOptions {
  double fraction = 0.1;
  std::size_t reps = 100;
  std::uint64_t seed = 0;
  /// false replaces sampling with the identity selection (every record once).
  bool resample = true;
};

struct BootstrapEstimate {
  double mean = 0.0;
  /// Population form, 1/N.
  double std = 0.0;
};

/// Repeatedly samples ceil(fraction * n) records with replacement and
/// recomputes the metric. Repetition r draws from a generator seeded by
/// (seed, r), so results do not depend on the thread count.
BootstrapEstimate bootstrap(const PerRecordTable& table, GapMetric metric,
                            const BootstrapOptions& options);

enum class SortKey { min_dist, correct_preds };

SortKey parse_sort_key(const std::string& name);
std::string to_string(SortKey k);

/// Record order for sample-level analysis, always from the target model:
/// ascending min_dist, or descending n_correct. Ties by ascending record ID.
std::vector<std::size_t> rank_records(const PerRecordTable& table, SortKey key);

struct GapPoint {
  std::size_t top_l = 0;
  double precision_gap = 0.0;
  double recall_gap = 0.0;
  double f_score_gap = 0.0;
};

struct GapCurve {
  std::vector<std::string> ordered_ids;
  std::vector<GapPoint> points;
};

/// Mean target-minus-reference gap over the first L ranked records, for each L
/// in a strictly increasing grid within [1, n].
GapCurve gap_curve(std::span<const std::size_t> ordering, const PerRecordTable& table,
                   std::span<const std::size_t> grid);

}  // namespace dejavu
