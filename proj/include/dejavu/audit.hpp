#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dejavu/embedding_store.hpp"
#include "dejavu/knn.hpp"
#include "dejavu/metrics.hpp"

namespace dejavu {

struct AuditConfig {
  std::size_t k = kDefaultK;
  /// Labels predicted per record in the sample-level analysis.
  std::size_t top_m = 10;
  double bootstrap_fraction = 0.1;
  std::size_t bootstrap_reps = 100;
  std::uint64_t seed = 0;
  std::string public_set_name = "public";
};

/// Population-level result of one audit plus everything needed to replay it.
struct PopulationReport {
  double ppg = 0.0;
  double prg = 0.0;
  double aucg = 0.0;
  BootstrapEstimate ppg_bootstrap;
  BootstrapEstimate prg_bootstrap;
  BootstrapEstimate aucg_bootstrap;
  std::size_t n_records = 0;
  std::size_t n_recall_excluded = 0;
  AuditConfig config;
  /// Free-form echo: model names, file digests, seeds, scoring rules.
  std::map<std::string, std::string> metadata;
};

struct AuditResult {
  /// Union-of-neighbors recovery, used for the population metrics.
  PerRecordTable population;
  /// Top-m recovery, used for sample-level ranking and gap curves.
  PerRecordTable sample_level;
  std::vector<NeighborSet> neighbors_target;
  std::vector<NeighborSet> neighbors_reference;
  PopulationReport report;
};

/// Runs the k-NN test for every caption under both models and derives the
/// per-record tables, the population gaps and their bootstrap spread.
AuditResult run_audit(const AuditDataset& dataset, const AuditConfig& config);

nlohmann::ordered_json to_json(const PopulationReport& report);
nlohmann::ordered_json to_json(const NeighborSet& ns);

/// Columns: id,p_A,r_A,f_A,p_B,r_B,f_B,n_correct_A,min_dist
void write_per_record_csv(const PerRecordTable& table, const std::filesystem::path& path);

/// Columns: L,precision_gap,recall_gap,f_score_gap
void write_gap_curve_csv(const GapCurve& curve, const std::filesystem::path& path);

/// Fixed-point decimal with 17 significant digits, so CSV/JSON values
/// round-trip exactly.
std::string format_double(double v);

}  // namespace dejavu
