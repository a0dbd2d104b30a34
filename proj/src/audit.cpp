#include "dejavu/audit.hpp"

#include <cstdio>
#include <fstream>
#include <numeric>

#include "dejavu/error.hpp"

namespace dejavu {

AuditResult run_audit(const AuditDataset& ds, const AuditConfig& config) {
  if (ds.text_target.rows() == 0) throw ArgumentError("audit dataset has no records");
  AuditResult result;
  result.neighbors_target = batch_top_k(ds.text_target, ds.public_target, config.k);
  result.neighbors_reference = batch_top_k(ds.text_reference, ds.public_reference, config.k);

  const std::size_t n = ds.text_target.rows();
  auto& pop = result.population;
  auto& sample = result.sample_level;
  pop.target.resize(n);
  pop.reference.resize(n);
  sample.target.resize(n);
  sample.reference.resize(n);

  // Exceptions may not escape an OpenMP region; keep the first one and rethrow.
  std::exception_ptr failure;
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      const auto& id = ds.text_target.id(i);
      const auto& gt = ds.ground_truth.at(id);
      const auto& na = result.neighbors_target[i];
      const auto& nb = result.neighbors_reference[i];
      const double dist_a = 1.0 - na.similarities.front();
      const double dist_b = 1.0 - nb.similarities.front();

      auto fill = [&](SampleMetrics m, double dist) {
        m.record_id = id;
        m.min_dist = dist;
        return m;
      };
      pop.target[i] = fill(sample_metrics(gt, recovered_objects(na, ds.public_annotations)), dist_a);
      pop.reference[i] =
          fill(sample_metrics(gt, recovered_objects(nb, ds.public_annotations)), dist_b);
      sample.target[i] =
          fill(sample_metrics(gt, top_m_objects(na, ds.public_annotations, config.top_m)), dist_a);
      sample.reference[i] =
          fill(sample_metrics(gt, top_m_objects(nb, ds.public_annotations, config.top_m)), dist_b);
    } catch (...) {
#pragma omp critical(dejavu_audit_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  auto& rep = result.report;
  const auto gaps = population_gaps(pop.target, pop.reference);
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  rep.ppg = gaps.ppg;
  rep.prg = gaps.prg;
  rep.aucg = evaluate_gap(pop, all, GapMetric::aucg);
  rep.n_records = gaps.n_records;
  rep.n_recall_excluded = gaps.n_recall_excluded;
  rep.config = config;

  BootstrapOptions opts;
  opts.fraction = config.bootstrap_fraction;
  opts.reps = config.bootstrap_reps;
  opts.seed = config.seed;
  rep.ppg_bootstrap = bootstrap(pop, GapMetric::ppg, opts);
  rep.prg_bootstrap = bootstrap(pop, GapMetric::prg, opts);
  rep.aucg_bootstrap = bootstrap(pop, GapMetric::aucg, opts);

  rep.metadata["split"] = ds.split_name;
  rep.metadata["similarity"] = "cosine";
  rep.metadata["population_recovery"] = "union of k nearest neighbors";
  rep.metadata["sample_level_scoring"] = "top-m labels by summed neighbor similarity";
  rep.metadata["aucg_convention"] = "signed; positive means target recall dominates";
  rep.metadata["bootstrap_std"] = "population form (1/N)";
  rep.metadata["empty_ground_truth"] = "excluded from PRG and AUCG";
  return result;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

nlohmann::ordered_json to_json(const PopulationReport& r) {
  auto est = [](const BootstrapEstimate& e) {
    nlohmann::ordered_json j;
    j["mean"] = e.mean;
    j["std"] = e.std;
    return j;
  };
  nlohmann::ordered_json j;
  j["ppg"] = r.ppg;
  j["prg"] = r.prg;
  j["aucg"] = r.aucg;
  j["bootstrap"]["ppg"] = est(r.ppg_bootstrap);
  j["bootstrap"]["prg"] = est(r.prg_bootstrap);
  j["bootstrap"]["aucg"] = est(r.aucg_bootstrap);
  j["n_records"] = r.n_records;
  j["n_recall_excluded"] = r.n_recall_excluded;
  auto& c = j["config"];
  c["k"] = r.config.k;
  c["top_m"] = r.config.top_m;
  c["public_set"] = r.config.public_set_name;
  c["bootstrap_fraction"] = r.config.bootstrap_fraction;
  c["bootstrap_reps"] = r.config.bootstrap_reps;
  c["seed"] = r.config.seed;
  j["metadata"] = nlohmann::ordered_json::object();
  for (const auto& [key, value] : r.metadata) j["metadata"][key] = value;
  return j;
}

nlohmann::ordered_json to_json(const NeighborSet& ns) {
  nlohmann::ordered_json j;
  j["query_id"] = ns.query_id;
  j["neighbor_ids"] = ns.neighbor_ids;
  j["similarities"] = ns.similarities;
  return j;
}

void write_per_record_csv(const PerRecordTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "id,p_A,r_A,f_A,p_B,r_B,f_B,n_correct_A,min_dist\n";
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& a = table.target[i];
    const auto& b = table.reference[i];
    out << csv_field(a.record_id) << ',' << format_double(a.precision) << ',' << format_double(a.recall)
        << ',' << format_double(a.f_score) << ',' << format_double(b.precision) << ','
        << format_double(b.recall) << ',' << format_double(b.f_score) << ',' << a.n_correct << ','
        << format_double(a.min_dist) << '\n';
  }
}

void write_gap_curve_csv(const GapCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "L,precision_gap,recall_gap,f_score_gap\n";
  for (const auto& p : curve.points)
    out << p.top_l << ',' << format_double(p.precision_gap) << ',' << format_double(p.recall_gap)
        << ',' << format_double(p.f_score_gap) << '\n';
}

}  // namespace dejavu
