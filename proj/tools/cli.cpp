#include "cli.hpp"

#include <omp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <cmath>
#include <optional>
#include <unordered_map>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dejavu/audit.hpp"
#include "dejavu/dedup.hpp"
#include "dejavu/embedding_store.hpp"
#include "dejavu/error.hpp"
#include "dejavu/knn.hpp"
#include "dejavu/manifest.hpp"
#include "dejavu/metrics.hpp"
#include "dejavu/toy_trainer.hpp"

namespace dejavu::cli {
namespace {

namespace fs = std::filesystem;

struct GlobalOptions {
  int threads = 0;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

// Resolved seed plus where it came from, echoed into outputs.
struct SeedChoice {
  std::uint64_t value = 0;
  std::string source;
};

SeedChoice choose_seed(const GlobalOptions& g, std::optional<std::uint64_t> fallback = {}) {
  if (g.seed) return {*g.seed, "flag"};
  if (fallback) return {*fallback, "config"};
  std::random_device rd;
  const std::uint64_t s = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  return {s, "entropy"};
}

void write_json(const nlohmann::ordered_json& j, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<std::size_t> parse_grid(const std::string& s) {
  std::vector<std::size_t> grid;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      grid.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ArgumentError("invalid top-L grid entry \"" + item + "\"");
    }
  }
  if (grid.empty()) throw ArgumentError("top-L grid is empty");
  return grid;
}

std::string summary_line(const PopulationReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "PPG=%.4f (bootstrap %.4f +- %.4f)  PRG=%.4f (%.4f +- %.4f)  AUCG=%.4f (%.4f +- "
                "%.4f)  n=%zu",
                r.ppg, r.ppg_bootstrap.mean, r.ppg_bootstrap.std, r.prg, r.prg_bootstrap.mean,
                r.prg_bootstrap.std, r.aucg, r.aucg_bootstrap.mean, r.aucg_bootstrap.std,
                r.n_records);
  return buf;
}

// ---- ingest ---------------------------------------------------------------

struct IngestOptions {
  std::string embeddings;
  std::string annotations;
  bool check = false;
};

int cmd_ingest(const IngestOptions& o, const GlobalOptions& g, std::ostream& out) {
  const EmbeddingMatrix m = load_embeddings(o.embeddings);
  const EmbeddingSummary s = summarize(m);
  if (o.check && s.zero_rows > 0) normalize(m);  // raises, naming the first zero row
  nlohmann::ordered_json j;
  j["header"] = o.embeddings;
  j["rows"] = s.rows;
  j["dim"] = s.dim;
  j["min_norm"] = s.min_norm;
  j["max_norm"] = s.max_norm;
  j["mean_norm"] = s.mean_norm;
  j["zero_rows"] = s.zero_rows;
  if (!o.annotations.empty()) {
    const AnnotationTable t = load_annotations(o.annotations);
    std::size_t labels = 0, empty = 0;
    for (const auto& [_, set] : t) {
      labels += set.size();
      if (set.empty()) ++empty;
    }
    j["annotated_records"] = t.size();
    j["mean_labels"] = t.empty() ? 0.0 : static_cast<double>(labels) / static_cast<double>(t.size());
    j["records_without_labels"] = empty;
    if (o.check) {
      std::vector<std::string> missing;
      for (const auto& id : m.ids())
        if (!t.contains(id)) missing.push_back(id);
      if (!missing.empty()) {
        std::string list;
        for (const auto& id : missing) list += (list.empty() ? "\"" : ", \"") + id + "\"";
        throw AlignmentError("records without annotations: " + list);
      }
    }
  }
  j["status"] = o.check ? "valid" : "loaded";
  if (!g.quiet) out << j.dump(2) << '\n';
  return kOk;
}

// ---- knn ------------------------------------------------------------------

struct KnnOptions {
  std::string queries;
  std::string pub;
  std::size_t k = kDefaultK;
  std::string out;
};

int cmd_knn(const KnnOptions& o, const GlobalOptions& g, std::ostream& out) {
  const EmbeddingMatrix q = normalize(load_embeddings(o.queries));
  const EmbeddingMatrix p = normalize(load_embeddings(o.pub));
  const auto sets = batch_top_k(q, p, o.k);
  if (fs::path(o.out).has_parent_path()) fs::create_directories(fs::path(o.out).parent_path());
  std::ofstream f(o.out, std::ios::trunc);
  if (!f) throw FormatError("cannot write " + o.out);
  for (const auto& ns : sets) f << to_json(ns).dump() << '\n';
  if (!g.quiet) out << "wrote " << sets.size() << " neighbor sets (k=" << o.k << ") to " << o.out << '\n';
  return kOk;
}

// ---- dedup ----------------------------------------------------------------

struct DedupOptions {
  std::string captions;
  std::string embeddings;
  std::optional<double> threshold;
  std::string out;
  std::string split;
};

int cmd_dedup(const DedupOptions& o, const GlobalOptions& g, std::ostream& out) {
  CorpusIndex corpus = load_captions(o.captions);
  std::vector<std::string> kept = caption_dedup(corpus);
  const std::size_t after_caption = kept.size();
  if (!o.embeddings.empty()) {
    if (!o.threshold) throw ArgumentError("--threshold is required with --embeddings");
    const EmbeddingMatrix all = load_embeddings(o.embeddings);
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < all.rows(); ++i) pos.emplace(all.id(i), i);
    std::vector<std::size_t> rows;
    std::vector<std::string> missing;
    for (const auto& id : kept) {
      auto it = pos.find(id);
      if (it == pos.end()) missing.push_back(id);
      else rows.push_back(it->second);
    }
    if (!missing.empty()) {
      std::string list;
      for (const auto& id : missing) list += (list.empty() ? "\"" : ", \"") + id + "\"";
      throw AlignmentError("captioned records without embeddings: " + list);
    }
    kept = semantic_dedup(normalize(all.select(rows)), *o.threshold);
  } else if (o.threshold) {
    throw ArgumentError("--threshold needs --embeddings");
  }

  auto write_ids = [](const fs::path& path, const std::vector<std::string>& ids) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw FormatError("cannot write " + path.string());
    for (const auto& id : ids) f << id << '\n';
  };
  write_ids(o.out, kept);

  nlohmann::ordered_json j;
  j["input_records"] = corpus.ids.size();
  j["after_caption_dedup"] = after_caption;
  j["kept"] = kept.size();
  if (o.threshold) {
    j["semantic_threshold"] = *o.threshold;
    j["semantic_method"] = "greedy ascending-ID scan (simplified)";
  }
  if (!o.split.empty()) {
    const auto sizes = parse_grid(o.split);
    if (sizes.size() != 3) throw ArgumentError("--split needs three sizes nA,nB,nP");
    const SeedChoice seed = choose_seed(g);
    const DisjointSplit split = split_disjoint(kept, {sizes[0], sizes[1], sizes[2]}, seed.value);
    const fs::path base(o.out);
    const auto stem = base.parent_path() / base.stem();
    write_ids(stem.string() + ".A.txt", split.a);
    write_ids(stem.string() + ".B.txt", split.b);
    write_ids(stem.string() + ".P.txt", split.pub);
    j["split"] = {{"A", split.a.size()}, {"B", split.b.size()}, {"P", split.pub.size()}};
    j["seed"] = seed.value;
    j["seed_source"] = seed.source;
  }
  if (!g.quiet) out << j.dump(2) << '\n';
  return kOk;
}

// ---- audit / sample-audit ---------------------------------------------------

struct AuditOptions {
  std::string dataset;
  std::optional<std::size_t> k;
  std::optional<std::size_t> top_m;
  std::optional<std::size_t> reps;
  std::optional<double> frac;
  std::string out = "report.json";
  std::string per_record;
  std::string neighbors;
};

AuditConfig audit_config(const AuditManifest& m, const AuditOptions& o, const SeedChoice& seed) {
  AuditConfig cfg;
  cfg.k = o.k.value_or(m.k);
  cfg.top_m = o.top_m.value_or(m.top_m);
  cfg.bootstrap_reps = o.reps.value_or(m.bootstrap_reps);
  cfg.bootstrap_fraction = o.frac.value_or(m.bootstrap_fraction);
  cfg.seed = seed.value;
  auto it = m.metadata.find("public_set");
  cfg.public_set_name = it != m.metadata.end() ? it->second : m.public_target.stem().string();
  return cfg;
}

int cmd_audit(const AuditOptions& o, const GlobalOptions& g, std::ostream& out) {
  const AuditManifest m = load_manifest(o.dataset);
  const SeedChoice seed = choose_seed(g, m.seed);
  const AuditDataset ds = load_dataset(m);
  AuditResult res = run_audit(ds, audit_config(m, o, seed));
  auto& meta = res.report.metadata;
  for (const auto& [k, v] : m.metadata) meta["manifest." + k] = v;
  for (const auto& [k, v] : manifest_digests(m)) meta[k] = v;
  meta["seed_source"] = seed.source;

  write_json(to_json(res.report), o.out);
  const fs::path per_record =
      o.per_record.empty() ? fs::path(o.out).parent_path() / "per_record.csv" : fs::path(o.per_record);
  write_per_record_csv(res.population, per_record);
  if (!o.neighbors.empty()) {
    std::ofstream f(o.neighbors, std::ios::trunc);
    if (!f) throw FormatError("cannot write " + o.neighbors);
    for (std::size_t i = 0; i < res.neighbors_target.size(); ++i) {
      nlohmann::ordered_json j;
      j["target"] = to_json(res.neighbors_target[i]);
      j["reference"] = to_json(res.neighbors_reference[i]);
      f << j.dump() << '\n';
    }
  }
  if (!g.quiet) out << summary_line(res.report) << '\n';
  return kOk;
}

struct SampleAuditOptions {
  AuditOptions audit;
  std::string sort = "min_dist";
  std::string grid = "1,10,100,1000";
  std::string out = "curve.csv";
  std::string order_out;
};

int cmd_sample_audit(const SampleAuditOptions& o, const GlobalOptions& g, std::ostream& out) {
  const AuditManifest m = load_manifest(o.audit.dataset);
  const SeedChoice seed = choose_seed(g, m.seed);
  const SortKey key = parse_sort_key(o.sort);
  const auto grid = parse_grid(o.grid);
  AuditConfig cfg = audit_config(m, o.audit, seed);
  cfg.bootstrap_reps = 1;  // population spread is not part of the curve
  const AuditResult res = run_audit(load_dataset(m), cfg);
  const auto order = rank_records(res.sample_level, key);
  const GapCurve curve = gap_curve(order, res.sample_level, grid);
  if (fs::path(o.out).has_parent_path()) fs::create_directories(fs::path(o.out).parent_path());
  write_gap_curve_csv(curve, o.out);
  if (!o.order_out.empty()) {
    std::ofstream f(o.order_out, std::ios::trunc);
    if (!f) throw FormatError("cannot write " + o.order_out);
    for (const auto& id : curve.ordered_ids) f << id << '\n';
  }
  if (!g.quiet) {
    out << "sort=" << to_string(key) << " top_m=" << cfg.top_m << " k=" << cfg.k << '\n';
    for (const auto& p : curve.points)
      out << "L=" << p.top_l << " precision_gap=" << format_double(p.precision_gap)
          << " recall_gap=" << format_double(p.recall_gap)
          << " f_score_gap=" << format_double(p.f_score_gap) << '\n';
  }
  return kOk;
}

// ---- train-toy --------------------------------------------------------------

struct TrainToyOptions {
  std::string config;
  std::string out_dir = "runs";
};

int cmd_train_toy(const TrainToyOptions& o, const GlobalOptions& g, std::ostream& out) {
  nlohmann::json j;
  {
    std::ifstream in(o.config);
    if (!in) throw ValidationError("cannot open experiment config " + o.config);
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(o.config + ": " + e.what());
    }
  }
  std::optional<std::uint64_t> cfg_seed;
  if (j.contains("seed")) cfg_seed = j["seed"].get<std::uint64_t>();
  const SeedChoice seed = choose_seed(g, cfg_seed);
  j["seed"] = seed.value;
  const toy::ExperimentConfig cfg = toy::experiment_config_from_json(j);
  const toy::ExperimentResult res = toy::run_experiment(cfg);

  const fs::path root(o.out_dir);
  fs::create_directories(root);
  save_annotations(res.split_annotations, root / "split_annotations.jsonl");
  save_annotations(res.public_annotations, root / "public_annotations.jsonl");

  nlohmann::ordered_json summary;
  summary["seed"] = seed.value;
  summary["seed_source"] = seed.source;
  summary["corpus_records"] = res.corpus_records;
  summary["after_dedup"] = res.after_dedup;
  summary["points"] = nlohmann::ordered_json::array();
  for (std::size_t p = 0; p < res.points.size(); ++p) {
    const auto& point = res.points[p];
    char name[32];
    std::snprintf(name, sizeof name, "point_%03zu", p);
    const fs::path dir = root / name;
    fs::create_directories(dir);
    save_embeddings(point.text_target, dir / "text_target.json");
    save_embeddings(point.text_reference, dir / "text_reference.json");
    save_embeddings(point.public_target, dir / "public_target.json");
    save_embeddings(point.public_reference, dir / "public_reference.json");
    {
      std::ofstream f(dir / "loss_trace.csv", std::ios::trunc);
      f << "epoch,loss_target,loss_reference\n";
      for (std::size_t e = 0; e < point.loss_trace_target.size(); ++e)
        f << e + 1 << ',' << format_double(point.loss_trace_target[e]) << ','
          << format_double(point.loss_trace_reference[e]) << '\n';
    }
    PopulationReport report = point.audit.report;
    report.metadata["seed_source"] = seed.source;
    write_json(to_json(report), dir / "report.json");
    write_per_record_csv(point.audit.population, dir / "per_record.csv");

    AuditManifest m;
    m.text_target = dir / "text_target.json";
    m.text_reference = dir / "text_reference.json";
    m.public_target = dir / "public_target.json";
    m.public_reference = dir / "public_reference.json";
    m.split_annotations = root / "split_annotations.jsonl";
    m.public_annotations = root / "public_annotations.jsonl";
    m.k = cfg.audit.k;
    m.top_m = cfg.audit.top_m;
    m.bootstrap_reps = cfg.audit.bootstrap_reps;
    m.bootstrap_fraction = cfg.audit.bootstrap_fraction;
    m.seed = cfg.audit.seed;
    m.metadata["public_set"] = cfg.audit.public_set_name;
    m.metadata["model_target"] = report.metadata["model_target"];
    m.metadata["model_reference"] = report.metadata["model_reference"];
    save_manifest(m, dir / "manifest.json");

    nlohmann::ordered_json entry;
    entry["dir"] = name;
    entry["train"] = toy::to_json(point.train);
    entry["ppg"] = report.ppg;
    entry["prg"] = report.prg;
    entry["aucg"] = report.aucg;
    entry["final_loss_target"] = point.loss_trace_target.empty() ? nlohmann::ordered_json(nullptr)
                                                                 : nlohmann::ordered_json(point.loss_trace_target.back());
    entry["holdout_loss_target"] = std::isnan(point.holdout_loss_target)
                                       ? nlohmann::ordered_json(nullptr)
                                       : nlohmann::ordered_json(point.holdout_loss_target);
    summary["points"].push_back(entry);
    if (!g.quiet) out << name << ": " << summary_line(report) << '\n';
  }
  write_json(summary, root / "summary.json");
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Deja vu memorization audits for two-tower text/image embedding models", "dejavu"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--threads", g.threads, "Worker threads (0 = runtime default)")->check(CLI::NonNegativeNumber);
  app.add_option("--seed", g.seed, "Master seed; drawn from entropy and recorded when omitted");
  app.add_flag("--quiet", g.quiet, "Suppress summary output");

  IngestOptions ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Validate an embedding file and print summary stats");
  c_ingest->add_option("--embeddings", ingest.embeddings, "Embedding header (JSON)")->required();
  c_ingest->add_option("--annotations", ingest.annotations, "Optional annotation JSONL to cross-check");
  c_ingest->add_flag("--check", ingest.check, "Fail on zero rows or unannotated records");

  DedupOptions dedup;
  auto* c_dedup = app.add_subcommand("dedup", "Caption and semantic deduplication, optional disjoint split");
  c_dedup->add_option("--captions", dedup.captions, "Caption JSONL {id, caption}")->required();
  c_dedup->add_option("--embeddings", dedup.embeddings, "Embedding header for semantic dedup");
  c_dedup->add_option("--threshold", dedup.threshold, "Cosine threshold for semantic dedup (no default)");
  c_dedup->add_option("--out", dedup.out, "Kept IDs, one per line")->required();
  c_dedup->add_option("--split", dedup.split, "Also write disjoint splits nA,nB,nP next to --out");

  KnnOptions knn;
  auto* c_knn = app.add_subcommand("knn", "Exact top-k cosine neighbors for every query");
  c_knn->add_option("--queries", knn.queries, "Query embedding header")->required();
  c_knn->add_option("--public", knn.pub, "Public embedding header")->required();
  c_knn->add_option("-k", knn.k, "Neighbors per query")->check(CLI::PositiveNumber);
  c_knn->add_option("--out", knn.out, "Output JSONL, one NeighborSet per line")->required();

  AuditOptions audit;
  auto* c_audit = app.add_subcommand("audit", "Population-level audit (PPG, PRG, AUCG)");
  auto add_audit_opts = [](CLI::App* c, AuditOptions& a) {
    c->add_option("--dataset", a.dataset, "Audit manifest JSON")->required();
    c->add_option("-k", a.k, "Neighbors per caption")->check(CLI::PositiveNumber);
    c->add_option("--top-m", a.top_m, "Labels predicted per record (sample level)")->check(CLI::PositiveNumber);
  };
  add_audit_opts(c_audit, audit);
  c_audit->add_option("--bootstrap", audit.reps, "Bootstrap repetitions")->check(CLI::PositiveNumber);
  c_audit->add_option("--frac", audit.frac, "Bootstrap sampling fraction")->check(CLI::Range(0.0, 1.0));
  c_audit->add_option("--out", audit.out, "Report JSON path");
  c_audit->add_option("--per-record", audit.per_record, "Per-record CSV (default: per_record.csv beside --out)");
  c_audit->add_option("--neighbors", audit.neighbors, "Optional JSONL dump of both models' neighbor sets");

  SampleAuditOptions sample;
  auto* c_sample = app.add_subcommand("sample-audit", "Sample-level top-L gap curve");
  add_audit_opts(c_sample, sample.audit);
  c_sample->add_option("--sort", sample.sort, "min_dist or correct_preds");
  c_sample->add_option("--grid", sample.grid, "Comma-separated top-L values");
  c_sample->add_option("--out", sample.out, "Curve CSV path");
  c_sample->add_option("--order-out", sample.order_out, "Optional ranked record IDs");

  TrainToyOptions toy_opts;
  auto* c_train = app.add_subcommand("train-toy", "Train toy target/reference towers and audit them");
  c_train->add_option("--config", toy_opts.config, "Experiment JSON")->required();
  c_train->add_option("--out-dir", toy_opts.out_dir, "Output directory");

  std::vector<std::string> argv_store{"dejavu"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  if (g.threads > 0) omp_set_num_threads(g.threads);
  try {
    if (*c_ingest) return cmd_ingest(ingest, g, out);
    if (*c_dedup) return cmd_dedup(dedup, g, out);
    if (*c_knn) return cmd_knn(knn, g, out);
    if (*c_audit) return cmd_audit(audit, g, out);
    if (*c_sample) return cmd_sample_audit(sample, g, out);
    if (*c_train) return cmd_train_toy(toy_opts, g, out);
  } catch (const Error& e) {
    err << "dejavu: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    err << "dejavu: " << e.what() << '\n';
    return kValidation;
  }
  return kUsage;
}

}  // namespace dejavu::cli
