#include "dejavu/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "dejavu/error.hpp"

namespace dejavu {
namespace {

const LabelSet& annotation_of(const AnnotationTable& table, const std::string& id) {
  auto it = table.find(id);
  if (it == table.end()) throw DataError("public image \"" + id + "\" has no annotation entry");
  return it->second;
}

int compare(double a, double b) { return (a > b) - (a < b); }

void check_aligned(std::span<const SampleMetrics> a, std::span<const SampleMetrics> b) {
  if (a.size() != b.size())
    throw ArgumentError("metric tables differ in length: " + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].record_id != b[i].record_id)
      throw ArgumentError("metric tables misaligned at row " + std::to_string(i) + ": \"" +
                          a[i].record_id + "\" vs \"" + b[i].record_id + "\"");
}

}  // namespace

LabelSet recovered_objects(const NeighborSet& neighbors, const AnnotationTable& public_annotations) {
  LabelSet out;
  for (const auto& id : neighbors.neighbor_ids) {
    const auto& labels = annotation_of(public_annotations, id);
    out.insert(out.end(), labels.begin(), labels.end());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

SampleMetrics sample_metrics(const LabelSet& ground_truth, const LabelSet& recovered) {
  SampleMetrics s;
  LabelSet common;
  std::set_intersection(ground_truth.begin(), ground_truth.end(), recovered.begin(),
                        recovered.end(), std::back_inserter(common));
  s.n_correct = common.size();
  s.n_ground_truth = ground_truth.size();
  s.n_recovered = recovered.size();
  const auto hits = static_cast<double>(s.n_correct);
  if (!recovered.empty()) s.precision = hits / static_cast<double>(recovered.size());
  if (!ground_truth.empty()) s.recall = hits / static_cast<double>(ground_truth.size());
  if (s.precision + s.recall > 0.0)
    s.f_score = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

LabelSet top_m_objects(const NeighborSet& neighbors, const AnnotationTable& public_annotations,
                       std::size_t m) {
  std::map<std::string, double> score;
  for (std::size_t i = 0; i < neighbors.neighbor_ids.size(); ++i) {
    for (const auto& label : annotation_of(public_annotations, neighbors.neighbor_ids[i]))
      score[label] += neighbors.similarities[i];
  }
  std::vector<std::pair<std::string, double>> ranked(score.begin(), score.end());
  // std::map iteration is label-ascending, so a stable sort on score keeps the tie rule.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > m) ranked.resize(m);
  LabelSet out;
  out.reserve(ranked.size());
  for (auto& [label, _] : ranked) out.push_back(std::move(label));
  std::sort(out.begin(), out.end());
  return out;
}

PopulationGaps population_gaps(std::span<const SampleMetrics> target,
                               std::span<const SampleMetrics> reference) {
  check_aligned(target, reference);
  PopulationGaps g;
  g.n_records = target.size();
  long long prec_balance = 0;
  long long rec_balance = 0;
  std::size_t rec_count = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    prec_balance += compare(target[i].precision, reference[i].precision);
    if (!target[i].has_ground_truth()) {
      ++g.n_recall_excluded;
      continue;
    }
    ++rec_count;
    rec_balance += compare(target[i].recall, reference[i].recall);
  }
  if (g.n_records > 0) g.ppg = static_cast<double>(prec_balance) / static_cast<double>(g.n_records);
  if (rec_count > 0) g.prg = static_cast<double>(rec_balance) / static_cast<double>(rec_count);
  return g;
}

double auc_gap(std::span<const double> recalls_target, std::span<const double> recalls_reference) {
  if (recalls_target.empty() || recalls_reference.empty())
    throw ArgumentError("auc_gap needs nonempty recall lists");
  if (recalls_target.size() != recalls_reference.size())
    throw ArgumentError("auc_gap needs recall lists of equal length");
  std::vector<double> a(recalls_target.begin(), recalls_target.end());
  std::vector<double> b(recalls_reference.begin(), recalls_reference.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a.front() < 0.0 || b.front() < 0.0 || a.back() > 1.0 || b.back() > 1.0)
    throw ArgumentError("recall values must lie in [0, 1]");

  // Walk the merged breakpoints; both step CDFs are constant in between.
  const auto na = static_cast<double>(a.size());
  const auto nb = static_cast<double>(b.size());
  std::size_t ia = 0, ib = 0;
  double prev = 0.0;
  double area = 0.0;
  while (ia < a.size() || ib < b.size()) {
    const double t = std::min(ia < a.size() ? a[ia] : 2.0, ib < b.size() ? b[ib] : 2.0);
    area += (static_cast<double>(ib) / nb - static_cast<double>(ia) / na) * (t - prev);
    while (ia < a.size() && a[ia] == t) ++ia;
    while (ib < b.size() && b[ib] == t) ++ib;
    prev = t;
  }
  area += (static_cast<double>(ib) / nb - static_cast<double>(ia) / na) * (1.0 - prev);
  return area;
}

GapMetric parse_gap_metric(const std::string& name) {
  if (name == "ppg") return GapMetric::ppg;
  if (name == "prg") return GapMetric::prg;
  if (name == "aucg") return GapMetric::aucg;
  throw ArgumentError("unknown gap metric \"" + name + "\" (expected ppg, prg or aucg)");
}

std::string to_string(GapMetric m) {
  switch (m) {
    case GapMetric::ppg: return "ppg";
    case GapMetric::prg: return "prg";
    case GapMetric::aucg: return "aucg";
  }
  return "?";
}

double evaluate_gap(const PerRecordTable& table, std::span<const std::size_t> indices,
                    GapMetric m) {
  if (m == GapMetric::ppg) {
    if (indices.empty()) return 0.0;
    long long balance = 0;
    for (auto i : indices) balance += compare(table.target[i].precision, table.reference[i].precision);
    return static_cast<double>(balance) / static_cast<double>(indices.size());
  }
  std::vector<double> ra, rb;
  long long balance = 0;
  for (auto i : indices) {
    if (!table.target[i].has_ground_truth()) continue;
    ra.push_back(table.target[i].recall);
    rb.push_back(table.reference[i].recall);
    balance += compare(ra.back(), rb.back());
  }
  if (ra.empty()) return 0.0;
  if (m == GapMetric::prg) return static_cast<double>(balance) / static_cast<double>(ra.size());
  return auc_gap(ra, rb);
}

BootstrapEstimate bootstrap(const PerRecordTable& table, GapMetric metric,
                            const BootstrapOptions& options) {
  const std::size_t n = table.size();
  if (n == 0) throw ArgumentError("bootstrap over an empty table");
  if (!(options.fraction > 0.0 && options.fraction <= 1.0))
    throw ArgumentError("bootstrap fraction must lie in (0, 1]");
  if (options.reps == 0) throw ArgumentError("bootstrap needs at least one repetition");
  check_aligned(table.target, table.reference);

  const auto draws = static_cast<std::size_t>(
      std::max(1.0, std::ceil(options.fraction * static_cast<double>(n) - 1e-9)));
  std::vector<double> values(options.reps);

#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < options.reps; ++r) {
    std::vector<std::size_t> idx(draws);
    if (options.resample) {
      std::seed_seq seq{static_cast<std::uint32_t>(options.seed),
                        static_cast<std::uint32_t>(options.seed >> 32),
                        static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(r >> 32)};
      std::mt19937_64 gen(seq);
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (auto& i : idx) i = pick(gen);
    } else {
      std::iota(idx.begin(), idx.end(), std::size_t{0});
    }
    values[r] = evaluate_gap(table, idx, metric);
  }

  BootstrapEstimate est;
  const auto reps = static_cast<double>(options.reps);
  est.mean = std::accumulate(values.begin(), values.end(), 0.0) / reps;
  double ss = 0.0;
  for (double v : values) ss += (v - est.mean) * (v - est.mean);
  est.std = std::sqrt(ss / reps);
  return est;
}

SortKey parse_sort_key(const std::string& name) {
  if (name == "min_dist") return SortKey::min_dist;
  if (name == "correct_preds") return SortKey::correct_preds;
  throw ArgumentError("unknown sort key \"" + name + "\" (expected min_dist or correct_preds)");
}

std::string to_string(SortKey k) {
  return k == SortKey::min_dist ? "min_dist" : "correct_preds";
}

std::vector<std::size_t> rank_records(const PerRecordTable& table, SortKey key) {
  std::vector<std::size_t> order(table.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto& t = table.target;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (key == SortKey::min_dist) {
      if (t[a].min_dist != t[b].min_dist) return t[a].min_dist < t[b].min_dist;
    } else if (t[a].n_correct != t[b].n_correct) {
      return t[a].n_correct > t[b].n_correct;
    }
    return t[a].record_id < t[b].record_id;
  });
  return order;
}

GapCurve gap_curve(std::span<const std::size_t> ordering, const PerRecordTable& table,
                   std::span<const std::size_t> grid) {
  check_aligned(table.target, table.reference);
  const std::size_t n = ordering.size();
  if (n != table.size()) throw ArgumentError("ordering does not cover the table");
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (grid[g] < 1 || grid[g] > n)
      throw ArgumentError("top-L value " + std::to_string(grid[g]) + " outside [1, " +
                          std::to_string(n) + "]");
    if (g > 0 && grid[g] <= grid[g - 1]) throw ArgumentError("top-L grid must be strictly increasing");
  }

  GapCurve curve;
  curve.ordered_ids.reserve(n);
  for (auto i : ordering) curve.ordered_ids.push_back(table.target.at(i).record_id);

  double dp = 0.0, dr = 0.0, df = 0.0;
  std::size_t next = 0;
  for (std::size_t pos = 0; pos < n && next < grid.size(); ++pos) {
    const auto& a = table.target[ordering[pos]];
    const auto& b = table.reference[ordering[pos]];
    dp += a.precision - b.precision;
    dr += a.recall - b.recall;
    df += a.f_score - b.f_score;
    if (pos + 1 == grid[next]) {
      const auto l = static_cast<double>(grid[next]);
      curve.points.push_back({grid[next], dp / l, dr / l, df / l});
      ++next;
    }
  }
  return curve;
}

}  // namespace dejavu
