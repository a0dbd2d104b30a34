#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "dejavu/error.hpp"
#include "dejavu/metrics.hpp"

using namespace dejavu;

namespace {

SampleMetrics rec(std::string id, double p, double r, std::size_t gt = 3) {
  SampleMetrics m;
  m.record_id = std::move(id);
  m.precision = p;
  m.recall = r;
  m.f_score = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  m.n_ground_truth = gt;
  return m;
}

NeighborSet neighbors(std::vector<std::string> ids, std::vector<double> sims) {
  NeighborSet ns;
  ns.query_id = "q";
  ns.neighbor_ids = std::move(ids);
  ns.similarities = std::move(sims);
  return ns;
}

PerRecordTable random_table(std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> level(0, 4);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  PerRecordTable t;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string id = "r" + std::to_string(1000 + i);
    auto a = rec(id, level(rng) / 4.0, level(rng) / 4.0);
    auto b = rec(id, level(rng) / 4.0, level(rng) / 4.0);
    a.n_correct = static_cast<std::size_t>(level(rng));
    a.min_dist = std::round(dist(rng) * 8) / 8;  // coarse, so ties happen
    t.target.push_back(a);
    t.reference.push_back(b);
  }
  return t;
}

}  // namespace

TEST_CASE("recovered_objects") {
  AnnotationTable pub{{"n1", {"cat"}}, {"n2", {"cat", "dog"}}, {"e1", {}}, {"e2", {}}};
  CHECK(recovered_objects(neighbors({"n1", "n2"}, {0.9, 0.8}), pub) == LabelSet{"cat", "dog"});
  CHECK(recovered_objects(neighbors({"e1", "e2"}, {0.9, 0.8}), pub).empty());
  CHECK(recovered_objects(neighbors({"n2"}, {0.5}), pub) == LabelSet{"cat", "dog"});
  try {
    recovered_objects(neighbors({"n1", "ghost"}, {0.9, 0.8}), pub);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("ghost") != std::string::npos);
  }
}

TEST_CASE("sample_metrics") {
  auto m = sample_metrics({"a", "b", "c"}, {"a", "b", "d"});
  CHECK(m.precision == doctest::Approx(2.0 / 3.0));
  CHECK(m.recall == doctest::Approx(2.0 / 3.0));
  CHECK(m.f_score == doctest::Approx(2.0 / 3.0));
  CHECK(m.n_correct == 2);

  auto same = sample_metrics({"x", "y"}, {"x", "y"});
  CHECK(same.precision == 1.0);
  CHECK(same.recall == 1.0);
  CHECK(same.f_score == 1.0);

  auto disjoint = sample_metrics({"a"}, {"b", "c"});
  CHECK(disjoint.precision == 0.0);
  CHECK(disjoint.recall == 0.0);
  CHECK(disjoint.f_score == 0.0);

  auto empty = sample_metrics({}, {});
  CHECK(empty.precision == 0.0);
  CHECK(empty.recall == 0.0);
  CHECK_FALSE(empty.has_ground_truth());
}

TEST_CASE("top_m_objects") {
  AnnotationTable pub{{"n1", {"cat"}}, {"n2", {"dog"}}, {"n3", {"dog"}}};
  auto ns = neighbors({"n1", "n2", "n3"}, {0.9, 0.8, 0.7});
  CHECK(top_m_objects(ns, pub, 1) == LabelSet{"dog"});
  CHECK(top_m_objects(ns, pub, 5) == recovered_objects(ns, pub));

  // enumerate-and-sort oracle
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> label(0, 7), count(0, 3);
  std::uniform_real_distribution<double> sim(-1.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    AnnotationTable ann;
    NeighborSet n;
    std::vector<double> sims;
    for (int i = 0; i < 6; ++i) sims.push_back(std::round(sim(rng) * 4) / 4);
    std::sort(sims.rbegin(), sims.rend());
    for (int i = 0; i < 6; ++i) {
      const std::string id = "p" + std::to_string(i);
      std::vector<std::string> labels;
      for (int c = count(rng); c > 0; --c) labels.push_back("l" + std::to_string(label(rng)));
      ann[id] = make_label_set(labels);
      n.neighbor_ids.push_back(id);
      n.similarities.push_back(sims[static_cast<std::size_t>(i)]);
    }
    std::map<std::string, double> score;
    for (std::size_t i = 0; i < 6; ++i)
      for (const auto& l : ann[n.neighbor_ids[i]]) score[l] += n.similarities[i];
    std::vector<std::pair<std::string, double>> ranked(score.begin(), score.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    LabelSet want;
    for (std::size_t i = 0; i < std::min<std::size_t>(3, ranked.size()); ++i) want.push_back(ranked[i].first);
    std::sort(want.begin(), want.end());
    CHECK(top_m_objects(n, ann, 3) == want);
  }
}

TEST_CASE("population_gaps") {
  std::vector<SampleMetrics> a{rec("x", 1.0, 0.5), rec("y", 0.5, 0.5), rec("z", 0.0, 0.5)};
  std::vector<SampleMetrics> b{rec("x", 0.5, 0.5), rec("y", 0.0, 0.5), rec("z", 0.5, 0.5)};
  auto g = population_gaps(a, b);
  CHECK(g.ppg == doctest::Approx(1.0 / 3.0));
  CHECK(g.prg == 0.0);

  auto same = population_gaps(a, a);
  CHECK(same.ppg == 0.0);
  CHECK(same.prg == 0.0);

  std::vector<SampleMetrics> shuffled{b[1], b[0], b[2]};
  CHECK_THROWS_AS(population_gaps(a, shuffled), ArgumentError);
  CHECK_THROWS_AS(population_gaps(a, std::span(b).first(2)), ArgumentError);

  // empty ground truth counts for PPG but not PRG
  std::vector<SampleMetrics> a2{rec("x", 1.0, 1.0), rec("y", 0.5, 0.0, 0)};
  std::vector<SampleMetrics> b2{rec("x", 0.0, 0.0), rec("y", 0.0, 0.0, 0)};
  auto g2 = population_gaps(a2, b2);
  CHECK(g2.ppg == 1.0);
  CHECK(g2.prg == 1.0);
  CHECK(g2.n_recall_excluded == 1);
}

TEST_CASE("auc_gap") {
  const std::vector<double> r{0.2, 0.4, 1.0};
  CHECK(auc_gap(r, r) == 0.0);
  const std::vector<double> ones{1, 1}, zeros{0, 0};
  CHECK(auc_gap(ones, zeros) == 1.0);
  CHECK(auc_gap(zeros, ones) == -1.0);
  CHECK_THROWS_AS(auc_gap(std::vector<double>{}, std::vector<double>{}), ArgumentError);
  CHECK_THROWS_AS(auc_gap(ones, r), ArgumentError);

  // grid-integration oracle on a 1e-4 grid
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(37), b(37);
    for (auto& x : a) x = u(rng);
    for (auto& x : b) x = trial % 2 ? std::round(u(rng) * 5) / 5 : u(rng);
    auto cdf = [](const std::vector<double>& v, double t) {
      return static_cast<double>(std::count_if(v.begin(), v.end(), [&](double x) { return x <= t; })) /
             static_cast<double>(v.size());
    };
    const int steps = 10000;
    double area = 0.0;
    for (int s = 0; s < steps; ++s) {
      const double t = (s + 0.5) / steps;
      area += (cdf(b, t) - cdf(a, t)) / steps;
    }
    const double gap = auc_gap(a, b);
    CHECK(std::abs(gap - area) < 1e-3);
    const double mean_diff = (std::accumulate(a.begin(), a.end(), 0.0) -
                              std::accumulate(b.begin(), b.end(), 0.0)) / 37.0;
    CHECK(gap == doctest::Approx(mean_diff).epsilon(1e-12));
  }
}

TEST_CASE("bootstrap") {
  std::mt19937_64 rng(21);
  const auto t = random_table(30, rng);

  SUBCASE("identity sampling returns the metric itself") {
    for (auto m : {GapMetric::ppg, GapMetric::prg, GapMetric::aucg}) {
      std::vector<std::size_t> all(30);
      std::iota(all.begin(), all.end(), 0);
      auto e = bootstrap(t, m, {1.0, 1, 7, false});
      CHECK(e.mean == evaluate_gap(t, all, m));
      CHECK(e.std == 0.0);
    }
  }
  SUBCASE("identical models") {
    PerRecordTable same{t.target, t.target};
    for (auto m : {GapMetric::ppg, GapMetric::prg, GapMetric::aucg}) {
      auto e = bootstrap(same, m, {0.3, 50, 1, true});
      CHECK(e.mean == 0.0);
      CHECK(e.std == 0.0);
    }
  }
  SUBCASE("100 reps agree with a 1e5-rep oracle") {
    for (auto m : {GapMetric::ppg, GapMetric::prg, GapMetric::aucg}) {
      auto e = bootstrap(t, m, {0.5, 100, 99, true});
      std::mt19937 orng(12345);
      std::uniform_int_distribution<std::size_t> pick(0, 29);
      double sum = 0.0;
      const int reps = 100000;
      std::vector<std::size_t> idx(15);
      for (int r = 0; r < reps; ++r) {
        for (auto& i : idx) i = pick(orng);
        // independent recomputation of the metric
        double v = 0.0;
        if (m == GapMetric::aucg) {
          for (auto i : idx) v += t.target[i].recall - t.reference[i].recall;
          v /= 15.0;
        } else {
          for (auto i : idx) {
            const double x = m == GapMetric::ppg ? t.target[i].precision : t.target[i].recall;
            const double y = m == GapMetric::ppg ? t.reference[i].precision : t.reference[i].recall;
            v += (x > y) - (x < y);
          }
          v /= 15.0;
        }
        sum += v;
      }
      const double oracle = sum / reps;
      CHECK(std::abs(e.mean - oracle) <= 3.0 * e.std / std::sqrt(100.0));
      CHECK(e.std > 0.0);
    }
  }
  SUBCASE("deterministic given the seed") {
    auto a = bootstrap(t, GapMetric::ppg, {0.2, 40, 5, true});
    auto b = bootstrap(t, GapMetric::ppg, {0.2, 40, 5, true});
    CHECK(a.mean == b.mean);
    CHECK(a.std == b.std);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(bootstrap(PerRecordTable{}, GapMetric::ppg, {}), ArgumentError);
    CHECK_THROWS_AS(bootstrap(t, GapMetric::ppg, {0.0, 10, 0, true}), ArgumentError);
    CHECK_THROWS_AS(bootstrap(t, GapMetric::ppg, {0.5, 0, 0, true}), ArgumentError);
  }
}

TEST_CASE("rank_records") {
  PerRecordTable t;
  for (auto [id, d] : std::vector<std::pair<std::string, double>>{{"x", 0.3}, {"y", 0.1}, {"z", 0.2}}) {
    auto m = rec(id, 0, 0);
    m.min_dist = d;
    t.target.push_back(m);
    t.reference.push_back(m);
  }
  CHECK(rank_records(t, SortKey::min_dist) == std::vector<std::size_t>{1, 2, 0});

  PerRecordTable c;
  const std::vector<std::pair<std::string, std::size_t>> rows{{"b", 5}, {"a", 5}, {"c", 7}};
  for (const auto& [id, n] : rows) {
    auto m = rec(id, 0, 0);
    m.n_correct = n;
    c.target.push_back(m);
    c.reference.push_back(m);
  }
  CHECK(rank_records(c, SortKey::correct_preds) == std::vector<std::size_t>{2, 1, 0});
  CHECK_THROWS_AS(parse_sort_key("loudness"), ArgumentError);
  CHECK(parse_sort_key("correct_preds") == SortKey::correct_preds);

  // stable-sort oracle
  std::mt19937_64 rng(31);
  auto r = random_table(200, rng);
  std::vector<std::size_t> by_id(200);
  std::iota(by_id.begin(), by_id.end(), 0);
  std::sort(by_id.begin(), by_id.end(),
            [&](auto a, auto b) { return r.target[a].record_id < r.target[b].record_id; });
  auto want_d = by_id;
  std::stable_sort(want_d.begin(), want_d.end(),
                   [&](auto a, auto b) { return r.target[a].min_dist < r.target[b].min_dist; });
  CHECK(rank_records(r, SortKey::min_dist) == want_d);
  auto want_c = by_id;
  std::stable_sort(want_c.begin(), want_c.end(),
                   [&](auto a, auto b) { return r.target[a].n_correct > r.target[b].n_correct; });
  CHECK(rank_records(r, SortKey::correct_preds) == want_c);
}

TEST_CASE("gap_curve") {
  std::mt19937_64 rng(41);
  auto t = random_table(150, rng);
  auto order = rank_records(t, SortKey::min_dist);

  const std::vector<std::size_t> grid{1, 10, 100, 150};
  auto curve = gap_curve(order, t, grid);
  REQUIRE(curve.points.size() == 4);
  CHECK(curve.ordered_ids.size() == 150);
  CHECK(curve.ordered_ids[0] == t.target[order[0]].record_id);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double dp = 0, dr = 0, df = 0;
    for (std::size_t i = 0; i < grid[g]; ++i) {
      dp += t.target[order[i]].precision - t.reference[order[i]].precision;
      dr += t.target[order[i]].recall - t.reference[order[i]].recall;
      df += t.target[order[i]].f_score - t.reference[order[i]].f_score;
    }
    const double L = static_cast<double>(grid[g]);
    CHECK(curve.points[g].top_l == grid[g]);
    CHECK(curve.points[g].precision_gap == doctest::Approx(dp / L).epsilon(1e-12));
    CHECK(curve.points[g].recall_gap == doctest::Approx(dr / L).epsilon(1e-12));
    CHECK(curve.points[g].f_score_gap == doctest::Approx(df / L).epsilon(1e-12));
  }
  const auto& top = curve.points[0];
  CHECK(top.precision_gap == t.target[order[0]].precision - t.reference[order[0]].precision);

  CHECK_THROWS_AS(gap_curve(order, t, std::vector<std::size_t>{0}), ArgumentError);
  CHECK_THROWS_AS(gap_curve(order, t, std::vector<std::size_t>{151}), ArgumentError);
  CHECK_THROWS_AS(gap_curve(order, t, std::vector<std::size_t>{10, 10}), ArgumentError);
}
