#include <doctest.h>

#include <omp.h>

#include <cmath>
#include <cstring>
#include <map>

#include "dejavu/error.hpp"
#include "dejavu/toy_trainer.hpp"
#include "test_util.hpp"

using namespace dejavu;
using namespace dejavu::toy;

namespace {

double rel_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

Eigen::MatrixXd fd_grad(const std::function<double(const Eigen::MatrixXd&)>& f, Eigen::MatrixXd x) {
  const double h = 1e-6;
  Eigen::MatrixXd g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = f(x);
    x.data()[i] = keep - h;
    const double down = f(x);
    x.data()[i] = keep;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

Eigen::MatrixXd unit_rows(Eigen::MatrixXd m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i).normalize();
  return m;
}

SyntheticCorpusConfig small_corpus(std::size_t n, std::uint64_t seed) {
  SyntheticCorpusConfig c;
  c.vocab_size = 30;
  c.latent_dim = 16;
  c.n_records = n;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("generate_corpus: noiseless single-object scenes") {
  SyntheticCorpusConfig c;
  c.vocab_size = 12;
  c.min_objects = c.max_objects = 1;
  c.caption_coverage = 1.0;
  c.noise_std = 0.0;
  c.latent_dim = 8;
  c.n_records = 40;
  auto corpus = generate_corpus(c);
  REQUIRE(corpus.records.size() == 40);
  for (const auto& r : corpus.records) {
    REQUIRE(r.objects.size() == 1);
    CHECK(r.caption == r.objects);
    CHECK((r.image - corpus.prototypes.col(r.objects[0])).norm() < 1e-12);
    CHECK(caption_text(r) == object_label(r.objects[0]));
  }
}

TEST_CASE("generate_corpus: deterministic and thread-independent") {
  auto c = small_corpus(300, 5);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  auto a = generate_corpus(c);
  omp_set_num_threads(3);
  auto b = generate_corpus(c);
  omp_set_num_threads(saved);
  REQUIRE(a.records.size() == b.records.size());
  CHECK(a.prototypes == b.prototypes);
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].id == b.records[i].id);
    CHECK(a.records[i].objects == b.records[i].objects);
    CHECK(a.records[i].caption == b.records[i].caption);
    CHECK(a.records[i].image == b.records[i].image);
  }
  c.seed = 6;
  CHECK(generate_corpus(c).records[0].image != a.records[0].image);
}

TEST_CASE("generate_corpus: scene sizes and caption coverage") {
  auto corpus = generate_corpus(small_corpus(500, 2));
  for (const auto& r : corpus.records) {
    CHECK(r.objects.size() >= 3);
    CHECK(r.objects.size() <= 8);
    CHECK(r.caption.size() == static_cast<std::size_t>(std::ceil(0.5 * r.objects.size())));
    CHECK(std::includes(r.objects.begin(), r.objects.end(), r.caption.begin(), r.caption.end()));
    CHECK(std::abs(r.image.norm() - 1.0) < 0.5);
  }
  SyntheticCorpusConfig bad;
  bad.vocab_size = 5;
  CHECK_THROWS_AS(generate_corpus(bad), ArgumentError);
}

TEST_CASE("generate_corpus: zipf 0 gives uniform object frequencies") {
  SyntheticCorpusConfig c;
  c.vocab_size = 20;
  c.min_objects = c.max_objects = 1;
  c.zipf_exponent = 0.0;
  c.latent_dim = 4;
  c.n_records = 100000;
  c.seed = 1;
  auto corpus = generate_corpus(c);
  std::vector<double> counts(20, 0.0);
  for (const auto& r : corpus.records) counts[r.objects[0]] += 1;
  const double p = 1.0 / 20, n = 100000;
  const double sigma = std::sqrt(n * p * (1 - p));
  double chi2 = 0.0;
  for (double k : counts) {
    CHECK(std::abs(k - n * p) <= 3 * sigma);
    chi2 += (k - n * p) * (k - n * p) / (n * p);
  }
  // 19 degrees of freedom, upper 0.1% point
  CHECK(chi2 < 43.82);
}

TEST_CASE("mask_tokens") {
  std::mt19937_64 rng(1);
  const std::vector<std::uint32_t> four{3, 5, 7, 9};
  CHECK(mask_tokens(four, 0.0, rng) == four);
  auto half = mask_tokens(four, 0.5, rng);
  CHECK(half.size() == 2);
  CHECK(std::includes(four.begin(), four.end(), half.begin(), half.end()));
  CHECK_THROWS_AS(mask_tokens(four, 1.0, rng), ArgumentError);

  const std::vector<std::uint32_t> ten{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<double> kept(10, 0.0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i)
    for (auto t : mask_tokens(ten, 0.3, rng)) kept[t] += 1;
  const double sigma = std::sqrt(draws * 0.3 * 0.7);
  for (double k : kept) CHECK(std::abs((draws - k) - draws * 0.3) <= 3 * sigma);
}

TEST_CASE("info_nce: uniform similarities give ln(n)") {
  for (int n : {2, 3, 5, 8}) {
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(n, 4), v = Eigen::MatrixXd::Zero(n, 4);
    t.col(0).setOnes();
    v.col(1).setOnes();
    for (auto dir : {InfoNceDirection::text_to_image, InfoNceDirection::image_to_text,
                     InfoNceDirection::symmetric})
      CHECK(std::abs(info_nce_loss(t, v, 20.0, dir) - std::log(n)) < 1e-10);
  }
}

TEST_CASE("info_nce: matched orthonormal pairs approach zero loss") {
  Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(4, 4);
  CHECK(info_nce_loss(eye, eye, 1000.0) < 1e-12);
  CHECK(info_nce_loss(eye, eye, 10.0) < info_nce_loss(eye, eye, 1.0));
}

TEST_CASE("info_nce: n = 2 scalar evaluation") {
  Eigen::MatrixXd t(2, 2), v(2, 2);
  t << 1, 0, 0.6, 0.8;
  v << 0.8, 0.6, 0, 1;
  // text_to_image by hand
  const double s00 = 0.8, s01 = 0.0, s10 = 0.6 * 0.8 + 0.8 * 0.6, s11 = 0.8;
  const double l0 = -(s00 - std::log(std::exp(s00) + std::exp(s01)));
  const double l1 = -(s11 - std::log(std::exp(s10) + std::exp(s11)));
  const double t2i = 0.5 * (l0 + l1);
  const double c0 = -(s00 - std::log(std::exp(s00) + std::exp(s10)));
  const double c1 = -(s11 - std::log(std::exp(s01) + std::exp(s11)));
  const double i2t = 0.5 * (c0 + c1);
  CHECK(std::abs(info_nce_loss(t, v, 1.0, InfoNceDirection::text_to_image) - t2i) < 1e-10);
  CHECK(std::abs(info_nce_loss(t, v, 1.0, InfoNceDirection::image_to_text) - i2t) < 1e-10);
  CHECK(std::abs(info_nce_loss(t, v, 1.0, InfoNceDirection::symmetric) - 0.5 * (t2i + i2t)) < 1e-10);
}

TEST_CASE("info_nce: row shift invariance and errors") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  const int n = 5;
  Eigen::MatrixXd w(n, 4), t(n, 4);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = g(rng);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = g(rng);
  w.col(0).setZero();  // every image = e0 + w_j, w_j orthogonal to e0
  Eigen::MatrixXd v = w;
  v.col(0).setOnes();
  Eigen::MatrixXd shifted = t;
  shifted(2, 0) += 3.7;  // raises every logit of caption 2 by the same amount
  const double a = info_nce_loss(t, v, 2.0, InfoNceDirection::text_to_image);
  const double b = info_nce_loss(shifted, v, 2.0, InfoNceDirection::text_to_image);
  CHECK(std::abs(a - b) < 1e-12);

  Eigen::MatrixXd one = Eigen::MatrixXd::Identity(1, 3);
  CHECK_THROWS_AS(info_nce_loss(one, one, 1.0), ArgumentError);
  Eigen::MatrixXd huge = Eigen::MatrixXd::Identity(3, 3);
  CHECK(std::isfinite(info_nce_loss(huge, huge, 1e6)));
}

TEST_CASE("info_nce: gradients match central differences") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> pick_n(2, 8), pick_d(1, 16), pick_dir(0, 2);
  std::uniform_real_distribution<double> pick_s(0.5, 30.0);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = pick_n(rng), d = pick_d(rng);
    const double s = pick_s(rng);
    const auto dir = static_cast<InfoNceDirection>(pick_dir(rng));
    Eigen::MatrixXd t(n, d), v(n, d);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = g(rng);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = g(rng);
    t = unit_rows(t);
    v = unit_rows(v);
    auto r = info_nce(t, v, s, dir, true);
    auto gt = fd_grad([&](const Eigen::MatrixXd& x) { return info_nce_loss(x, v, s, dir); }, t);
    auto gv = fd_grad([&](const Eigen::MatrixXd& x) { return info_nce_loss(t, x, s, dir); }, v);
    CHECK(rel_error(r.grad_text, gt) < 1e-4);
    CHECK(rel_error(r.grad_image, gv) < 1e-4);
  }
}

TEST_CASE("tower_loss: full gradient including weight decay") {
  auto corpus = generate_corpus(small_corpus(6, 8));
  std::mt19937_64 rng(6);
  for (std::size_t hidden : {std::size_t{0}, std::size_t{5}}) {
    for (double wd : {0.0, 0.3}) {
      TrainConfig cfg;
      cfg.embed_dim = 4;
      cfg.hidden_dim = hidden;
      auto shape = tower_shape(30, 16, cfg);
      auto towers = init_towers(shape, 3.0, rng());
      Batch batch;
      batch.images.resize(16, 6);
      for (std::size_t i = 0; i < 6; ++i) {
        batch.tokens.push_back(corpus.records[i].caption);
        batch.images.col(static_cast<Eigen::Index>(i)) = corpus.records[i].image;
      }
      Eigen::VectorXd grad;
      tower_loss(towers, batch, InfoNceDirection::symmetric, wd, &grad);
      auto f = [&](const Eigen::MatrixXd& p) {
        TowerPair q = towers;
        q.params = p;
        return tower_loss(q, batch, InfoNceDirection::symmetric, wd, nullptr);
      };
      Eigen::MatrixXd fd = fd_grad(f, towers.params);
      CHECK(rel_error(grad, fd) < 1e-4);
    }
  }
}

TEST_CASE("train: zero epochs returns the seeded initialization") {
  auto corpus = generate_corpus(small_corpus(64, 1));
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 17;
  auto res = train(corpus.records, 30, cfg);
  CHECK(res.loss_trace.empty());
  // train derives its init seed from cfg.seed; a second run must agree bit for bit
  auto again = train(corpus.records, 30, cfg);
  CHECK(res.towers.params == again.towers.params);
  TrainConfig one = cfg;
  one.epochs = 1;
  CHECK(train(corpus.records, 30, one).towers.params != res.towers.params);
}

TEST_CASE("train: early epochs do not increase loss") {
  auto corpus = generate_corpus(small_corpus(512, 3));
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.seed = 4;
  auto res = train(corpus.records, 30, cfg);
  REQUIRE(res.loss_trace.size() == 10);
  for (std::size_t e = 1; e < 10; ++e) CHECK(res.loss_trace[e] < res.loss_trace[e - 1] + 0.05);
  CHECK(res.loss_trace.back() < res.loss_trace.front());
}

TEST_CASE("train: early stopping truncates the trace") {
  auto corpus = generate_corpus(small_corpus(128, 3));
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.early_stop_epoch = 4;
  auto res = train(corpus.records, 30, cfg);
  CHECK(res.loss_trace.size() == 4);
  TrainConfig four = cfg;
  four.epochs = 4;
  four.early_stop_epoch.reset();
  CHECK(train(corpus.records, 30, four).towers.params == res.towers.params);
}

TEST_CASE("train: large weight decay shrinks parameters monotonically") {
  auto corpus = generate_corpus(small_corpus(128, 3));
  TrainConfig cfg;
  cfg.weight_decay = 1000.0;
  cfg.learning_rate = 2e-4;
  cfg.hidden_dim = 8;
  double prev = std::numeric_limits<double>::infinity(), first = 0.0;
  for (std::size_t e = 0; e <= 20; e += 2) {
    cfg.epochs = e;
    const double norm = train(corpus.records, 30, cfg).towers.params.norm();
    if (e == 0) first = norm;
    CHECK(norm < prev);
    prev = norm;
  }
  CHECK(prev < 1e-3 * first);
}

TEST_CASE("train: deterministic and thread-independent") {
  auto corpus = generate_corpus(small_corpus(200, 9));
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.hidden_dim = 6;
  cfg.mask_ratio = 0.3;
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  auto a = train(corpus.records, 30, cfg);
  omp_set_num_threads(4);
  auto b = train(corpus.records, 30, cfg);
  omp_set_num_threads(saved);
  CHECK(a.towers.params == b.towers.params);
  CHECK(a.loss_trace == b.loss_trace);

  cfg.optimizer = Optimizer::adam;
  cfg.learning_rate = 0.01;
  CHECK(train(corpus.records, 30, cfg).towers.params == train(corpus.records, 30, cfg).towers.params);
}

TEST_CASE("train: divergence raises TrainingError") {
  auto corpus = generate_corpus(small_corpus(64, 2));
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.learning_rate = 1e308;
  try {
    train(corpus.records, 30, cfg);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.epoch() >= 1);
    CHECK(e.exit_code() == 4);
  }
}

TEST_CASE("TrainConfig validation") {
  TrainConfig cfg;
  cfg.batch_size = 1;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
  cfg = {};
  cfg.mask_ratio = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
  cfg = {};
  cfg.learning_rate = -1;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
}

TEST_CASE("embed_corpus") {
  auto corpus = generate_corpus(small_corpus(50, 4));
  TrainConfig cfg;
  cfg.epochs = 2;
  auto towers = train(corpus.records, 30, cfg).towers;
  std::vector<SyntheticRecord> recs(corpus.records.begin(), corpus.records.begin() + 10);
  auto twin = recs[3];
  twin.id = "twin";
  recs.push_back(twin);
  auto emb = embed_corpus(towers, recs);
  CHECK(emb.text.ids() == emb.image.ids());
  CHECK(emb.text.id(10) == "twin");
  CHECK(std::equal(emb.text.row(3).begin(), emb.text.row(3).end(), emb.text.row(10).begin()));
  CHECK(std::equal(emb.image.row(3).begin(), emb.image.row(3).end(), emb.image.row(10).begin()));
  for (const auto* m : {&emb.text, &emb.image}) {
    CHECK(m->normalized());
    for (std::size_t i = 0; i < m->rows(); ++i) {
      double s = 0;
      for (float x : m->row(i)) s += double(x) * x;
      CHECK(std::abs(std::sqrt(s) - 1.0) < 1e-5);
    }
  }
  auto dir = testutil::scratch("embed_corpus");
  save_embeddings(emb.text, dir / "t.json");
  auto back = load_embeddings(dir / "t.json");
  CHECK(back.ids() == emb.text.ids());
  CHECK(std::memcmp(back.data().data(), emb.text.data().data(), emb.text.data().size() * 4) == 0);
}

TEST_CASE("run_experiment: null configuration gives exact zero gaps") {
  ExperimentConfig cfg;
  cfg.corpus = small_corpus(1000, 5);
  cfg.splits = {100, 100, 150, 20};
  TrainConfig t;
  t.epochs = 3;
  cfg.grid = {t};
  cfg.null_reference = true;
  cfg.audit.bootstrap_reps = 20;
  auto res = run_experiment(cfg);
  REQUIRE(res.points.size() == 1);
  const auto& r = res.points[0].audit.report;
  CHECK(r.ppg == 0.0);
  CHECK(r.prg == 0.0);
  CHECK(r.aucg == 0.0);
  CHECK(r.ppg_bootstrap.std == 0.0);
  CHECK(std::isfinite(res.points[0].holdout_loss_target));
  CHECK(res.split_annotations.size() == 100);
  CHECK(res.public_annotations.size() == 150);
}

TEST_CASE("experiment config JSON") {
  auto cfg = experiment_config_from_json(nlohmann::json::parse(R"({
    "seed": 3, "splits": {"A": 10, "B": 10, "P": 20},
    "train": {"epochs": 4, "hidden_dim": 7},
    "grid": [{"mask_ratio": 0.0}, {"mask_ratio": 0.5, "optimizer": "adam"}]})"));
  REQUIRE(cfg.grid.size() == 2);
  CHECK(cfg.grid[1].mask_ratio == 0.5);
  CHECK(cfg.grid[1].hidden_dim == 7);
  CHECK(cfg.grid[1].optimizer == Optimizer::adam);
  CHECK(cfg.splits.a == 10);
  CHECK(train_config_from_json(to_json(cfg.grid[1])).mask_ratio == 0.5);
  CHECK_THROWS_AS(experiment_config_from_json(nlohmann::json::parse(R"({"grid": []})")), ArgumentError);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json::parse(R"({"direction": "sideways"})")),
                  ArgumentError);
}
