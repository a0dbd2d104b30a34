#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dejavu/error.hpp"
#include "dejavu/toy_trainer.hpp"

namespace dejavu::toy {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
// Init scale of the token-embedding layer: a caption activates only a handful
// of its columns, so fan-in scaling over the vocabulary would start it near zero.
constexpr double kTokenInitStd = 0.5;

std::mt19937_64 stream(std::uint64_t seed, std::uint32_t purpose, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    purpose, static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

std::size_t tower_param_count(const std::vector<std::size_t>& widths) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) n += widths[l + 1] * widths[l] + widths[l + 1];
  return n;
}

// Views onto the flat parameter vector for one tower.
template <typename Vec>
class TowerView {
 public:
  using Scalar = double;
  static constexpr bool kConst = std::is_const_v<Vec>;
  using MatMap = std::conditional_t<kConst, Eigen::Map<const MatrixXd>, Eigen::Map<MatrixXd>>;
  using VecMap = std::conditional_t<kConst, Eigen::Map<const VectorXd>, Eigen::Map<VectorXd>>;
  using Ptr = std::conditional_t<kConst, const double*, double*>;

  TowerView(Vec& params, std::size_t offset, const std::vector<std::size_t>& widths)
      : base_(params.data() + offset), widths_(&widths) {}

  std::size_t layers() const { return widths_->size() - 1; }
  Index in(std::size_t l) const { return static_cast<Index>((*widths_)[l]); }
  Index out(std::size_t l) const { return static_cast<Index>((*widths_)[l + 1]); }

  MatMap w(std::size_t l) const { return MatMap(base_ + offset(l), out(l), in(l)); }
  VecMap b(std::size_t l) const { return VecMap(base_ + offset(l) + out(l) * in(l), out(l)); }

 private:
  std::size_t offset(std::size_t l) const {
    std::size_t off = 0;
    for (std::size_t m = 0; m < l; ++m) off += (*widths_)[m + 1] * (*widths_)[m] + (*widths_)[m + 1];
    return off;
  }

  Ptr base_;
  const std::vector<std::size_t>* widths_;
};

template <typename Vec>
TowerView<Vec> text_view(Vec& params, const TowerShape& shape) {
  return TowerView<Vec>(params, 0, shape.text);
}

template <typename Vec>
TowerView<Vec> image_view(Vec& params, const TowerShape& shape) {
  return TowerView<Vec>(params, tower_param_count(shape.text), shape.image);
}

// Activations of layers 1..L-1 given the first pre-activation; returns output.
struct DenseForward {
  std::vector<MatrixXd> hidden;  // tanh outputs feeding layers 1..L-1
  MatrixXd output;
};

template <typename View>
DenseForward forward_from(const View& v, MatrixXd z) {
  DenseForward f;
  for (std::size_t l = 1; l < v.layers(); ++l) {
    f.hidden.push_back(z.array().tanh().matrix());
    z = v.w(l) * f.hidden.back();
    z.colwise() += v.b(l);
  }
  f.output = std::move(z);
  return f;
}

// Backpropagates through layers L-1..1, accumulating their gradients into
// `gv`. Returns dL/dZ0.
template <typename View, typename GradView>
MatrixXd backward_to_first(const View& v, const GradView& gv, const DenseForward& f, MatrixXd dz) {
  for (std::size_t l = v.layers() - 1; l >= 1; --l) {
    const MatrixXd& a = f.hidden[l - 1];
    gv.w(l).noalias() += dz * a.transpose();
    gv.b(l) += dz.rowwise().sum();
    MatrixXd da = v.w(l).transpose() * dz;
    dz = (da.array() * (1.0 - a.array().square())).matrix();
  }
  return dz;
}

MatrixXd token_pre_activation(const TowerView<const VectorXd>& v,
                              const std::vector<std::vector<std::uint32_t>>& tokens) {
  const auto w0 = v.w(0);
  MatrixXd z(v.out(0), static_cast<Index>(tokens.size()));
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto col = z.col(static_cast<Index>(i));
    col = v.b(0);
    for (auto t : tokens[i]) col += w0.col(t);
  }
  return z;
}

// Column-normalizes y; stores norms for the backward pass.
MatrixXd normalize_columns(const MatrixXd& y, VectorXd& norms) {
  norms = y.colwise().norm().transpose();
  MatrixXd out = y;
  for (Index j = 0; j < y.cols(); ++j) {
    if (norms(j) == 0.0) throw TrainingError("zero embedding in batch", 0);
    // overflowed norm: poison the column so the loss check reports divergence
    if (!std::isfinite(norms(j))) out.col(j).setConstant(std::numeric_limits<double>::quiet_NaN());
    else out.col(j) /= norms(j);
  }
  return out;
}

MatrixXd normalize_backward(const MatrixXd& yhat, const VectorXd& norms, const MatrixXd& dyhat) {
  MatrixXd dy(yhat.rows(), yhat.cols());
  for (Index j = 0; j < yhat.cols(); ++j) {
    const double proj = yhat.col(j).dot(dyhat.col(j));
    dy.col(j) = (dyhat.col(j) - proj * yhat.col(j)) / norms(j);
  }
  return dy;
}

// Row-wise log-sum-exp of m.
VectorXd row_lse(const MatrixXd& m) {
  VectorXd out(m.rows());
  for (Index i = 0; i < m.rows(); ++i) {
    const double mx = m.row(i).maxCoeff();
    out(i) = mx + std::log((m.row(i).array() - mx).exp().sum());
  }
  return out;
}

std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> order,
                                                   std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const std::size_t end = std::min(order.size(), i + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  // InfoNCE needs negatives: a trailing singleton joins the previous batch.
  if (batches.size() > 1 && batches.back().size() < 2) {
    auto last = std::move(batches.back());
    batches.pop_back();
    batches.back().insert(batches.back().end(), last.begin(), last.end());
  }
  return batches;
}

Batch build_batch(std::span<const SyntheticRecord> records, const std::vector<std::size_t>& idx,
                  double mask_ratio, std::mt19937_64* mask_rng) {
  Batch batch;
  const Index dim = records[idx.front()].image.size();
  batch.images.resize(dim, static_cast<Index>(idx.size()));
  batch.tokens.reserve(idx.size());
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const auto& r = records[idx[j]];
    batch.images.col(static_cast<Index>(j)) = r.image;
    if (mask_rng != nullptr && mask_ratio > 0.0)
      batch.tokens.push_back(mask_tokens(r.caption, mask_ratio, *mask_rng));
    else
      batch.tokens.push_back(r.caption);
  }
  return batch;
}

}  // namespace

InfoNceResult info_nce(const MatrixXd& text, const MatrixXd& image, double logit_scale,
                       InfoNceDirection direction, bool with_gradients) {
  const Index n = text.rows();
  if (n < 2) throw ArgumentError("InfoNCE needs a batch of at least 2 pairs");
  if (image.rows() != n || image.cols() != text.cols())
    throw ArgumentError("text and image batches must have the same shape");

  const MatrixXd s = logit_scale * (text * image.transpose());
  const auto nd = static_cast<double>(n);
  InfoNceResult res;
  MatrixXd ds = MatrixXd::Zero(n, n);
  double weight_t = 0.0, weight_v = 0.0;
  switch (direction) {
    case InfoNceDirection::text_to_image: weight_t = 1.0; break;
    case InfoNceDirection::image_to_text: weight_v = 1.0; break;
    case InfoNceDirection::symmetric: weight_t = weight_v = 0.5; break;
  }
  if (weight_t > 0.0) {
    const VectorXd lse = row_lse(s);
    res.loss += weight_t * (lse - s.diagonal()).sum() / nd;
    if (with_gradients) {
      for (Index i = 0; i < n; ++i) ds.row(i) += weight_t / nd * (s.row(i).array() - lse(i)).exp().matrix();
      ds.diagonal().array() -= weight_t / nd;
    }
  }
  if (weight_v > 0.0) {
    const MatrixXd st = s.transpose();
    const VectorXd lse = row_lse(st);
    res.loss += weight_v * (lse - s.diagonal()).sum() / nd;
    if (with_gradients) {
      for (Index j = 0; j < n; ++j) ds.col(j) += weight_v / nd * (st.row(j).array() - lse(j)).exp().matrix().transpose();
      ds.diagonal().array() -= weight_v / nd;
    }
  }
  if (with_gradients) {
    res.grad_text = logit_scale * ds * image;
    res.grad_image = logit_scale * ds.transpose() * text;
  }
  return res;
}

double info_nce_loss(const MatrixXd& text, const MatrixXd& image, double logit_scale,
                     InfoNceDirection direction) {
  return info_nce(text, image, logit_scale, direction, false).loss;
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw ArgumentError("batch_size must be at least 2");
  if (!(learning_rate > 0.0)) throw ArgumentError("learning_rate must be positive");
  if (!(weight_decay >= 0.0)) throw ArgumentError("weight_decay must be non-negative");
  if (!(logit_scale > 0.0)) throw ArgumentError("logit_scale must be positive");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw ArgumentError("mask_ratio must lie in [0, 1)");
  if (embed_dim == 0) throw ArgumentError("embed_dim must be positive");
}

std::size_t TowerShape::parameter_count() const {
  return tower_param_count(text) + tower_param_count(image);
}

TowerShape tower_shape(std::size_t vocab_size, std::size_t latent_dim, const TrainConfig& cfg) {
  TowerShape shape;
  shape.text = {vocab_size};
  shape.image = {latent_dim};
  if (cfg.hidden_dim > 0) {
    shape.text.push_back(cfg.hidden_dim);
    shape.image.push_back(cfg.hidden_dim);
  }
  shape.text.push_back(cfg.embed_dim);
  shape.image.push_back(cfg.embed_dim);
  return shape;
}

TowerPair init_towers(const TowerShape& shape, double logit_scale, std::uint64_t seed) {
  TowerPair tp;
  tp.shape = shape;
  tp.logit_scale = logit_scale;
  tp.params = VectorXd::Zero(static_cast<Index>(shape.parameter_count()));
  auto gen = stream(seed, 10, 0);
  std::normal_distribution<double> normal;
  auto fill = [&](auto view, bool token_input) {
    for (std::size_t l = 0; l < view.layers(); ++l) {
      const double sd = (l == 0 && token_input) ? kTokenInitStd
                                                : 1.0 / std::sqrt(static_cast<double>(view.in(l)));
      auto w = view.w(l);
      for (Index c = 0; c < w.cols(); ++c)
        for (Index r = 0; r < w.rows(); ++r) w(r, c) = sd * normal(gen);
    }
  };
  fill(text_view(tp.params, shape), true);
  fill(image_view(tp.params, shape), false);
  return tp;
}

VectorXd TowerPair::embed_text(std::span<const std::uint32_t> tokens) const {
  const auto v = text_view(std::as_const(params), shape);
  VectorXd z = v.b(0);
  const auto w0 = v.w(0);
  for (auto t : tokens) {
    if (t >= shape.text.front()) throw ArgumentError("token index outside the vocabulary");
    z += w0.col(t);
  }
  for (std::size_t l = 1; l < v.layers(); ++l) {
    VectorXd a = z.array().tanh().matrix();
    z = v.w(l) * a + v.b(l);
  }
  return z;
}

VectorXd TowerPair::embed_image(const VectorXd& image) const {
  const auto v = image_view(std::as_const(params), shape);
  if (image.size() != v.in(0)) throw ArgumentError("image vector has the wrong dimension");
  VectorXd z = v.w(0) * image + v.b(0);
  for (std::size_t l = 1; l < v.layers(); ++l) {
    VectorXd a = z.array().tanh().matrix();
    z = v.w(l) * a + v.b(l);
  }
  return z;
}

double tower_loss(const TowerPair& towers, const Batch& batch, InfoNceDirection direction,
                  double weight_decay, VectorXd* grad) {
  const auto tv = text_view(std::as_const(towers.params), towers.shape);
  const auto iv = image_view(std::as_const(towers.params), towers.shape);

  const DenseForward tf = forward_from(tv, token_pre_activation(tv, batch.tokens));
  MatrixXd iz0 = iv.w(0) * batch.images;
  iz0.colwise() += iv.b(0);
  const DenseForward imf = forward_from(iv, std::move(iz0));

  VectorXd tnorm, inorm;
  const MatrixXd that = normalize_columns(tf.output, tnorm);
  const MatrixXd ihat = normalize_columns(imf.output, inorm);
  const InfoNceResult nce = info_nce(that.transpose(), ihat.transpose(), towers.logit_scale,
                                     direction, grad != nullptr);
  double loss = nce.loss;
  if (weight_decay > 0.0) loss += 0.5 * weight_decay * towers.params.squaredNorm();
  if (grad == nullptr) return loss;

  grad->setZero(towers.params.size());
  const auto gt = text_view(*grad, towers.shape);
  const auto gi = image_view(*grad, towers.shape);

  const MatrixXd tdz = backward_to_first(
      tv, gt, tf, normalize_backward(that, tnorm, nce.grad_text.transpose()));
  auto gw0 = gt.w(0);
  for (std::size_t i = 0; i < batch.tokens.size(); ++i)
    for (auto t : batch.tokens[i]) gw0.col(t) += tdz.col(static_cast<Index>(i));
  gt.b(0) += tdz.rowwise().sum();

  const MatrixXd idz = backward_to_first(
      iv, gi, imf, normalize_backward(ihat, inorm, nce.grad_image.transpose()));
  gi.w(0).noalias() += idz * batch.images.transpose();
  gi.b(0) += idz.rowwise().sum();

  if (weight_decay > 0.0) *grad += weight_decay * towers.params;
  return loss;
}

TrainResult train(std::span<const SyntheticRecord> records, std::size_t vocab_size,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (records.empty()) throw ArgumentError("cannot train on an empty corpus");
  if (records.size() < 2) throw ArgumentError("training needs at least 2 records");
  const std::size_t latent = static_cast<std::size_t>(records.front().image.size());

  TrainResult result;
  result.towers = init_towers(tower_shape(vocab_size, latent, cfg), cfg.logit_scale, cfg.seed);
  VectorXd& theta = result.towers.params;
  VectorXd grad(theta.size());
  VectorXd adam_m, adam_v;
  if (cfg.optimizer == Optimizer::adam) {
    adam_m = VectorXd::Zero(theta.size());
    adam_v = VectorXd::Zero(theta.size());
  }
  std::size_t step = 0;

  const std::size_t epochs =
      cfg.early_stop_epoch ? std::min(cfg.epochs, *cfg.early_stop_epoch) : cfg.epochs;
  std::vector<std::size_t> order(records.size());
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto shuffle_rng = stream(cfg.seed, 11, epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    auto mask_rng = stream(cfg.seed, 12, epoch);

    double total = 0.0;
    std::size_t seen = 0;
    for (const auto& idx : make_batches(order, cfg.batch_size)) {
      const Batch batch = build_batch(records, idx, cfg.mask_ratio, &mask_rng);
      const double loss = tower_loss(result.towers, batch, cfg.direction, 0.0, &grad);
      if (!std::isfinite(loss) || !grad.allFinite())
        throw TrainingError("training diverged (non-finite loss) in epoch " +
                                std::to_string(epoch + 1),
                            static_cast<int>(epoch + 1));
      ++step;
      if (cfg.optimizer == Optimizer::sgd) {
        theta -= cfg.learning_rate * (grad + cfg.weight_decay * theta);
      } else {
        adam_m = kAdamBeta1 * adam_m + (1.0 - kAdamBeta1) * grad;
        adam_v = kAdamBeta2 * adam_v + (1.0 - kAdamBeta2) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(step));
        const VectorXd update =
            (adam_m / c1).array() / ((adam_v / c2).array().sqrt() + kAdamEps);
        theta -= cfg.learning_rate * (update + cfg.weight_decay * theta);
      }
      total += loss * static_cast<double>(idx.size());
      seen += idx.size();
    }
    const double mean = total / static_cast<double>(seen);
    if (!std::isfinite(mean) || !theta.allFinite())
      throw TrainingError("training diverged (non-finite loss) in epoch " +
                              std::to_string(epoch + 1),
                          static_cast<int>(epoch + 1));
    result.loss_trace.push_back(mean);
  }
  return result;
}

CorpusEmbeddings embed_corpus(const TowerPair& towers, std::span<const SyntheticRecord> records) {
  const std::size_t n = records.size();
  const std::size_t dim = towers.shape.text.back();
  std::vector<std::string> ids(n);
  std::vector<float> text(n * dim), image(n * dim);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    ids[i] = records[i].id;
    const VectorXd t = towers.embed_text(records[i].caption).normalized();
    const VectorXd v = towers.embed_image(records[i].image).normalized();
    for (std::size_t c = 0; c < dim; ++c) {
      text[i * dim + c] = static_cast<float>(t(static_cast<Index>(c)));
      image[i * dim + c] = static_cast<float>(v(static_cast<Index>(c)));
    }
  }
  CorpusEmbeddings out;
  out.text = normalize(EmbeddingMatrix(ids, std::move(text), dim));
  out.image = normalize(EmbeddingMatrix(std::move(ids), std::move(image), dim));
  return out;
}

double evaluate_loss(const TowerPair& towers, std::span<const SyntheticRecord> records,
                     std::size_t batch_size, InfoNceDirection direction) {
  if (records.size() < 2) throw ArgumentError("evaluation needs at least 2 records");
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double total = 0.0;
  for (const auto& idx : make_batches(order, std::max<std::size_t>(batch_size, 2))) {
    const Batch batch = build_batch(records, idx, 0.0, nullptr);
    total += tower_loss(towers, batch, direction, 0.0, nullptr) * static_cast<double>(idx.size());
  }
  return total / static_cast<double>(records.size());
}

}  // namespace dejavu::toy
