#include "dejavu/knn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dejavu/error.hpp"
#include "knn_kernel.hpp"

namespace dejavu {
namespace {

constexpr double kUnitTolerance = 1e-5;
constexpr std::size_t kQueryBlockTiles = 64;

struct Candidate {
  double sim;
  std::uint32_t row;
};

// Bounded selection of the k best candidates. The heap front is the current
// worst entry so it can be evicted in O(log k).
class TopKHeap {
 public:
  TopKHeap(std::size_t k, const std::vector<std::string>& ids) : k_(k), ids_(&ids) {
    heap_.reserve(k);
  }

  bool full() const { return heap_.size() == k_; }
  double worst() const { return heap_.front().sim; }

  void offer(Candidate c) {
    if (!full()) {
      heap_.push_back(c);
      std::push_heap(heap_.begin(), heap_.end(), better_);
      return;
    }
    if (!better_(c, heap_.front())) return;
    std::pop_heap(heap_.begin(), heap_.end(), better_);
    heap_.back() = c;
    std::push_heap(heap_.begin(), heap_.end(), better_);
  }

  std::vector<Candidate> sorted() && {
    std::sort_heap(heap_.begin(), heap_.end(), better_);
    return std::move(heap_);
  }

 private:
  struct Better {
    const std::vector<std::string>* ids;
    bool operator()(const Candidate& a, const Candidate& b) const {
      if (a.sim != b.sim) return a.sim > b.sim;
      return (*ids)[a.row] < (*ids)[b.row];
    }
  };

  std::size_t k_;
  const std::vector<std::string>* ids_;
  std::vector<Candidate> heap_;
  Better better_{ids_};
};

// Upper bound on |float32 kernel score - dot_exact| for unit vectors of
// dimension d: the float summation error gamma_d plus the double one.
double screening_margin(std::size_t d) {
  const double u = std::ldexp(1.0, -24);
  const double nu = static_cast<double>(d) * u;
  const double gamma = nu / (1.0 - nu);
  const double norm_bound = (1.0 + kUnitTolerance) * (1.0 + kUnitTolerance);
  return 2.0 * gamma * norm_bound + 1e-9;
}

void check_unit(std::span<const float> q, const std::string& what) {
  double acc = 0.0;
  for (float v : q) acc += static_cast<double>(v) * v;
  if (std::abs(std::sqrt(acc) - 1.0) > kUnitTolerance)
    throw ContractError(what + " is not unit-norm; normalize embeddings first");
}

void check_public(const EmbeddingMatrix& pub, std::size_t k, std::size_t query_dim) {
  if (!pub.normalized()) throw ContractError("public embeddings must be normalized");
  if (pub.dim() != query_dim)
    throw ArgumentError("query dim " + std::to_string(query_dim) + " != public dim " +
                        std::to_string(pub.dim()));
  if (k == 0 || k > pub.rows())
    throw ArgumentError("k = " + std::to_string(k) + " must lie in [1, " +
                        std::to_string(pub.rows()) + "]");
}

float round_down(double v) {
  auto f = static_cast<float>(v);
  if (static_cast<double>(f) > v) f = std::nextafter(f, -std::numeric_limits<float>::infinity());
  return f;
}

// Searches queries [0, nq) laid out row-major in `qdata`. Float tiles screen
// candidates; every candidate that could enter the top-k is rescored with
// dot_exact, so the result equals an exhaustive double-precision sort.
void search_block(const float* qdata, std::size_t nq, const EmbeddingMatrix& pub, std::size_t k,
                  detail::ScoreTileFn kernel, std::vector<std::vector<Candidate>>& out) {
  using detail::kTileCols;
  using detail::kTileRows;
  const std::size_t d = pub.dim();
  const std::size_t np = pub.rows();
  const std::size_t tiles = (nq + kTileRows - 1) / kTileRows;
  const double margin = screening_margin(d);
  const float* pdata = pub.data().data();

  std::vector<float> a_packed(tiles * d * kTileRows, 0.0f);
  for (std::size_t q = 0; q < nq; ++q) {
    float* dst = a_packed.data() + (q / kTileRows) * d * kTileRows + q % kTileRows;
    const float* src = qdata + q * d;
    for (std::size_t c = 0; c < d; ++c) dst[c * kTileRows] = src[c];
  }

  std::vector<TopKHeap> heaps;
  heaps.reserve(nq);
  for (std::size_t q = 0; q < nq; ++q) heaps.emplace_back(k, pub.ids());
  // Padding rows get +inf so they never produce candidates.
  std::vector<float> thresholds(tiles * kTileRows, std::numeric_limits<float>::infinity());
  std::fill(thresholds.begin(), thresholds.begin() + static_cast<std::ptrdiff_t>(nq),
            -std::numeric_limits<float>::infinity());

  std::vector<float> b_packed(d * kTileCols);
  float scores[kTileRows * kTileCols];
  std::uint32_t masks[kTileRows];

  for (std::size_t p0 = 0; p0 < np; p0 += kTileCols) {
    const std::size_t cols = std::min(kTileCols, np - p0);
    if (cols < kTileCols) std::fill(b_packed.begin(), b_packed.end(), 0.0f);
    for (std::size_t j = 0; j < cols; ++j) {
      const float* src = pdata + (p0 + j) * d;
      for (std::size_t c = 0; c < d; ++c) b_packed[c * kTileCols + j] = src[c];
    }
    const std::uint32_t col_mask = cols == 32 ? 0xffffffffu : ((1u << cols) - 1u);

    for (std::size_t t = 0; t < tiles; ++t) {
      kernel(a_packed.data() + t * d * kTileRows, b_packed.data(), d,
             thresholds.data() + t * kTileRows, scores, masks);
      for (std::size_t i = 0; i < kTileRows; ++i) {
        std::uint32_t m = masks[i] & col_mask;
        if (m == 0) continue;
        const std::size_t q = t * kTileRows + i;
        std::span<const float> qrow(qdata + q * d, d);
        TopKHeap& heap = heaps[q];
        while (m != 0) {
          const auto j = static_cast<std::size_t>(__builtin_ctz(m));
          m &= m - 1;
          const auto row = static_cast<std::uint32_t>(p0 + j);
          heap.offer({dot_exact(qrow, pub.row(row)), row});
        }
        if (heap.full()) thresholds[q] = round_down(heap.worst() - margin);
      }
    }
  }
  for (std::size_t q = 0; q < nq; ++q) out[q] = std::move(heaps[q]).sorted();
}

NeighborSet to_neighbor_set(std::string query_id, const std::vector<Candidate>& found,
                            const EmbeddingMatrix& pub) {
  NeighborSet ns;
  ns.query_id = std::move(query_id);
  ns.neighbor_ids.reserve(found.size());
  ns.similarities.reserve(found.size());
  for (const auto& c : found) {
    ns.neighbor_ids.push_back(pub.id(c.row));
    ns.similarities.push_back(c.sim);
  }
  return ns;
}

}  // namespace

double dot_exact(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

NeighborSet top_k(std::span<const float> query, const EmbeddingMatrix& public_set, std::size_t k,
                  std::string query_id) {
  check_public(public_set, k, query.size());
  check_unit(query, query_id.empty() ? std::string("query") : "query \"" + query_id + "\"");
  std::vector<std::vector<Candidate>> found(1);
  search_block(query.data(), 1, public_set, k, detail::select_score_tile(), found);
  return to_neighbor_set(std::move(query_id), found[0], public_set);
}

std::vector<NeighborSet> batch_top_k(const EmbeddingMatrix& queries,
                                     const EmbeddingMatrix& public_set, std::size_t k) {
  if (queries.rows() == 0) return {};
  check_public(public_set, k, queries.dim());
  if (!queries.normalized()) throw ContractError("query embeddings must be normalized");

  const std::size_t nq = queries.rows();
  const std::size_t block = kQueryBlockTiles * detail::kTileRows;
  const std::size_t nblocks = (nq + block - 1) / block;
  const auto kernel = detail::select_score_tile();
  std::vector<std::vector<Candidate>> found(nq);

#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t b = 0; b < nblocks; ++b) {
    const std::size_t q0 = b * block;
    const std::size_t count = std::min(block, nq - q0);
    std::vector<std::vector<Candidate>> local(count);
    search_block(queries.data().data() + q0 * queries.dim(), count, public_set, k, kernel, local);
    for (std::size_t i = 0; i < count; ++i) found[q0 + i] = std::move(local[i]);
  }

  std::vector<NeighborSet> out;
  out.reserve(nq);
  for (std::size_t q = 0; q < nq; ++q) out.push_back(to_neighbor_set(queries.id(q), found[q], public_set));
  return out;
}

double min_distance(std::span<const float> query, const EmbeddingMatrix& public_set) {
  if (public_set.empty()) throw ArgumentError("min_distance needs a nonempty public set");
  return 1.0 - top_k(query, public_set, 1).similarities.front();
}

}  // namespace dejavu
