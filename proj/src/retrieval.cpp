#include "feds2t/retrieval.hpp"

#include "feds2t/ivfpq.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace feds2t {

Datastore build_datastore(const ParameterSet& model, std::span<const Example> data) {
  if (data.empty()) throw std::invalid_argument("empty datastore source");
  Index total = 0;
  for (const Example& ex : data)
    total += static_cast<Index>(ex.tokens.size()) + 1;

  Datastore store;
  store.keys.resize(total, model.hidden_dim());
  store.values.reserve(total);

  Index at = 0;
  std::vector<TokenId> prev;
  for (const Example& ex : data) {
    prev.assign(1, kBos);
    prev.insert(prev.end(), ex.tokens.begin(), ex.tokens.end());
    const ForwardResult fr = forward(model, nullptr, ex.frames, prev);
    for (Index t = 0; t < fr.hidden.cols(); ++t) {
      store.keys.row(at++) = fr.hidden.col(t).transpose();
      store.values.push_back(t + 1 < fr.hidden.cols()
                                 ? ex.tokens[static_cast<std::size_t>(t)]
                                 : kEos);
    }
  }
  return store;
}

namespace {

// Plain scalar loop so results are reproducible against an independently
// written scan; Eigen reductions may reassociate.
double squared_distance(const Eigen::Ref<const Eigen::RowVectorXd>& row,
                        const Vector& query) {
  double d2 = 0;
  for (Index j = 0; j < query.size(); ++j) {
    const double diff = row(j) - query(j);
    d2 += diff * diff;
  }
  return d2;
}

bool neighbor_less(const Neighbor& x, const Neighbor& y) {
  if (x.dist2 != y.dist2) return x.dist2 < y.dist2;
  return x.row < y.row;
}

}  // namespace

std::vector<Neighbor> exact_knn(const Datastore& store, const Vector& query, int k) {
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  if (static_cast<Index>(k) > store.size())
    throw std::invalid_argument("k exceeds datastore size");
  if (query.size() != store.dim())
    throw std::invalid_argument("query dimension mismatch");

  std::vector<Neighbor> all(store.size());
  for (Index i = 0; i < store.size(); ++i)
    all[i] = {i, squared_distance(store.keys.row(i), query)};
  std::partial_sort(all.begin(), all.begin() + k, all.end(), neighbor_less);
  all.resize(k);
  return all;
}

Vector weighted_vote(std::span<const Neighbor> neighbors,
                     const std::vector<TokenId>& values, double temperature,
                     int vocab_size) {
  if (neighbors.empty()) throw std::invalid_argument("no neighbors retrieved");
  if (temperature <= 0) throw std::invalid_argument("temperature must be > 0");

  // Shift by the minimum distance before exponentiating; cancels in the
  // normalization and keeps exp() from underflowing at small temperatures.
  double dmin = neighbors[0].dist2;
  for (const Neighbor& n : neighbors) dmin = std::min(dmin, n.dist2);

  Vector p = Vector::Zero(vocab_size);
  for (const Neighbor& n : neighbors) {
    const TokenId v = values.at(static_cast<std::size_t>(n.row));
    if (v < 0 || v >= vocab_size)
      throw std::invalid_argument("datastore value outside vocabulary");
    p(v) += std::exp(-(n.dist2 - dmin) / temperature);
  }
  return p / p.sum();
}

Vector knn_distribution(const Vector& query, const Datastore& store,
                        const RetrievalConfig& config, const IvfPqIndex* index,
                        int vocab_size) {
  std::vector<Neighbor> neighbors;
  if (config.backend == RetrievalBackend::kIvfPq) {
    if (!index) throw std::invalid_argument("IVF-PQ backend requires an index");
    neighbors = approx_knn(query, *index, config.k, config.nprobe);
  } else {
    neighbors = exact_knn(store, query, config.k);
  }
  return weighted_vote(neighbors, store.values, config.temperature, vocab_size);
}

Vector interpolate(const Vector& p_base, const Vector& p_mem, double lambda) {
  if (lambda < 0 || lambda > 1)
    throw std::invalid_argument("lambda must lie in [0, 1]");
  if (p_base.size() != p_mem.size())
    throw std::invalid_argument("distribution size mismatch");
  if (std::abs(p_base.sum() - 1.0) > 1e-9 || std::abs(p_mem.sum() - 1.0) > 1e-9)
    throw std::invalid_argument("inputs must be normalized distributions");
  return lambda * p_mem + (1.0 - lambda) * p_base;
}

}  // namespace feds2t
