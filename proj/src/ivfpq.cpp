#include "feds2t/ivfpq.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace feds2t {

namespace {

double sq_dist(const Eigen::Ref<const Eigen::RowVectorXd>& a,
               const Eigen::Ref<const Eigen::RowVectorXd>& b) {
  double d2 = 0;
  for (Index j = 0; j < a.size(); ++j) {
    const double diff = a(j) - b(j);
    d2 += diff * diff;
  }
  return d2;
}

int nearest_row(const Matrix& rows, int used,
              const Eigen::Ref<const Eigen::RowVectorXd>& p) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int c = 0; c < used; ++c) {
    const double d = sq_dist(rows.row(c), p);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

}  // namespace

KMeansResult kmeans(const Matrix& points, int k, int iters, StreamRng& rng) {
  const Index n = points.rows();
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  if (static_cast<Index>(k) > n)
    throw std::invalid_argument("k-means needs at least k points");

  // Forgy init: k distinct rows, order drawn from the stream.
  std::vector<std::size_t> pick(n);
  for (Index i = 0; i < n; ++i) pick[i] = i;
  for (int i = 0; i < k; ++i) {
    const std::size_t j = i + rng.uniform_int(n - i);
    std::swap(pick[i], pick[j]);
  }
  KMeansResult res;
  res.centroids.resize(k, points.cols());
  for (int c = 0; c < k; ++c) res.centroids.row(c) = points.row(pick[c]);
  res.assignment.assign(n, 0);

  std::vector<Index> counts(k);
  for (int it = 0; it < iters; ++it) {
    for (Index i = 0; i < n; ++i)
      res.assignment[i] = nearest_row(res.centroids, k, points.row(i));

    // Re-seed empty clusters to the farthest point from its own centroid.
    std::fill(counts.begin(), counts.end(), Index{0});
    for (Index i = 0; i < n; ++i) counts[res.assignment[i]]++;
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      Index far = -1;
      double far_d = -1;
      for (Index i = 0; i < n; ++i) {
        if (counts[res.assignment[i]] <= 1) continue;  // don't empty another
        const double d = sq_dist(points.row(i), res.centroids.row(res.assignment[i]));
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      if (far < 0) continue;
      counts[res.assignment[far]]--;
      res.assignment[far] = c;
      counts[c] = 1;
    }

    res.centroids.setZero();
    for (Index i = 0; i < n; ++i) res.centroids.row(res.assignment[i]) += points.row(i);
    for (int c = 0; c < k; ++c)
      if (counts[c] > 0) res.centroids.row(c) /= static_cast<double>(counts[c]);
  }
  // Final assignment against the last centroid update.
  for (Index i = 0; i < n; ++i)
    res.assignment[i] = nearest_row(res.centroids, k, points.row(i));
  return res;
}

IvfPqIndex build_ivfpq(const Datastore& store, int ncluster, int m_subquantizers,
                       int kmeans_iters, std::uint64_t seed) {
  const Index n = store.size();
  if (ncluster < 1) throw std::invalid_argument("ncluster must be >= 1");
  if (static_cast<Index>(ncluster) > n)
    throw std::invalid_argument("degenerate store: fewer rows than clusters");
  if (m_subquantizers < 0 ||
      (m_subquantizers > 0 && store.dim() % m_subquantizers != 0))
    throw std::invalid_argument("pq subquantizer count must divide key dimension");

  IvfPqIndex index;
  index.dim = store.dim();
  index.ncluster = ncluster;
  index.pq_subspaces = m_subquantizers;

  StreamRng coarse_rng(seed, "ivfpq.coarse");
  KMeansResult coarse = kmeans(store.keys, ncluster, kmeans_iters, coarse_rng);
  index.centroids = std::move(coarse.centroids);

  std::vector<std::vector<Index>> members(ncluster);
  for (Index i = 0; i < n; ++i) members[coarse.assignment[i]].push_back(i);

  index.lists.resize(ncluster);
  if (m_subquantizers == 0) {
    for (int c = 0; c < ncluster; ++c) {
      auto& list = index.lists[c];
      list.raw.resize(static_cast<Index>(members[c].size()), index.dim);
      for (std::size_t e = 0; e < members[c].size(); ++e) {
        const Index row = members[c][e];
        list.rows.push_back(row);
        list.values.push_back(store.values[static_cast<std::size_t>(row)]);
        list.raw.row(static_cast<Index>(e)) = store.keys.row(row);
      }
    }
    return index;
  }

  const Index dsub = index.dim / m_subquantizers;
  Matrix residuals(n, index.dim);
  for (Index i = 0; i < n; ++i)
    residuals.row(i) = store.keys.row(i) - index.centroids.row(coarse.assignment[i]);

  index.pq_centroids = static_cast<int>(std::min<Index>(256, n));
  index.codebooks.assign(m_subquantizers, Matrix::Zero(256, dsub));
  std::vector<KMeansResult> sub(m_subquantizers);
  for (int j = 0; j < m_subquantizers; ++j) {
    StreamRng pq_rng(seed, "ivfpq.pq", {static_cast<std::uint64_t>(j)});
    sub[j] = kmeans(residuals.middleCols(j * dsub, dsub), index.pq_centroids,
                    kmeans_iters, pq_rng);
    index.codebooks[j].topRows(index.pq_centroids) = sub[j].centroids;
  }

  for (int c = 0; c < ncluster; ++c) {
    auto& list = index.lists[c];
    for (const Index row : members[c]) {
      list.rows.push_back(row);
      list.values.push_back(store.values[static_cast<std::size_t>(row)]);
      for (int j = 0; j < m_subquantizers; ++j) {
        const int code = nearest_row(index.codebooks[j], index.pq_centroids,
                                     residuals.row(row).segment(j * dsub, dsub));
        list.codes.push_back(static_cast<std::uint8_t>(code));
      }
    }
  }
  return index;
}

std::vector<Neighbor> approx_knn(const Vector& query, const IvfPqIndex& index,
                                 int k, int nprobe) {
  if (index.entry_count() == 0) throw std::invalid_argument("empty index");
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  if (nprobe < 1) throw std::invalid_argument("nprobe must be >= 1");
  if (query.size() != index.dim)
    throw std::invalid_argument("query dimension mismatch");
  nprobe = std::min(nprobe, index.ncluster);

  std::vector<Neighbor> order(index.ncluster);
  for (int c = 0; c < index.ncluster; ++c)
    order[c] = {c, sq_dist(index.centroids.row(c), query.transpose())};
  std::partial_sort(order.begin(), order.begin() + nprobe, order.end(),
                    [](const Neighbor& x, const Neighbor& y) {
                      return x.dist2 != y.dist2 ? x.dist2 < y.dist2 : x.row < y.row;
                    });

  const int m = index.pq_subspaces;
  const Index dsub = m > 0 ? index.dim / m : 0;
  Matrix table;  // per-cluster ADC lookup: m x 256
  std::vector<Neighbor> found;

  for (int p = 0; p < nprobe; ++p) {
    const int c = static_cast<int>(order[p].row);
    const auto& list = index.lists[c];
    if (list.rows.empty()) continue;

    if (m == 0) {
      for (std::size_t e = 0; e < list.rows.size(); ++e)
        found.push_back({static_cast<Index>(list.rows[e]),
                         sq_dist(list.raw.row(static_cast<Index>(e)),
                                 query.transpose())});
      continue;
    }

    // Asymmetric distance: tables of (query residual subvector -> codeword)
    // squared distances, one row per subspace.
    const Eigen::RowVectorXd qres = query.transpose() - index.centroids.row(c);
    table.resize(m, 256);
    for (int j = 0; j < m; ++j)
      for (int cw = 0; cw < index.pq_centroids; ++cw)
        table(j, cw) =
            sq_dist(qres.segment(j * dsub, dsub), index.codebooks[j].row(cw));

    for (std::size_t e = 0; e < list.rows.size(); ++e) {
      double d2 = 0;
      for (int j = 0; j < m; ++j)
        d2 += table(j, list.codes[e * static_cast<std::size_t>(m) +
                                 static_cast<std::size_t>(j)]);
      found.push_back({static_cast<Index>(list.rows[e]), d2});
    }
  }

  const std::size_t keep = std::min<std::size_t>(k, found.size());
  std::partial_sort(found.begin(), found.begin() + keep, found.end(),
                    [](const Neighbor& x, const Neighbor& y) {
                      return x.dist2 != y.dist2 ? x.dist2 < y.dist2 : x.row < y.row;
                    });
  found.resize(keep);
  return found;
}

}  // namespace feds2t
