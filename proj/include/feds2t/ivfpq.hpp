#pragma once

#include "feds2t/retrieval.hpp"
#include "feds2t/rng.hpp"
#include "feds2t/types.hpp"

#include <cstdint>
#include <vector>

namespace feds2t {

struct KMeansResult {
  Matrix centroids;             // k x dim
  std::vector<int> assignment;  // per input row
};

// Lloyd's algorithm: seeded Forgy init over distinct rows, a fixed iteration
// count, empty clusters re-seeded to the point farthest from its centroid.
KMeansResult kmeans(const Matrix& points, int k, int iters, StreamRng& rng);

// Inverted-file index with optional product-quantization codes.
//
// pq_subspaces == 0 disables PQ: posting entries then hold the uncompressed
// key rows and probing computes true distances, so a full-probe search
// reproduces exact search bit for bit.
struct IvfPqIndex {
  Index dim = 0;
  int ncluster = 0;
  int pq_subspaces = 0;    // m; divides dim when nonzero
  int pq_centroids = 0;    // used rows per codebook, min(256, N)
  Matrix centroids;        // ncluster x dim
  std::vector<Matrix> codebooks;  // m matrices of 256 x (dim/m), zero-padded

  struct PostingList {
    std::vector<std::int64_t> rows;       // original datastore rows
    std::vector<TokenId> values;
    std::vector<std::uint8_t> codes;      // m bytes per entry, PQ mode
    Matrix raw;                           // entries x dim, raw mode
  };
  std::vector<PostingList> lists;  // one per cluster; every row in exactly one

  std::int64_t entry_count() const {
    std::int64_t n = 0;
    for (const auto& l : lists) n += static_cast<std::int64_t>(l.rows.size());
    return n;
  }
};

// Coarse k-means over the keys, then per-subspace k-means codebooks over the
// residuals (row minus coarse centroid). Throws when ncluster exceeds the
// store size or m does not divide the key dimension.
IvfPqIndex build_ivfpq(const Datastore& store, int ncluster, int m_subquantizers,
                       int kmeans_iters, std::uint64_t seed);

// Scans the nprobe nearest coarse clusters (clamped to ncluster). PQ mode
// approximates distances with per-subspace lookup tables built from the
// query residual; raw mode computes true distances. Ties break by row index;
// returns min(k, scanned entries) pairs.
std::vector<Neighbor> approx_knn(const Vector& query, const IvfPqIndex& index,
                                 int k, int nprobe);

}  // namespace feds2t
