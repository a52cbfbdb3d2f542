#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "feds2t/ivfpq.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <set>

using namespace feds2t;

namespace {

Datastore gaussian_cluster_store(Index rows, Index dim, int centers,
                                 std::uint64_t seed) {
  StreamRng rng(seed, "cluster_store");
  Matrix means(centers, dim);
  rng.fill_gaussian(means, 10.0);
  Datastore store;
  store.keys.resize(rows, dim);
  store.values.resize(rows);
  for (Index i = 0; i < rows; ++i) {
    const Index c = static_cast<Index>(rng.uniform_int(centers));
    Vector noise(dim);
    rng.fill_gaussian(noise, 0.5);
    store.keys.row(i) = means.row(c) + noise.transpose();
    store.values[i] = kFirstRealToken + static_cast<TokenId>(c % 5);
  }
  return store;
}

Datastore random_store(Index n, Index dim, std::uint64_t seed) {
  StreamRng rng(seed, "store");
  Datastore store;
  store.keys.resize(n, dim);
  rng.fill_gaussian(store.keys);
  store.values.assign(n, kFirstRealToken);
  return store;
}

bool same_neighbors(const std::vector<Neighbor>& a, const std::vector<Neighbor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].row != b[i].row || a[i].dist2 != b[i].dist2) return false;
  return true;
}

}  // namespace

TEST_CASE("k-means partitions deterministically") {
  const Datastore store = gaussian_cluster_store(120, 4, 6, 5);
  StreamRng rng1(9, "km"), rng2(9, "km");
  const KMeansResult a = kmeans(store.keys, 6, 10, rng1);
  const KMeansResult b = kmeans(store.keys, 6, 10, rng2);
  CHECK(a.assignment == b.assignment);
  CHECK((a.centroids - b.centroids).cwiseAbs().maxCoeff() == 0.0);
  CHECK(static_cast<Index>(a.assignment.size()) == store.size());
  for (int c : a.assignment) CHECK(c < 6);
  CHECK_THROWS_AS(kmeans(store.keys, 121, 5, rng1), std::invalid_argument);
}

TEST_CASE("single cluster with PQ disabled is exhaustive search") {
  const Datastore store = random_store(64, 6, 2);
  const IvfPqIndex index = build_ivfpq(store, 1, 0, 5, 77);
  StreamRng rng(3, "queries");
  for (int q = 0; q < 25; ++q) {
    Vector query(6);
    rng.fill_gaussian(query);
    CHECK(same_neighbors(approx_knn(query, index, 5, 1),
                         exact_knn(store, query, 5)));
  }
}

TEST_CASE("ncluster = N makes the coarse assignment a permutation") {
  const Datastore store = random_store(40, 5, 11);
  const IvfPqIndex index = build_ivfpq(store, 40, 0, 8, 12);
  std::set<std::int64_t> seen;
  for (const auto& list : index.lists) {
    CHECK(list.rows.size() == 1);
    seen.insert(list.rows.begin(), list.rows.end());
  }
  CHECK(seen.size() == 40);
}

TEST_CASE("full probe with PQ disabled equals exact search everywhere") {
  const Datastore store = gaussian_cluster_store(256, 8, 16, 21);
  const IvfPqIndex index = build_ivfpq(store, 16, 0, 10, 22);
  StreamRng rng(23, "queries");
  for (int q = 0; q < 50; ++q) {
    Vector query(8);
    rng.fill_gaussian(query, 8.0);
    CHECK(same_neighbors(approx_knn(query, index, 8, 16),
                         exact_knn(store, query, 8)));
  }
  // A query that is a stored row comes back first at distance zero.
  const Vector self = store.keys.row(100).transpose();
  const auto top = approx_knn(self, index, 1, 16);
  CHECK(top[0].row == 100);
  CHECK(top[0].dist2 == 0.0);
}

TEST_CASE("asymmetric distance equals the per-subspace hand computation") {
  IvfPqIndex index;
  index.dim = 4;
  index.ncluster = 1;
  index.pq_subspaces = 2;
  index.pq_centroids = 2;
  index.centroids = Matrix::Zero(1, 4);
  index.centroids << 1, 1, 0, 0;
  index.codebooks.assign(2, Matrix::Zero(256, 2));
  index.codebooks[0].row(0) << 0.5, 0.5;
  index.codebooks[0].row(1) << -1, 0;
  index.codebooks[1].row(0) << 2, 0;
  index.codebooks[1].row(1) << 0, 1;
  index.lists.resize(1);
  index.lists[0].rows = {7};
  index.lists[0].values = {4};
  index.lists[0].codes = {1, 0};

  Vector query(4);
  query << 1, 2, 3, 4;
  // residual = (0,1,3,4); sub0 vs codeword 1: 1+1 = 2; sub1 vs codeword 0:
  // 1+16 = 17.
  const auto got = approx_knn(query, index, 1, 1);
  REQUIRE(got.size() == 1);
  CHECK(got[0].row == 7);
  CHECK(got[0].dist2 == doctest::Approx(19.0).epsilon(1e-15));
}

TEST_CASE("recall@8 on a clustered store stays above 0.9 at quarter probe") {
  const Datastore store = gaussian_cluster_store(512, 8, 32, 31);
  const IvfPqIndex index = build_ivfpq(store, 32, 2, 10, 32);
  StreamRng rng(33, "queries");
  double recall_sum = 0;
  const int queries = 64;
  for (int q = 0; q < queries; ++q) {
    const Index pick = static_cast<Index>(rng.uniform_int(512));
    Vector query = store.keys.row(pick).transpose();
    Vector jitter(8);
    rng.fill_gaussian(jitter, 0.3);
    query += jitter;

    const auto approx = approx_knn(query, index, 8, 8);
    const auto exact = exact_knn(store, query, 8);
    std::set<Index> exact_rows;
    for (const auto& n : exact) exact_rows.insert(n.row);
    int hit = 0;
    for (const auto& n : approx) hit += exact_rows.count(n.row);
    recall_sum += hit / 8.0;
  }
  CHECK(recall_sum / queries >= 0.9);
}

TEST_CASE("index builds are deterministic in the seed") {
  const Datastore store = gaussian_cluster_store(200, 8, 10, 41);
  const IvfPqIndex a = build_ivfpq(store, 10, 2, 10, 42);
  const IvfPqIndex b = build_ivfpq(store, 10, 2, 10, 42);
  CHECK((a.centroids - b.centroids).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(a.lists.size() == b.lists.size());
  for (std::size_t c = 0; c < a.lists.size(); ++c) {
    CHECK(a.lists[c].rows == b.lists[c].rows);
    CHECK(a.lists[c].codes == b.lists[c].codes);
  }
}

TEST_CASE("build and query validation") {
  const Datastore store = random_store(10, 6, 51);
  CHECK_THROWS_AS(build_ivfpq(store, 11, 0, 5, 1), std::invalid_argument);
  CHECK_THROWS_AS(build_ivfpq(store, 2, 4, 5, 1), std::invalid_argument);  // 4 !| 6
  const IvfPqIndex index = build_ivfpq(store, 2, 0, 5, 1);
  CHECK_THROWS_AS(approx_knn(Vector::Zero(6), index, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(approx_knn(Vector::Zero(6), index, 1, 0), std::invalid_argument);
  CHECK_THROWS_AS(approx_knn(Vector::Zero(5), index, 1, 1), std::invalid_argument);
  IvfPqIndex empty;
  empty.dim = 6;
  empty.ncluster = 1;
  empty.lists.resize(1);
  CHECK_THROWS_AS(approx_knn(Vector::Zero(6), empty, 1, 1), std::invalid_argument);
}
