#pragma once

#include "feds2t/model.hpp"
#include "feds2t/types.hpp"

#include <span>
#include <vector>

namespace feds2t {

struct IvfPqIndex;

// Cached (context representation, next token) pairs for one client. Keys are
// the pre-output-projection decoder states h_t; values include the EOS
// position of every sequence.
struct Datastore {
  Matrix keys;                  // N x d_h, row i pairs with values[i]
  std::vector<TokenId> values;  // real-token ids or EOS

  Index size() const { return keys.rows(); }
  Index dim() const { return keys.cols(); }
};

// Teacher-forced pass over data with an already-merged model; one row per
// target position (EOS included), in (example order, step order).
Datastore build_datastore(const ParameterSet& model, std::span<const Example> data);

enum class RetrievalBackend { kExact, kIvfPq };

struct RetrievalConfig {
  int k = 8;
  double lambda = 0.5;
  double temperature = 100.0;
  int nprobe = 8;
  RetrievalBackend backend = RetrievalBackend::kExact;
};

struct Neighbor {
  Index row = 0;
  double dist2 = 0;  // squared Euclidean distance
};

// k smallest-distance rows, ties broken by row index ascending. Throws when
// k exceeds the store size.
std::vector<Neighbor> exact_knn(const Datastore& store, const Vector& query, int k);

// p(v) proportional to sum over neighbors with that value of exp(-d2/T),
// normalized over the retrieved set; unretrieved tokens get exactly zero.
Vector weighted_vote(std::span<const Neighbor> neighbors,
                     const std::vector<TokenId>& values, double temperature,
                     int vocab_size);

// Full retrieval distribution for one query. The index is consulted only for
// the kIvfPq backend.
Vector knn_distribution(const Vector& query, const Datastore& store,
                        const RetrievalConfig& config, const IvfPqIndex* index,
                        int vocab_size);

// lambda * p_mem + (1 - lambda) * p_base. Both inputs must sum to 1 within
// 1e-9; lambda must lie in [0, 1].
Vector interpolate(const Vector& p_base, const Vector& p_mem, double lambda);

// Everything decode needs to mix retrieval into the per-step distribution.
struct RetrievalContext {
  const Datastore* store = nullptr;
  RetrievalConfig config{};
  const IvfPqIndex* index = nullptr;  // required iff config.backend == kIvfPq
};

}  // namespace feds2t
