#pragma once

#include "feds2t/ivfpq.hpp"
#include "feds2t/model.hpp"
#include "feds2t/retrieval.hpp"

#include <span>
#include <vector>

namespace feds2t {

struct TuningGrid {
  std::vector<int> ks{4, 8, 16};
  std::vector<double> lambdas{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::vector<double> temperatures{10, 20, 50, 100, 200};
};

struct TuneResult {
  RetrievalConfig config;  // best (k, lambda, T) on top of `base`
  double dev_wer = 0;      // at the returned config
  double base_dev_wer = 0; // retrieval disabled, same decoding
};

// Exhaustive grid search of dev WER under greedy interpolated decoding.
// Axes are scanned sorted ascending, so ties resolve to the smallest k,
// then lambda, then T.
TuneResult tune_retrieval(const ParameterSet& model, const Datastore& store,
                          std::span<const Example> dev, const TuningGrid& grid,
                          const RetrievalConfig& base, const IvfPqIndex* index,
                          int max_len);

}  // namespace feds2t
