#include "feds2t/tune.hpp"

#include "feds2t/eval.hpp"

#include <algorithm>
#include <stdexcept>

namespace feds2t {

TuneResult tune_retrieval(const ParameterSet& model, const Datastore& store,
                          std::span<const Example> dev, const TuningGrid& grid,
                          const RetrievalConfig& base, const IvfPqIndex* index,
                          int max_len) {
  if (dev.empty()) throw std::invalid_argument("empty dev split");
  if (grid.ks.empty() || grid.lambdas.empty() || grid.temperatures.empty())
    throw std::invalid_argument("empty tuning grid");

  auto ks = grid.ks;
  auto lambdas = grid.lambdas;
  auto temps = grid.temperatures;
  std::sort(ks.begin(), ks.end());
  std::sort(lambdas.begin(), lambdas.end());
  std::sort(temps.begin(), temps.end());

  TuneResult result;
  result.base_dev_wer = split_wer(model, dev, EvalOptions{1, max_len, nullptr});

  bool first = true;
  for (int k : ks) {
    for (double lambda : lambdas) {
      for (double temperature : temps) {
        RetrievalConfig cfg = base;
        cfg.k = k;
        cfg.lambda = lambda;
        cfg.temperature = temperature;
        const RetrievalContext ctx{&store, cfg, index};
        const double w = split_wer(model, dev, EvalOptions{1, max_len, &ctx});
        if (first || w < result.dev_wer) {
          first = false;
          result.dev_wer = w;
          result.config = cfg;
        }
      }
    }
  }
  return result;
}

}  // namespace feds2t
