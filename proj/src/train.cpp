#include "feds2t/train.hpp"

#include <stdexcept>

namespace feds2t {

namespace {

void check(std::span<const Example> data, const TrainOptions& opts) {
  if (data.empty()) throw std::invalid_argument("empty train split");
  if (opts.epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (opts.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
}

// Runs the epoch/minibatch loop; step(batch) performs one optimizer update.
template <typename StepFn>
void run_epochs(std::span<const Example> data, const TrainOptions& opts,
                StreamRng& rng, StepFn&& step) {
  const std::size_t n = data.size();
  std::vector<const Example*> batch;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    const auto order = rng.permutation(n);
    for (std::size_t at = 0; at < n; at += opts.batch_size) {
      batch.clear();
      const std::size_t end = std::min(n, at + opts.batch_size);
      for (std::size_t i = at; i < end; ++i) batch.push_back(&data[order[i]]);
      step(std::span<const Example* const>(batch));
    }
  }
}

}  // namespace

ParameterSet train_full(ParameterSet params, std::span<const Example> data,
                        const TrainOptions& opts, StreamRng& rng) {
  check(data, opts);
  AdamState state(params.size());
  run_epochs(data, opts, rng, [&](std::span<const Example* const> batch) {
    FullLoss fl = loss_and_grads(params, batch);
    Vector flat = params.to_vector();
    adam_step(flat, fl.grads.to_vector(), state, opts.lr, opts.adam);
    params.set_from_vector(flat);
  });
  return params;
}

LoraAdapter train_lora(const ParameterSet& backbone, LoraAdapter adapter,
                       std::span<const Example> data, const TrainOptions& opts,
                       StreamRng& rng) {
  check(data, opts);
  AdamState state(adapter.size());
  run_epochs(data, opts, rng, [&](std::span<const Example* const> batch) {
    AdapterLoss al = loss_and_grads(backbone, adapter, batch);
    Vector flat = adapter.to_vector();
    adam_step(flat, al.grads.to_vector(), state, opts.lr, opts.adam);
    adapter.set_from_vector(flat);
  });
  return adapter;
}

}  // namespace feds2t
