#pragma once

#include "feds2t/model.hpp"
#include "feds2t/optim.hpp"
#include "feds2t/rng.hpp"

#include <span>

namespace feds2t {

struct TrainOptions {
  int epochs = 1;
  int batch_size = 8;
  double lr = 1e-2;
  AdamConfig adam{};
};

// Minibatch Adam over shuffled epochs. Optimizer state starts fresh; each
// epoch draws a new permutation from rng, so the whole trajectory is a pure
// function of (inputs, rng stream).
ParameterSet train_full(ParameterSet params, std::span<const Example> data,
                        const TrainOptions& opts, StreamRng& rng);

// Same loop with the backbone frozen; only adapter factors move.
LoraAdapter train_lora(const ParameterSet& backbone, LoraAdapter adapter,
                       std::span<const Example> data, const TrainOptions& opts,
                       StreamRng& rng);

}  // namespace feds2t
