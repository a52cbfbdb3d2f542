#pragma once

#include "feds2t/model.hpp"
#include "feds2t/retrieval.hpp"

#include <span>

namespace feds2t {

struct EvalOptions {
  int beam_width = 1;
  int max_len = 16;
  const RetrievalContext* retrieval = nullptr;
};

// Corpus-level WER of a split: total edit distance over total reference
// length, decoding every example with the given options.
double split_wer(const ParameterSet& model, std::span<const Example> examples,
                 const EvalOptions& opts);

}  // namespace feds2t
