#pragma once

#include "feds2t/model.hpp"
#include "feds2t/retrieval.hpp"
#include "feds2t/types.hpp"

#include <functional>
#include <span>
#include <vector>

namespace feds2t {

// Per-step distribution over the vocabulary given the tokens generated so
// far (BOS excluded). Must return probabilities, not logs.
using StepFn = std::function<Vector(std::span<const TokenId> prefix)>;

// Length-unnormalized beam search over log step probabilities.
//
// Candidates are real tokens plus EOS; BOS and PAD are never proposed, and
// zero-probability continuations are not expanded. EOS candidates compete
// for beam slots and finished hypotheses are kept aside. Score ties break
// lexicographically (smaller token sequence first). Returns the best
// finished hypothesis, else the best unfinished one at max_len, EOS
// excluded either way.
std::vector<TokenId> beam_search(const StepFn& step, int vocab_size,
                                 int beam_width, int max_len);

// Beam decoding of one utterance. With a retrieval context the per-step
// distribution is lambda * p_mem + (1 - lambda) * p_base, else the model
// softmax alone. The model must already contain any adapter (see merge()).
std::vector<TokenId> decode(const ParameterSet& params, const Matrix& frames,
                            int beam_width, const RetrievalContext* retrieval,
                            int max_len);

}  // namespace feds2t
