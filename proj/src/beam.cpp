#include "feds2t/beam.hpp"

#include "feds2t/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace feds2t {

namespace {

struct Hypothesis {
  std::vector<TokenId> tokens;  // generated tokens, no BOS/EOS
  double score = 0;             // summed log probabilities
};

// Higher score first; exact ties prefer the lexicographically smaller
// token sequence.
bool better(const Hypothesis& x, const Hypothesis& y) {
  if (x.score != y.score) return x.score > y.score;
  return std::lexicographical_compare(x.tokens.begin(), x.tokens.end(),
                                      y.tokens.begin(), y.tokens.end());
}

}  // namespace

std::vector<TokenId> beam_search(const StepFn& step, int vocab_size,
                                 int beam_width, int max_len) {
  if (beam_width < 1) throw std::invalid_argument("beam_width must be >= 1");
  if (vocab_size < 4) throw std::invalid_argument("vocab_size must be >= 4");

  std::vector<Hypothesis> live{{{}, 0.0}};
  std::vector<Hypothesis> finished;

  for (int len = 1; len <= max_len && !live.empty(); ++len) {
    std::vector<Hypothesis> candidates;
    for (const Hypothesis& hyp : live) {
      const Vector p = step(hyp.tokens);
      if (p.size() != vocab_size)
        throw std::invalid_argument("step distribution has wrong size");
      auto expand = [&](TokenId v) {
        if (p(v) <= 0) return;
        Hypothesis next = hyp;
        next.tokens.push_back(v);
        next.score += std::log(p(v));
        candidates.push_back(std::move(next));
      };
      expand(kEos);
      for (TokenId v = kFirstRealToken; v < vocab_size; ++v) expand(v);
    }
    const std::size_t keep = std::min<std::size_t>(beam_width, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + keep,
                      candidates.end(), better);
    candidates.resize(keep);

    live.clear();
    for (Hypothesis& hyp : candidates) {
      if (hyp.tokens.back() == kEos) {
        hyp.tokens.pop_back();  // report without the terminator
        finished.push_back(std::move(hyp));
      } else {
        live.push_back(std::move(hyp));
      }
    }
  }

  const std::vector<Hypothesis>& pool = finished.empty() ? live : finished;
  if (pool.empty()) return {};
  return std::min_element(pool.begin(), pool.end(), better)->tokens;
}

std::vector<TokenId> decode(const ParameterSet& params, const Matrix& frames,
                            int beam_width, const RetrievalContext* retrieval,
                            int max_len) {
  if (retrieval && !retrieval->store)
    throw std::invalid_argument("retrieval context has no datastore");

  const StepFn step = [&](std::span<const TokenId> prefix) {
    std::vector<TokenId> prev(prefix.size() + 1);
    prev[0] = kBos;
    std::copy(prefix.begin(), prefix.end(), prev.begin() + 1);
    const ForwardResult fr = forward(params, nullptr, frames, prev);
    const Index last = fr.logits.cols() - 1;
    Vector p = softmax(fr.logits.col(last));
    if (!retrieval) return p;
    const Vector p_mem =
        knn_distribution(fr.hidden.col(last), *retrieval->store,
                         retrieval->config, retrieval->index,
                         params.vocab_size());
    return interpolate(p, p_mem, retrieval->config.lambda);
  };
  return beam_search(step, params.vocab_size(), beam_width, max_len);
}

}  // namespace feds2t
