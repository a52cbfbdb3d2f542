#include "feds2t/eval.hpp"

#include "feds2t/beam.hpp"
#include "feds2t/wer.hpp"

#include <stdexcept>

namespace feds2t {

double split_wer(const ParameterSet& model, std::span<const Example> examples,
                 const EvalOptions& opts) {
  if (examples.empty()) throw std::invalid_argument("empty evaluation split");
  std::size_t edits = 0, ref_len = 0;
  for (const Example& ex : examples) {
    const auto hyp =
        decode(model, ex.frames, opts.beam_width, opts.retrieval, opts.max_len);
    edits += edit_distance(hyp, ex.tokens);
    ref_len += ex.tokens.size();
  }
  return static_cast<double>(edits) / static_cast<double>(ref_len);
}

}  // namespace feds2t
