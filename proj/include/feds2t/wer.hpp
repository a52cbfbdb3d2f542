#pragma once

#include "feds2t/types.hpp"

#include <cstddef>
#include <span>

namespace feds2t {

// Unit-cost Levenshtein distance between token sequences.
std::size_t edit_distance(std::span<const TokenId> a, std::span<const TokenId> b);

// Token-level error rate: edit_distance / |reference|. Throws on an empty
// reference. May exceed 1 when the hypothesis is much longer.
double wer(std::span<const TokenId> hypothesis, std::span<const TokenId> reference);

}  // namespace feds2t
