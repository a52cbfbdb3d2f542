#include "feds2t/wer.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace feds2t {

std::size_t edit_distance(std::span<const TokenId> a, std::span<const TokenId> b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double wer(std::span<const TokenId> hypothesis, std::span<const TokenId> reference) {
  if (reference.empty()) throw std::invalid_argument("empty reference");
  return static_cast<double>(edit_distance(hypothesis, reference)) /
         static_cast<double>(reference.size());
}

}  // namespace feds2t
