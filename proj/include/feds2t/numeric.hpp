#pragma once

#include "feds2t/types.hpp"

namespace feds2t {

// Numerically stable softmax of a vector expression.
template <typename Derived>
Vec<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  using S = typename Derived::Scalar;
  Vec<S> z = logits.derived();
  z.array() -= z.maxCoeff();
  Vec<S> e = z.array().exp();
  return e / e.sum();
}

// log softmax(logits)[index] without forming the full distribution.
template <typename Derived>
typename Derived::Scalar log_softmax_at(const Eigen::MatrixBase<Derived>& logits,
                                        Index index) {
  using S = typename Derived::Scalar;
  const S mx = logits.maxCoeff();
  const S lse = std::log((logits.array() - mx).exp().sum());
  return logits(index) - mx - lse;
}

}  // namespace feds2t
