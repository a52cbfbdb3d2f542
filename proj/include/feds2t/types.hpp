#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace feds2t {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = Mat<double>;
using Vector = Vec<double>;
using Index = Eigen::Index;

using TokenId = std::int32_t;

// Reserved token ids. Real tokens occupy [kFirstRealToken, vocab_size).
inline constexpr TokenId kBos = 0;
inline constexpr TokenId kEos = 1;
inline constexpr TokenId kPad = 2;
inline constexpr TokenId kFirstRealToken = 3;

}  // namespace feds2t
