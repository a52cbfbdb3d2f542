#pragma once

#include "feds2t/types.hpp"

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <random>
#include <string_view>
#include <vector>

namespace feds2t {

// Every random draw in the project flows from one root seed through named
// streams: stream_seed(root, purpose, ids...) hashes the purpose string and
// integer ids into an independent 64-bit seed. Identical (root, purpose, ids)
// always yield the identical stream, so whole experiments replay bitwise.
std::uint64_t stream_seed(std::uint64_t root, std::string_view purpose,
                          std::initializer_list<std::uint64_t> ids = {});

// Deterministic RNG over a named stream. Gaussian and uniform draws use
// explicit arithmetic on the raw engine output rather than the
// implementation-defined std::*_distribution adaptors.
class StreamRng {
 public:
  explicit StreamRng(std::uint64_t seed) : engine_(seed) {}
  StreamRng(std::uint64_t root, std::string_view purpose,
            std::initializer_list<std::uint64_t> ids = {})
      : engine_(stream_seed(root, purpose, ids)) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), n > 0. Fixed-point multiply keeps the mapping
  // fully specified.
  std::uint64_t uniform_int(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Standard normal via Box-Muller.
  double gaussian();

  template <typename Derived>
  void fill_gaussian(Eigen::MatrixBase<Derived>& m, double stddev = 1.0) {
    for (Index c = 0; c < m.cols(); ++c)
      for (Index r = 0; r < m.rows(); ++r) m(r, c) = stddev * gaussian();
  }

  template <typename Derived>
  void fill_uniform(Eigen::MatrixBase<Derived>& m, double lo, double hi) {
    for (Index c = 0; c < m.cols(); ++c)
      for (Index r = 0; r < m.rows(); ++r) m(r, c) = uniform(lo, hi);
  }

  // Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_gaussian_;
};

}  // namespace feds2t
