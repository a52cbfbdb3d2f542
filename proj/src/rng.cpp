#include "feds2t/rng.hpp"

#include <cmath>

namespace feds2t {

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

std::uint64_t fnv1a(std::uint64_t h, std::uint64_t word) {
  for (int i = 0; i < 8; ++i) {
    h ^= (word >> (8 * i)) & 0xff;
    h *= kFnvPrime;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t stream_seed(std::uint64_t root, std::string_view purpose,
                          std::initializer_list<std::uint64_t> ids) {
  std::uint64_t h = kFnvOffset;
  h = fnv1a(h, root);
  for (unsigned char c : purpose) {
    h ^= c;
    h *= kFnvPrime;
  }
  for (std::uint64_t id : ids) h = fnv1a(h, id);
  return splitmix64(h);
}

double StreamRng::gaussian() {
  if (spare_gaussian_) {
    double z = *spare_gaussian_;
    spare_gaussian_.reset();
    return z;
  }
  // u1 in (0, 1] so the log is finite.
  double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * M_PI * u2;
  spare_gaussian_ = r * std::sin(theta);
  return r * std::cos(theta);
}

std::vector<std::size_t> StreamRng::permutation(std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = uniform_int(i);
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

}  // namespace feds2t
