#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "feds2t/beam.hpp"
#include "feds2t/numeric.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace feds2t;

namespace {

std::vector<TokenId> with_bos(const std::vector<TokenId>& tokens) {
  std::vector<TokenId> prev{kBos};
  prev.insert(prev.end(), tokens.begin(), tokens.end());
  return prev;
}

// Step-by-step argmax decoding over EOS plus the real tokens, ids ascending
// on ties, stopping at EOS or max_len.
std::vector<TokenId> greedy_oracle(const ParameterSet& params, const Matrix& frames,
                                   int max_len) {
  std::vector<TokenId> out;
  for (int step = 0; step < max_len; ++step) {
    const auto prev = with_bos(out);
    const ForwardResult fr = forward(params, nullptr, frames, prev);
    const Vector p = softmax(fr.logits.col(fr.logits.cols() - 1));
    TokenId best = -1;
    double best_p = 0;
    auto consider = [&](TokenId v) {
      if (p(v) > best_p) {
        best_p = p(v);
        best = v;
      }
    };
    consider(kEos);
    for (TokenId v = kFirstRealToken; v < params.vocab_size(); ++v) consider(v);
    if (best == kEos || best < 0) break;
    out.push_back(best);
  }
  return out;
}

// Distribution table indexed by prefix length.
StepFn table_step(std::vector<Vector> tables) {
  return [tables = std::move(tables)](std::span<const TokenId> prefix) {
    return tables.at(prefix.size());
  };
}

Vector dist5(double eos, double p3, double p4) {
  Vector p = Vector::Zero(5);
  p(kEos) = eos;
  p(3) = p3;
  p(4) = p4;
  return p;
}

}  // namespace

TEST_CASE("beam width 1 equals greedy argmax decoding on 100 seeds") {
  ModelConfig config;
  config.feature_dim = 3;
  config.hidden_dim = 4;
  config.vocab_size = 7;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const ParameterSet params = oracles::random_params(config, seed, 1.2);
    const Example ex = oracles::random_example(3, 7, 3, seed + 1000);
    CHECK(decode(params, ex.frames, 1, nullptr, 6) ==
          greedy_oracle(params, ex.frames, 6));
  }
}

TEST_CASE("degenerate vocabulary: output is a run of the single real token") {
  ModelConfig config;
  config.feature_dim = 2;
  config.hidden_dim = 3;
  config.vocab_size = 4;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ParameterSet params = oracles::random_params(config, seed, 1.0);
    const Example ex = oracles::random_example(2, 4, 2, seed + 50);
    for (int width : {1, 3}) {
      const auto out = decode(params, ex.frames, width, nullptr, 5);
      for (TokenId v : out) CHECK(v == 3);
    }
  }
}

TEST_CASE("beam 5 on a 3-step table equals exhaustive enumeration") {
  const StepFn step = table_step({dist5(0.1, 0.5, 0.4), dist5(0.3, 0.3, 0.4),
                                  dist5(0.6, 0.2, 0.2)});
  const auto beam = beam_search(step, 5, 5, 3);
  CHECK(beam == oracles::exhaustive_decode(step, 5, 3));
  // Hand ranking: [3] scores ln(.5) + ln(.3) = -1.897, ahead of [] at
  // ln(.1) = -2.303 and [3,4]/[4] at -2.120.
  CHECK(beam == std::vector<TokenId>{3});
}

TEST_CASE("exact score ties break to the lexicographically smaller sequence") {
  const StepFn step =
      table_step({dist5(0.02, 0.49, 0.49), dist5(0.9, 0.05, 0.05)});
  const auto beam = beam_search(step, 5, 5, 2);
  // [3] and [4] tie exactly; [] is far worse.
  CHECK(beam == std::vector<TokenId>{3});
  CHECK(beam == oracles::exhaustive_decode(step, 5, 2));
}

TEST_CASE("beam agrees with enumeration across random tables") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    StreamRng rng(seed, "beam_tables");
    std::vector<Vector> tables;
    for (int t = 0; t < 3; ++t) {
      Vector p = Vector::Zero(5);
      p(kEos) = 0.05 + 0.9 * rng.uniform();
      p(3) = (1.0 - p(kEos)) * rng.uniform();
      p(4) = 1.0 - p(kEos) - p(3);
      tables.push_back(p);
    }
    const StepFn step = table_step(tables);
    CHECK(beam_search(step, 5, 5, 3) == oracles::exhaustive_decode(step, 5, 3));
  }
}

TEST_CASE("uniform distribution ends immediately") {
  // All-zero model: softmax is uniform, so the empty hypothesis (one EOS
  // step) outscores every longer sequence.
  ModelConfig config;
  config.feature_dim = 2;
  config.hidden_dim = 2;
  config.vocab_size = 6;
  const ParameterSet params = zero_parameters(config);
  const Example ex = oracles::random_example(2, 6, 2, 3);
  CHECK(decode(params, ex.frames, 5, nullptr, 4).empty());
}

TEST_CASE("invalid beam arguments") {
  const StepFn step = table_step({dist5(0.5, 0.25, 0.25)});
  CHECK_THROWS_AS(beam_search(step, 5, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(beam_search(step, 3, 1, 1), std::invalid_argument);
}

TEST_CASE("max_len 0 yields the empty sequence") {
  const StepFn step = table_step({dist5(0.5, 0.25, 0.25)});
  CHECK(beam_search(step, 5, 3, 0).empty());
}
