#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "feds2t/model.hpp"
#include "feds2t/numeric.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace feds2t;

namespace {

ModelConfig small_config(int df = 3, int dh = 4, int v = 8,
                         std::uint32_t targets = 0, int rank = 2,
                         double alpha = 4.0) {
  ModelConfig c;
  c.feature_dim = df;
  c.hidden_dim = dh;
  c.vocab_size = v;
  c.lora_targets = targets;
  c.lora_rank = rank;
  c.lora_alpha = alpha;
  return c;
}

constexpr std::uint32_t kAllTargets =
    static_cast<std::uint32_t>(LoraTarget::kEnc) |
    static_cast<std::uint32_t>(LoraTarget::kQ) |
    static_cast<std::uint32_t>(LoraTarget::kH) |
    static_cast<std::uint32_t>(LoraTarget::kO);

std::vector<TokenId> with_bos(const std::vector<TokenId>& tokens) {
  std::vector<TokenId> prev{kBos};
  prev.insert(prev.end(), tokens.begin(), tokens.end());
  return prev;
}

}  // namespace

TEST_CASE("zero parameters give zero logits and uniform softmax") {
  const ModelConfig config = small_config(3, 2, 8);
  const ParameterSet params = zero_parameters(config);
  const Example ex = oracles::random_example(3, 8, 4, 11);

  const ForwardResult fr = forward(params, nullptr, ex.frames, with_bos(ex.tokens));
  CHECK(fr.logits.cwiseAbs().maxCoeff() == 0.0);
  for (Index t = 0; t < fr.logits.cols(); ++t) {
    const Vector p = softmax(fr.logits.col(t));
    for (Index v = 0; v < p.size(); ++v) CHECK(p(v) == doctest::Approx(1.0 / 8));
  }
}

TEST_CASE("loss at zero parameters is ln(V) exactly") {
  const ModelConfig config = small_config(3, 5, 11);
  const ParameterSet params = zero_parameters(config);
  std::vector<Example> batch{oracles::random_example(3, 11, 3, 1),
                             oracles::random_example(3, 11, 1, 2)};
  const FullLoss fl = loss_and_grads(params, std::span<const Example>(batch));
  CHECK(std::abs(fl.nll - std::log(11.0)) < 1e-12);
  CHECK(std::abs(loss(params, nullptr, batch) - std::log(11.0)) < 1e-12);
}

TEST_CASE("fresh adapter (b = 0) is an exact no-op") {
  const ModelConfig config = small_config(3, 4, 8, kAllTargets);
  const ParameterSet params = oracles::random_params(config, 5);
  StreamRng rng(7, "adapter_init");
  const LoraAdapter adapter = init_adapter(config, rng);  // a random, b zero
  const Example ex = oracles::random_example(3, 8, 5, 3);

  const ForwardResult base = forward(params, nullptr, ex.frames, with_bos(ex.tokens));
  const ForwardResult with = forward(params, &adapter, ex.frames, with_bos(ex.tokens));
  CHECK((base.logits - with.logits).cwiseAbs().maxCoeff() == 0.0);
  CHECK((base.hidden - with.hidden).cwiseAbs().maxCoeff() == 0.0);

  // Merging the no-op adapter reproduces the parameters bit for bit.
  const ParameterSet merged = merge(params, adapter);
  CHECK((merged.to_vector() - params.to_vector()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward matches the straight-line reference implementation") {
  const ModelConfig config = small_config(3, 4, 8, kAllTargets);
  const ParameterSet params = oracles::random_params(config, 42);
  const Example ex = oracles::random_example(3, 8, 6, 43);
  const auto prev = with_bos(ex.tokens);

  SUBCASE("without adapter") {
    const ForwardResult fr = forward(params, nullptr, ex.frames, prev);
    const auto ref = oracles::ref_forward(oracles::to_ref(params), ex.frames, prev);
    for (std::size_t t = 0; t < prev.size(); ++t) {
      for (int v = 0; v < 8; ++v)
        CHECK(std::abs(fr.logits(v, t) - ref.logits[t][v]) < 1e-10);
      for (int i = 0; i < 4; ++i)
        CHECK(std::abs(fr.hidden(i, t) - ref.hidden[t][i]) < 1e-10);
    }
  }

  SUBCASE("with a nonzero adapter") {
    const LoraAdapter adapter = oracles::random_adapter(config, 44);
    const ForwardResult fr = forward(params, &adapter, ex.frames, prev);
    auto ref_model = oracles::to_ref(params);
    oracles::ref_apply_adapter(ref_model, adapter);
    const auto ref = oracles::ref_forward(ref_model, ex.frames, prev);
    for (std::size_t t = 0; t < prev.size(); ++t)
      for (int v = 0; v < 8; ++v)
        CHECK(std::abs(fr.logits(v, t) - ref.logits[t][v]) < 1e-10);
  }
}

TEST_CASE("attention weights sum to one at every step") {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    const ModelConfig config = small_config(4, 6, 9);
    const ParameterSet params = oracles::random_params(config, seed);
    const Example ex = oracles::random_example(4, 9, 5, seed + 100);
    const ForwardTrace tr =
        forward_trace(params, nullptr, ex.frames, with_bos(ex.tokens));
    for (Index t = 0; t < tr.attention.cols(); ++t) {
      CHECK(std::abs(tr.attention.col(t).sum() - 1.0) < 1e-12);
      CHECK(tr.attention.col(t).minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("analytic gradients match central finite differences") {
  const ModelConfig config = small_config(3, 4, 8, kAllTargets, 2, 3.0);
  const ParameterSet params = oracles::random_params(config, 77);
  std::vector<Example> batch{oracles::random_example(3, 8, 3, 70),
                             oracles::random_example(3, 8, 5, 71),
                             oracles::random_example(3, 8, 1, 72)};

  auto check_close = [](const Vector& analytic, const Vector& fd) {
    REQUIRE(analytic.size() == fd.size());
    for (Index i = 0; i < analytic.size(); ++i) {
      const double denom = std::max({std::abs(analytic(i)), std::abs(fd(i)), 1e-6});
      CHECK(std::abs(analytic(i) - fd(i)) / denom < 1e-4);
    }
  };

  SUBCASE("full trainable set") {
    const FullLoss fl = loss_and_grads(params, std::span<const Example>(batch));
    check_close(fl.grads.to_vector(), oracles::fd_full_grads(params, batch));
  }

  SUBCASE("adapter factors, frozen backbone") {
    const LoraAdapter adapter = oracles::random_adapter(config, 78);
    const AdapterLoss al =
        loss_and_grads(params, adapter, std::span<const Example>(batch));
    check_close(al.grads.to_vector(),
                oracles::fd_adapter_grads(params, adapter, batch));
  }
}

TEST_CASE("adapter gradients cover exactly the targeted factors") {
  const ModelConfig config =
      small_config(3, 4, 8, static_cast<std::uint32_t>(LoraTarget::kQ), 2, 2.0);
  const ParameterSet params = oracles::random_params(config, 9);
  const LoraAdapter adapter = oracles::random_adapter(config, 10);
  std::vector<Example> batch{oracles::random_example(3, 8, 2, 11)};

  const AdapterLoss al =
      loss_and_grads(params, adapter, std::span<const Example>(batch));
  REQUIRE(al.grads.factors.size() == 1);
  CHECK(al.grads.factors[0].target == LoraTarget::kQ);
  CHECK(al.grads.size() == adapter.size());
}

TEST_CASE("merge equals applying the adapter inside the forward pass") {
  const ModelConfig config = small_config(5, 16, 12, kAllTargets, 3, 6.0);
  for (std::uint64_t seed : {21u, 22u, 23u}) {
    const ParameterSet params = oracles::random_params(config, seed);
    const LoraAdapter adapter = oracles::random_adapter(config, seed + 50);
    const ParameterSet merged = merge(params, adapter);
    const Example ex = oracles::random_example(5, 12, 4, seed + 90);

    const ForwardResult a = forward(params, &adapter, ex.frames, with_bos(ex.tokens));
    const ForwardResult b = forward(merged, nullptr, ex.frames, with_bos(ex.tokens));
    CHECK((a.logits - b.logits).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("merge worked example: rank-1 outer product") {
  // r=1, alpha=1, b=(1,0)^T, a=(0,1) onto a 2x2 zero target gives [[0,1],[0,0]].
  ModelConfig config = small_config(2, 2, 4,
                                    static_cast<std::uint32_t>(LoraTarget::kQ),
                                    1, 1.0);
  ParameterSet params = zero_parameters(config);
  LoraAdapter adapter = zero_adapter(config);
  adapter.factors[0].b << 1, 0;
  adapter.factors[0].a << 0, 1;

  const ParameterSet merged = merge(params, adapter);
  CHECK(merged.w_q(0, 0) == 0.0);
  CHECK(merged.w_q(0, 1) == 1.0);
  CHECK(merged.w_q(1, 0) == 0.0);
  CHECK(merged.w_q(1, 1) == 0.0);
}

TEST_CASE("input validation") {
  const ModelConfig config = small_config();
  const ParameterSet params = oracles::random_params(config, 1);
  const Example ex = oracles::random_example(3, 8, 2, 2);

  SUBCASE("token id out of range") {
    std::vector<TokenId> bad{kBos, 99};
    CHECK_THROWS_AS(forward(params, nullptr, ex.frames, bad), std::invalid_argument);
  }
  SUBCASE("prev tokens must start with BOS") {
    std::vector<TokenId> bad{3, 4};
    CHECK_THROWS_AS(forward(params, nullptr, ex.frames, bad), std::invalid_argument);
  }
  SUBCASE("frame dimension mismatch") {
    Matrix frames(5, 2);
    frames.setZero();
    CHECK_THROWS_AS(forward(params, nullptr, frames, with_bos(ex.tokens)),
                    std::invalid_argument);
  }
  SUBCASE("empty batch") {
    CHECK_THROWS_AS(loss_and_grads(params, std::span<const Example>{}),
                    std::invalid_argument);
  }
  SUBCASE("reserved ids are rejected inside example tokens") {
    std::vector<Example> batch{ex};
    batch[0].tokens[0] = kPad;
    CHECK_THROWS_AS(loss_and_grads(params, std::span<const Example>(batch)),
                    std::invalid_argument);
  }
  SUBCASE("adapter shape mismatch on merge") {
    ModelConfig other = small_config(3, 4, 8, kAllTargets, 3, 6.0);
    other.hidden_dim = 5;
    CHECK_THROWS_AS(merge(params, oracles::random_adapter(other, 3)),
                    std::invalid_argument);
  }
  SUBCASE("rank larger than a target dimension is rejected") {
    ModelConfig bad = small_config(3, 4, 8, kAllTargets, 5, 2.0);
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  }
}
