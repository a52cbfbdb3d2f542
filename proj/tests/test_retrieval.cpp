#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "feds2t/beam.hpp"
#include "feds2t/eval.hpp"
#include "feds2t/retrieval.hpp"
#include "feds2t/tune.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace feds2t;

namespace {

ModelConfig tiny_config(int df = 3, int dh = 4, int v = 9) {
  ModelConfig c;
  c.feature_dim = df;
  c.hidden_dim = dh;
  c.vocab_size = v;
  return c;
}

Datastore random_store(Index n, Index dim, std::uint64_t seed, int vocab = 9) {
  StreamRng rng(seed, "store");
  Datastore store;
  store.keys.resize(n, dim);
  rng.fill_gaussian(store.keys);
  store.values.resize(n);
  for (Index i = 0; i < n; ++i)
    store.values[i] = kFirstRealToken +
                      static_cast<TokenId>(rng.uniform_int(vocab - kFirstRealToken));
  return store;
}

}  // namespace

TEST_CASE("datastore size counts one row per target position") {
  const ModelConfig config = tiny_config();
  const ParameterSet model = oracles::random_params(config, 3);

  std::vector<Example> one{oracles::random_example(3, 9, 2, 5)};
  const Datastore store = build_datastore(model, one);
  CHECK(store.size() == 3);  // two tokens + EOS
  CHECK(store.values[0] == one[0].tokens[0]);
  CHECK(store.values[1] == one[0].tokens[1]);
  CHECK(store.values[2] == kEos);

  std::vector<Example> many;
  for (std::uint64_t s = 0; s < 4; ++s)
    many.push_back(oracles::random_example(3, 9, 1 + static_cast<int>(s % 3), s));
  Index expected = 0;
  for (const Example& ex : many) expected += static_cast<Index>(ex.tokens.size()) + 1;
  CHECK(build_datastore(model, many).size() == expected);
}

TEST_CASE("identical examples produce identical rows; rebuilds are bitwise equal") {
  const ModelConfig config = tiny_config();
  const ParameterSet model = oracles::random_params(config, 8);
  const Example ex = oracles::random_example(3, 9, 3, 21);
  std::vector<Example> pair{ex, ex};

  const Datastore store = build_datastore(model, pair);
  REQUIRE(store.size() == 8);
  for (Index t = 0; t < 4; ++t) {
    CHECK((store.keys.row(t) - store.keys.row(4 + t)).cwiseAbs().maxCoeff() == 0.0);
    CHECK(store.values[t] == store.values[4 + t]);
  }

  const Datastore again = build_datastore(model, pair);
  CHECK((store.keys - again.keys).cwiseAbs().maxCoeff() == 0.0);
  CHECK(store.values == again.values);
}

TEST_CASE("datastore keys equal the reference forward hidden states") {
  const ModelConfig config = tiny_config();
  const ParameterSet model = oracles::random_params(config, 13);
  const Example ex = oracles::random_example(3, 9, 4, 14);
  std::vector<Example> data{ex};
  const Datastore store = build_datastore(model, data);

  std::vector<TokenId> prev{kBos};
  prev.insert(prev.end(), ex.tokens.begin(), ex.tokens.end());
  const auto ref = oracles::ref_forward(oracles::to_ref(model), ex.frames, prev);
  REQUIRE(store.size() == static_cast<Index>(prev.size()));
  for (Index t = 0; t < store.size(); ++t)
    for (Index j = 0; j < store.dim(); ++j)
      CHECK(std::abs(store.keys(t, j) - ref.hidden[t][j]) < 1e-10);
}

TEST_CASE("exact search equals the naive scan oracle, rows and distances") {
  const Datastore store = random_store(2000, 8, 99);
  StreamRng rng(100, "queries");
  for (int q = 0; q < 200; ++q) {
    Vector query(8);
    rng.fill_gaussian(query);
    const auto got = exact_knn(store, query, 10);
    const auto want = oracles::naive_scan_knn(store.keys, query, 10);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].row == want[i].row);
      CHECK(got[i].dist2 == want[i].dist2);
    }
  }
}

TEST_CASE("weighted vote") {
  SUBCASE("k = 1 is one-hot at the neighbor's value") {
    const std::vector<Neighbor> n{{0, 2.5}};
    const Vector p = weighted_vote(n, {5}, 50.0, 9);
    CHECK(p(5) == 1.0);
    CHECK(p.sum() == 1.0);
  }

  SUBCASE("equal distances, distinct values: half and half") {
    const std::vector<Neighbor> n{{0, 4.0}, {1, 4.0}};
    const Vector p = weighted_vote(n, {5, 7}, 10.0, 9);
    CHECK(p(5) == 0.5);
    CHECK(p(7) == 0.5);
  }

  SUBCASE("distances 0 and T*ln2 give 2/3 and 1/3") {
    const double temperature = 20.0;
    const std::vector<Neighbor> n{{0, 0.0}, {1, temperature * std::log(2.0)}};
    const Vector p = weighted_vote(n, {4, 6}, temperature, 9);
    CHECK(std::abs(p(4) - 2.0 / 3.0) < 1e-12);
    CHECK(std::abs(p(6) - 1.0 / 3.0) < 1e-12);
  }

  SUBCASE("repeated values accumulate") {
    const std::vector<Neighbor> n{{0, 1.0}, {1, 1.0}, {2, 1.0}};
    const Vector p = weighted_vote(n, {4, 4, 5}, 10.0, 9);
    CHECK(std::abs(p(4) - 2.0 / 3.0) < 1e-12);
  }
}

TEST_CASE("scaling distances and temperature together is an identity") {
  StreamRng rng(7, "scale");
  std::vector<Neighbor> n;
  std::vector<TokenId> values;
  for (Index i = 0; i < 12; ++i) {
    n.push_back({i, 5.0 * rng.uniform()});
    values.push_back(kFirstRealToken + static_cast<TokenId>(rng.uniform_int(5)));
  }
  const double temperature = 35.0;
  const Vector base = weighted_vote(n, values, temperature, 9);

  SUBCASE("power-of-two scale is bitwise exact") {
    auto scaled = n;
    for (auto& x : scaled) x.dist2 *= 4.0;
    const Vector p = weighted_vote(scaled, values, temperature * 4.0, 9);
    CHECK((p - base).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("general scale within rounding error") {
    auto scaled = n;
    for (auto& x : scaled) x.dist2 *= 3.0;
    const Vector p = weighted_vote(scaled, values, temperature * 3.0, 9);
    CHECK((p - base).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("knn distribution normalizes over random queries") {
  const Datastore store = random_store(300, 6, 31);
  RetrievalConfig cfg;
  cfg.k = 8;
  cfg.temperature = 10.0;
  StreamRng rng(32, "queries");
  for (int q = 0; q < 100; ++q) {
    Vector query(6);
    rng.fill_gaussian(query, 3.0);
    const Vector p = knn_distribution(query, store, cfg, nullptr, 9);
    CHECK(std::abs(p.sum() - 1.0) < 1e-9);
    CHECK(p.minCoeff() >= 0.0);
  }
}

TEST_CASE("interpolate") {
  Vector base(4), mem(4);
  base << 0.1, 0.2, 0.3, 0.4;
  mem << 0.25, 0.25, 0.25, 0.25;

  SUBCASE("lambda 0 returns the base distribution exactly") {
    CHECK((interpolate(base, mem, 0.0) - base).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("lambda 1 returns the retrieval distribution exactly") {
    CHECK((interpolate(base, mem, 1.0) - mem).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("midpoint of mirrored distributions is uniform") {
    Vector a(2), b(2);
    a << 0.8, 0.2;
    b << 0.2, 0.8;
    const Vector p = interpolate(a, b, 0.5);
    CHECK(p(0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(p(1) == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("lambda outside [0,1] is rejected") {
    CHECK_THROWS_AS(interpolate(base, mem, -0.1), std::invalid_argument);
    CHECK_THROWS_AS(interpolate(base, mem, 1.1), std::invalid_argument);
  }
  SUBCASE("unnormalized inputs are rejected") {
    Vector bad = base * 1.5;
    CHECK_THROWS_AS(interpolate(bad, mem, 0.5), std::invalid_argument);
  }
}

TEST_CASE("lambda 0 retrieval leaves greedy decoding unchanged") {
  const ModelConfig config = tiny_config(3, 4, 8);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const ParameterSet model = oracles::random_params(config, seed, 1.0);
    std::vector<Example> data{oracles::random_example(3, 8, 2, seed),
                              oracles::random_example(3, 8, 3, seed + 7)};
    const Datastore store = build_datastore(model, data);
    RetrievalConfig cfg;
    cfg.k = 2;
    cfg.lambda = 0.0;
    cfg.temperature = 50.0;
    const RetrievalContext ctx{&store, cfg, nullptr};
    const Example probe = oracles::random_example(3, 8, 3, seed + 400);
    CHECK(decode(model, probe.frames, 1, &ctx, 6) ==
          decode(model, probe.frames, 1, nullptr, 6));
  }
}

TEST_CASE("retrieval errors") {
  const Datastore store = random_store(5, 4, 1);
  Vector query = Vector::Zero(4);
  CHECK_THROWS_AS(exact_knn(store, query, 6), std::invalid_argument);  // k > N
  CHECK_THROWS_AS(exact_knn(store, query, 0), std::invalid_argument);
  CHECK_THROWS_AS(exact_knn(store, Vector::Zero(3), 2), std::invalid_argument);
  CHECK_THROWS_AS(weighted_vote({}, {}, 10.0, 9), std::invalid_argument);

  const ModelConfig config = tiny_config();
  const ParameterSet model = oracles::random_params(config, 2);
  CHECK_THROWS_AS(build_datastore(model, std::span<const Example>{}),
                  std::invalid_argument);
}

TEST_CASE("grid tuning") {
  const ModelConfig config = tiny_config(3, 6, 9);
  const ParameterSet model = oracles::random_params(config, 60, 0.8);
  std::vector<Example> train, dev;
  for (std::uint64_t s = 0; s < 30; ++s)
    train.push_back(oracles::random_example(3, 9, 2, 600 + s));
  for (std::uint64_t s = 0; s < 10; ++s)
    dev.push_back(oracles::random_example(3, 9, 2, 900 + s));
  const Datastore store = build_datastore(model, train);
  const RetrievalConfig base;

  SUBCASE("a one-point grid returns that point") {
    TuningGrid grid;
    grid.ks = {4};
    grid.lambdas = {0.3};
    grid.temperatures = {20.0};
    const TuneResult r = tune_retrieval(model, store, dev, grid, base, nullptr, 6);
    CHECK(r.config.k == 4);
    CHECK(r.config.lambda == 0.3);
    CHECK(r.config.temperature == 20.0);
  }

  SUBCASE("two-point grid returns the point the direct evaluation prefers") {
    TuningGrid grid;
    grid.ks = {2, 8};
    grid.lambdas = {0.5};
    grid.temperatures = {10.0};
    auto eval_point = [&](int k) {
      RetrievalConfig cfg = base;
      cfg.k = k;
      cfg.lambda = 0.5;
      cfg.temperature = 10.0;
      const RetrievalContext ctx{&store, cfg, nullptr};
      return split_wer(model, dev, EvalOptions{1, 6, &ctx});
    };
    const double wer2 = eval_point(2), wer8 = eval_point(8);
    const TuneResult r = tune_retrieval(model, store, dev, grid, base, nullptr, 6);
    CHECK(r.dev_wer == std::min(wer2, wer8));
    if (wer8 < wer2) CHECK(r.config.k == 8);
    if (wer2 < wer8) CHECK(r.config.k == 2);
    if (wer2 == wer8) CHECK(r.config.k == 2);  // tie prefers the smaller k
  }

  SUBCASE("a grid containing lambda 0 can never lose to the base model") {
    TuningGrid grid;
    grid.ks = {4};
    grid.lambdas = {0.0, 0.6};
    grid.temperatures = {20.0};
    const TuneResult r = tune_retrieval(model, store, dev, grid, base, nullptr, 6);
    CHECK(r.dev_wer <= r.base_dev_wer);
  }

  SUBCASE("empty grid and empty dev are rejected") {
    TuningGrid empty;
    empty.ks.clear();
    CHECK_THROWS_AS(tune_retrieval(model, store, dev, empty, base, nullptr, 6),
                    std::invalid_argument);
    CHECK_THROWS_AS(tune_retrieval(model, store, {}, TuningGrid{}, base, nullptr, 6),
                    std::invalid_argument);
  }
}
