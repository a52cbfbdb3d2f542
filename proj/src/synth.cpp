#include "feds2t/synth.hpp"

#include "feds2t/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace feds2t {

void WorldConfig::validate() const {
  if (vocab_size < 4) throw std::invalid_argument("vocab_size must be >= 4");
  if (feature_dim < 1) throw std::invalid_argument("feature_dim must be >= 1");
  if (num_clients < 1) throw std::invalid_argument("num_clients must be >= 1");
  if (invisible_clients < 0)
    throw std::invalid_argument("invisible_clients must be >= 0");
  if (train_per_client < 1 || dev_per_client < 1 || test_per_client < 1)
    throw std::invalid_argument("split sizes must be >= 1");
  if (noise_std < 0) throw std::invalid_argument("noise_std must be >= 0");
  if (min_len < 1 || max_len < min_len)
    throw std::invalid_argument("need 1 <= min_len <= max_len");
}

Matrix token_prototypes(const WorldConfig& config) {
  config.validate();
  StreamRng rng(config.seed, "prototypes");
  Matrix p(config.vocab_size, config.feature_dim);
  rng.fill_gaussian(p);
  return p;
}

Matrix client_accent(const WorldConfig& config, int client_id) {
  config.validate();
  Matrix m = Matrix::Identity(config.feature_dim, config.feature_dim);
  if (client_id < 0 || config.accent_strength == 0) return m;
  StreamRng rng(config.seed, "accent", {static_cast<std::uint64_t>(client_id)});
  Matrix g(config.feature_dim, config.feature_dim);
  rng.fill_gaussian(g);
  return m + config.accent_strength * g;
}

Vector client_token_probs(const WorldConfig& config, int client_id) {
  config.validate();
  const int real = config.vocab_size - kFirstRealToken;
  Vector logits = Vector::Zero(real);
  if (client_id >= 0 && config.domain_bias != 0) {
    StreamRng rng(config.seed, "domain", {static_cast<std::uint64_t>(client_id)});
    for (int i = 0; i < real; ++i) logits(i) = config.domain_bias * rng.gaussian();
  }
  logits.array() -= logits.maxCoeff();
  Vector p = Vector::Zero(config.vocab_size);
  p.tail(real) = logits.array().exp();
  p /= p.sum();
  return p;
}

namespace {

TokenId sample_token(const Vector& probs, StreamRng& rng) {
  const double u = rng.uniform();
  double acc = 0;
  for (Index v = kFirstRealToken; v < probs.size(); ++v) {
    acc += probs(v);
    if (u < acc) return static_cast<TokenId>(v);
  }
  return static_cast<TokenId>(probs.size() - 1);
}

Example make_example(const WorldConfig& config, const Matrix& prototypes,
                     const Matrix& accent, const Vector& probs, StreamRng& rng) {
  const int len =
      config.min_len + static_cast<int>(rng.uniform_int(
                           static_cast<std::uint64_t>(config.max_len - config.min_len + 1)));
  Example ex;
  ex.tokens.resize(len);
  ex.frames.resize(config.feature_dim, len);
  for (int t = 0; t < len; ++t) {
    ex.tokens[t] = sample_token(probs, rng);
    Vector noise(config.feature_dim);
    rng.fill_gaussian(noise, config.noise_std);
    ex.frames.col(t) = accent * prototypes.row(ex.tokens[t]).transpose() + noise;
  }
  // Quantize to wire precision so memory and the dataset file agree exactly.
  ex.frames = ex.frames.cast<float>().cast<double>();
  return ex;
}

std::vector<Example> make_split(const WorldConfig& config, const Matrix& prototypes,
                                const Matrix& accent, const Vector& probs,
                                int client_id, int split, int count) {
  std::vector<Example> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    StreamRng rng(config.seed, "example",
                  {static_cast<std::uint64_t>(client_id + 1),
                   static_cast<std::uint64_t>(split),
                   static_cast<std::uint64_t>(i)});
    out.push_back(make_example(config, prototypes, accent, probs, rng));
  }
  return out;
}

ClientDataset make_client(const WorldConfig& config, const Matrix& prototypes,
                          int client_id, int train, int dev, int test) {
  const Matrix accent = client_accent(config, client_id);
  const Vector probs = client_token_probs(config, client_id);
  ClientDataset c;
  c.client_id = client_id;
  c.train = make_split(config, prototypes, accent, probs, client_id, 0, train);
  c.dev = make_split(config, prototypes, accent, probs, client_id, 1, dev);
  c.test = make_split(config, prototypes, accent, probs, client_id, 2, test);
  return c;
}

}  // namespace

std::vector<ClientDataset> generate_world(const WorldConfig& config) {
  config.validate();
  const Matrix prototypes = token_prototypes(config);
  std::vector<ClientDataset> clients;
  const int total = config.num_clients + config.invisible_clients;
  clients.reserve(total);
  for (int c = 0; c < total; ++c)
    clients.push_back(make_client(config, prototypes, c, config.train_per_client,
                                  config.dev_per_client, config.test_per_client));
  return clients;
}

ClientDataset generate_public_dataset(const WorldConfig& config, int train,
                                      int dev, int test) {
  config.validate();
  if (train < 1 || dev < 1 || test < 1)
    throw std::invalid_argument("public split sizes must be >= 1");
  return make_client(config, token_prototypes(config), -1, train, dev, test);
}

}  // namespace feds2t
