#pragma once

#include "feds2t/model.hpp"
#include "feds2t/optim.hpp"
#include "feds2t/types.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

namespace feds2t {

// One client's private data. n_c (the aggregation weight) is the train size.
struct ClientDataset {
  int client_id = 0;
  std::vector<Example> train, dev, test;
};

enum class FedMode { kFull, kLora };

struct FederationConfig {
  int num_clients = 0;  // |C|; must match the client list
  FedMode mode = FedMode::kFull;
  int local_epochs = 1;
  int patience = 5;
  int max_rounds = 0;
  double lr = 1e-2;
  int batch_size = 8;
  std::uint64_t seed = 0;
  int eval_max_len = 16;  // greedy-decode cap for the round dev metric
  AdamConfig adam{};

  void validate() const {
    if (num_clients < 1) throw std::invalid_argument("num_clients must be >= 1");
    if (local_epochs < 1) throw std::invalid_argument("local_epochs must be >= 1");
    if (patience < 1) throw std::invalid_argument("patience must be >= 1");
    if (max_rounds < 0) throw std::invalid_argument("max_rounds must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  }
};

enum class Direction { kDown, kUp };

// Byte-exact record of every payload that crossed the simulated transport.
// Round 0 holds the one-time backbone distribution; training rounds start
// at 1. Entries are ordered (round, direction, client).
struct CommLedger {
  struct Entry {
    int round = 0;
    Direction direction = Direction::kDown;
    int client_id = 0;
    std::uint64_t bytes = 0;
  };

  std::vector<Entry> entries;
  std::uint64_t h_theta = 0;  // serialized backbone checkpoint size
  std::uint64_t h_delta = 0;  // serialized adapter checkpoint size, LORA mode

  void add(int round, Direction direction, int client_id, std::uint64_t bytes) {
    entries.push_back({round, direction, client_id, bytes});
  }

  std::uint64_t total_bytes() const {
    std::uint64_t sum = 0;
    for (const Entry& e : entries) sum += e.bytes;
    return sum;
  }

  std::uint64_t total_bytes(Direction dir) const {
    std::uint64_t sum = 0;
    for (const Entry& e : entries)
      if (e.direction == dir) sum += e.bytes;
    return sum;
  }

  std::uint64_t round_bytes(int round, Direction dir) const {
    std::uint64_t sum = 0;
    for (const Entry& e : entries)
      if (e.round == round && e.direction == dir) sum += e.bytes;
    return sum;
  }
};

// Closed-form transport bytes: the initial backbone distribution plus one
// payload down and one up per client per round. The per-round payload is the
// backbone itself in FULL mode and the adapter in LORA mode.
inline double predicted_cost(double h_theta, double h_delta, int num_clients,
                             int rounds, FedMode mode) {
  if (h_theta < 0 || h_delta < 0 || num_clients < 0 || rounds < 0)
    throw std::invalid_argument("predicted_cost arguments must be >= 0");
  const double per_round = mode == FedMode::kFull ? h_theta : h_delta;
  return h_theta * num_clients + per_round * num_clients * rounds * 2.0;
}

// One local optimization pass: local_epochs shuffled epochs of minibatch
// Adam from a fresh optimizer state. The shuffle stream is seeded by
// (seed, round, client id). FULL mode trains the payload itself.
ParameterSet local_update(const ClientDataset& client, ParameterSet payload,
                          const FederationConfig& config, int round);

// LORA mode trains only the adapter; the backbone is read-only throughout.
LoraAdapter local_update(const ClientDataset& client, LoraAdapter payload,
                         const ParameterSet& backbone,
                         const FederationConfig& config, int round);

// Weighted mean with weights n / sum(n), summed in client-index order.
// Computed as payload[0] + sum_i w_i * (payload[i] - payload[0]) so identical
// payloads aggregate to themselves exactly. LORA payloads average the a- and
// b-factors separately (the mean of products is intentionally not formed).
template <typename Payload>
Payload aggregate(const std::vector<Payload>& payloads,
                  const std::vector<double>& weights) {
  if (payloads.empty()) throw std::invalid_argument("no payloads to aggregate");
  if (payloads.size() != weights.size())
    throw std::invalid_argument("payload/weight count mismatch");
  double total = 0;
  for (double w : weights) {
    if (w < 0) throw std::invalid_argument("negative aggregation weight");
    total += w;
  }
  if (total <= 0) throw std::invalid_argument("aggregation weights sum to zero");

  const Vector base = payloads[0].to_vector();
  Vector acc = Vector::Zero(base.size());
  for (std::size_t i = 0; i < payloads.size(); ++i) {
    const Vector v = payloads[i].to_vector();
    if (v.size() != base.size())
      throw std::invalid_argument("payload shape mismatch in aggregate");
    acc += (weights[i] / total) * (v - base);
  }
  Payload out = payloads[0];
  out.set_from_vector(Vector(base + acc));
  return out;
}

struct RoundRecord {
  int round = 0;
  std::vector<double> client_dev_wer;
  double pooled_dev_wer = 0;  // dev-size-weighted mean over clients
  std::uint64_t bytes_down = 0, bytes_up = 0;
  bool improved = false;
};

struct FederationResult {
  ParameterSet global_model;                 // best round, adapter merged in
  std::optional<LoraAdapter> global_adapter; // best adapter (LORA mode)
  CommLedger ledger;
  std::vector<RoundRecord> rounds;  // rounds[0] is the initial distribution
  int rounds_run = 0;
  int best_round = 0;
  double best_dev_wer = 0;
};

// FedAvg (FULL) or federated adapter tuning (LORA) with full participation,
// dev-WER patience stopping, and byte metering of every transfer. Payloads
// travel through their serialized form, so clients and the server see the
// same 32-bit wire precision the ledger counts.
FederationResult run_federation(const std::vector<ClientDataset>& clients,
                                const ModelConfig& model_config,
                                const ParameterSet& backbone,
                                const FederationConfig& config);

}  // namespace feds2t
