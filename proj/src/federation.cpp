#include "feds2t/federation.hpp"

#include "feds2t/eval.hpp"
#include "feds2t/serialize.hpp"
#include "feds2t/train.hpp"

#include <functional>
#include <stdexcept>

namespace feds2t {

namespace {

TrainOptions local_train_options(const FederationConfig& config) {
  TrainOptions opts;
  opts.epochs = config.local_epochs;
  opts.batch_size = config.batch_size;
  opts.lr = config.lr;
  opts.adam = config.adam;
  return opts;
}

StreamRng shuffle_stream(const FederationConfig& config, int round, int client_id) {
  return StreamRng(config.seed, "local_shuffle",
                   {static_cast<std::uint64_t>(round),
                    static_cast<std::uint64_t>(client_id)});
}

}  // namespace

ParameterSet local_update(const ClientDataset& client, ParameterSet payload,
                          const FederationConfig& config, int round) {
  if (client.train.empty()) throw std::invalid_argument("client has no train data");
  StreamRng rng = shuffle_stream(config, round, client.client_id);
  return train_full(std::move(payload), client.train, local_train_options(config),
                    rng);
}

LoraAdapter local_update(const ClientDataset& client, LoraAdapter payload,
                         const ParameterSet& backbone,
                         const FederationConfig& config, int round) {
  if (client.train.empty()) throw std::invalid_argument("client has no train data");
  StreamRng rng = shuffle_stream(config, round, client.client_id);
  return train_lora(backbone, std::move(payload), client.train,
                    local_train_options(config), rng);
}

namespace {

struct Hooks {
  // Everything run_federation needs that differs between the two modes.
  std::function<Bytes()> serialize_payload;
  std::function<void(const Bytes&)> install_payload;  // wire round-trip
  std::function<void(int client, int round)> update_client;  // fills slot
  std::function<void(const std::vector<double>& weights)> aggregate_round;
  std::function<ParameterSet()> eval_model;
  std::function<void()> remember_best;
};

}  // namespace

FederationResult run_federation(const std::vector<ClientDataset>& clients,
                                const ModelConfig& model_config,
                                const ParameterSet& backbone,
                                const FederationConfig& config) {
  config.validate();
  if (clients.empty()) throw std::invalid_argument("no clients");
  if (config.num_clients != static_cast<int>(clients.size()))
    throw std::invalid_argument("num_clients does not match client list");

  FederationResult result;

  // One-time backbone distribution; everyone works from the wire copy so the
  // simulation sees exactly what the transport carried.
  const Bytes backbone_bytes = serialize_parameters(model_config, backbone);
  result.ledger.h_theta = backbone_bytes.size();
  for (const ClientDataset& c : clients)
    result.ledger.add(0, Direction::kDown, c.client_id, backbone_bytes.size());
  const ParameterSet wire_backbone = deserialize_parameters(backbone_bytes).second;

  std::vector<double> weights;
  weights.reserve(clients.size());
  for (const ClientDataset& c : clients)
    weights.push_back(static_cast<double>(c.train.size()));

  const bool lora = config.mode == FedMode::kLora;

  // Mode-specific payload plumbing.
  ParameterSet full_payload;
  LoraAdapter lora_payload;
  std::vector<ParameterSet> full_updates(clients.size());
  std::vector<LoraAdapter> lora_updates(clients.size());
  ParameterSet best_model;
  std::optional<LoraAdapter> best_adapter;

  if (lora) {
    StreamRng init_rng(config.seed, "lora_init");
    lora_payload = init_adapter(model_config, init_rng);
    result.ledger.h_delta =
        serialize_adapter(model_config, lora_payload).size();
  } else {
    full_payload = wire_backbone;
  }

  Hooks hooks;
  if (lora) {
    hooks.serialize_payload = [&] {
      return serialize_adapter(model_config, lora_payload);
    };
    hooks.install_payload = [&](const Bytes& b) {
      lora_payload = deserialize_adapter(b).second;
    };
    hooks.update_client = [&](int i, int round) {
      lora_updates[i] = local_update(clients[i], lora_payload,
                                     wire_backbone, config, round);
    };
    hooks.aggregate_round = [&](const std::vector<double>& w) {
      std::vector<LoraAdapter> received;
      received.reserve(lora_updates.size());
      for (const LoraAdapter& u : lora_updates)
        received.push_back(deserialize_adapter(serialize_adapter(model_config, u))
                               .second);
      lora_payload = aggregate(received, w);
    };
    hooks.eval_model = [&] { return merge(wire_backbone, lora_payload); };
    hooks.remember_best = [&] {
      best_adapter = lora_payload;
      best_model = merge(wire_backbone, lora_payload);
    };
  } else {
    hooks.serialize_payload = [&] {
      return serialize_parameters(model_config, full_payload);
    };
    hooks.install_payload = [&](const Bytes& b) {
      full_payload = deserialize_parameters(b).second;
    };
    hooks.update_client = [&](int i, int round) {
      full_updates[i] =
          local_update(clients[i], full_payload, config, round);
    };
    hooks.aggregate_round = [&](const std::vector<double>& w) {
      std::vector<ParameterSet> received;
      received.reserve(full_updates.size());
      for (const ParameterSet& u : full_updates)
        received.push_back(
            deserialize_parameters(serialize_parameters(model_config, u)).second);
      full_payload = aggregate(received, w);
    };
    hooks.eval_model = [&] { return full_payload; };
    hooks.remember_best = [&] { best_model = full_payload; };
  }

  const EvalOptions dev_eval{1, config.eval_max_len, nullptr};
  double dev_weight_total = 0;
  for (const ClientDataset& c : clients)
    dev_weight_total += static_cast<double>(c.dev.size());

  auto evaluate_round = [&](int round) {
    RoundRecord rec;
    rec.round = round;
    const ParameterSet model = hooks.eval_model();
    double pooled = 0;
    for (const ClientDataset& c : clients) {
      const double w = split_wer(model, c.dev, dev_eval);
      rec.client_dev_wer.push_back(w);
      pooled += static_cast<double>(c.dev.size()) * w;
    }
    rec.pooled_dev_wer = pooled / dev_weight_total;
    return rec;
  };

  int& best_round = result.best_round;
  double& best_wer = result.best_dev_wer;
  int since_improvement = 0;

  // Round 0: the initial model sets the patience baseline.
  RoundRecord rec0 = evaluate_round(0);
  rec0.bytes_down = backbone_bytes.size() * clients.size();
  rec0.improved = true;
  best_round = 0;
  best_wer = rec0.pooled_dev_wer;
  hooks.remember_best();
  result.rounds.push_back(std::move(rec0));

  for (int round = 1; round <= config.max_rounds; ++round) {
    const Bytes down = hooks.serialize_payload();
    for (const ClientDataset& c : clients)
      result.ledger.add(round, Direction::kDown, c.client_id, down.size());
    hooks.install_payload(down);  // clients train on the wire copy

    std::uint64_t bytes_up = 0;
    for (std::size_t i = 0; i < clients.size(); ++i) {
      hooks.update_client(static_cast<int>(i), round);
      const Bytes up = lora ? serialize_adapter(model_config, lora_updates[i])
                            : serialize_parameters(model_config, full_updates[i]);
      result.ledger.add(round, Direction::kUp, clients[i].client_id, up.size());
      bytes_up += up.size();
    }
    hooks.aggregate_round(weights);

    RoundRecord rec = evaluate_round(round);
    rec.bytes_down = static_cast<std::uint64_t>(down.size()) * clients.size();
    rec.bytes_up = bytes_up;
    rec.improved = rec.pooled_dev_wer < best_wer;
    if (rec.improved) {
      best_wer = rec.pooled_dev_wer;
      best_round = round;
      since_improvement = 0;
      hooks.remember_best();
    } else {
      ++since_improvement;
    }
    result.rounds.push_back(std::move(rec));
    result.rounds_run = round;
    if (since_improvement >= config.patience) break;
  }

  result.global_model = std::move(best_model);
  result.global_adapter = std::move(best_adapter);
  return result;
}

}  // namespace feds2t
