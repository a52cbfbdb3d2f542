#include "feds2t/experiment.hpp"

#include "feds2t/beam.hpp"
#include "feds2t/eval.hpp"
#include "feds2t/wer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace feds2t {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

KvConfig KvConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path.string());
  KvConfig kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": expected key = value");
    kv.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return kv;
}

void KvConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("override must look like key=value: " + assignment);
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void KvConfig::set(const std::string& key, const std::string& value) {
  if (key.empty()) throw std::invalid_argument("empty config key");
  values[key] = value;
}

void KvConfig::set_default(const std::string& key, const std::string& value) {
  values.emplace(key, value);
}

std::string KvConfig::get(const std::string& key) const {
  const auto it = values.find(key);
  if (it == values.end()) throw std::runtime_error("missing config key: " + key);
  return it->second;
}

int KvConfig::get_int(const std::string& key) const {
  try {
    return std::stoi(get(key));
  } catch (const std::logic_error&) {
    throw std::runtime_error("config key " + key + " is not an integer");
  }
}

double KvConfig::get_double(const std::string& key) const {
  try {
    return std::stod(get(key));
  } catch (const std::logic_error&) {
    throw std::runtime_error("config key " + key + " is not a number");
  }
}

std::uint64_t KvConfig::get_u64(const std::string& key) const {
  try {
    return std::stoull(get(key));
  } catch (const std::logic_error&) {
    throw std::runtime_error("config key " + key + " is not an unsigned integer");
  }
}

bool KvConfig::get_bool(const std::string& key) const {
  const std::string v = get(key);
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw std::runtime_error("config key " + key + " is not a boolean");
}

std::vector<int> KvConfig::get_ints(const std::string& key) const {
  std::vector<int> out;
  std::istringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(trim(item)));
  if (out.empty()) throw std::runtime_error("config key " + key + " is empty");
  return out;
}

std::vector<double> KvConfig::get_doubles(const std::string& key) const {
  std::vector<double> out;
  std::istringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(trim(item)));
  if (out.empty()) throw std::runtime_error("config key " + key + " is empty");
  return out;
}

std::string KvConfig::dump() const {
  std::ostringstream out;
  for (const auto& [k, v] : values) out << k << " = " << v << "\n";
  return out.str();
}

namespace {

// Every key the driver understands, with its default. Defaults that mirror
// the operating points documented alongside the CLI: beam 5, patience 5,
// local epoch 1, k in {4,8,16}, lambda in {0.1..0.9}, T in {10..200}.
const std::vector<std::pair<const char*, const char*>>& default_keys() {
  static const std::vector<std::pair<const char*, const char*>> defaults = {
      {"world.seed", "1"},
      {"world.vocab_size", "32"},
      {"world.feature_dim", "8"},
      {"world.clients", "4"},
      {"world.invisible_clients", "0"},
      {"world.train_per_client", "150"},
      {"world.dev_per_client", "40"},
      {"world.test_per_client", "40"},
      {"world.accent_strength", "0.5"},
      {"world.noise_std", "0.1"},
      {"world.domain_bias", "1.5"},
      {"world.min_len", "1"},
      {"world.max_len", "2"},
      {"model.hidden_dim", "32"},
      {"model.lora_targets", "enc,q,h,o"},
      {"model.lora_rank", "2"},
      {"model.lora_alpha", "4"},
      {"pretrain.train", "400"},
      {"pretrain.dev", "80"},
      {"pretrain.test", "80"},
      {"pretrain.epochs", "30"},
      {"pretrain.batch", "16"},
      {"pretrain.lr", "0.02"},
      {"fed.rounds", "12"},
      {"fed.patience", "5"},
      {"fed.epochs", "1"},
      {"fed.batch", "8"},
      {"fed.lr", "0.02"},
      {"central.epochs", "8"},
      {"central.batch", "8"},
      {"central.lr", "0.02"},
      {"mem.backend", "exact"},
      {"mem.ncluster", "0"},
      {"mem.subquantizers", "2"},
      {"mem.nprobe", "8"},
      {"mem.kmeans_iters", "10"},
      {"mem.grid_k", "4,8,16"},
      {"mem.grid_lambda", "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"},
      {"mem.grid_temp", "10,20,50,100,200"},
      {"eval.beam", "5"},
      {"eval.max_len", "8"},
      {"run.method", "FEDLORA"},
      {"run.fedmem", "1"},
      {"run.timing", "0"},
      {"run.out_dir", "out"},
  };
  return defaults;
}

std::uint32_t parse_lora_targets(const std::string& spec) {
  std::uint32_t mask = 0;
  if (trim(spec) == "none" || trim(spec).empty()) return 0;
  std::istringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string t = trim(item);
    if (t == "enc") mask |= static_cast<std::uint32_t>(LoraTarget::kEnc);
    else if (t == "q") mask |= static_cast<std::uint32_t>(LoraTarget::kQ);
    else if (t == "h") mask |= static_cast<std::uint32_t>(LoraTarget::kH);
    else if (t == "o") mask |= static_cast<std::uint32_t>(LoraTarget::kO);
    else throw std::runtime_error("unknown LoRA target: " + t);
  }
  return mask;
}

const std::set<std::string>& known_methods() {
  static const std::set<std::string> methods = {
      kMethodPublic, kMethodCentralFull, kMethodCentralLora, kMethodFedAvg,
      kMethodFedLora, "ALL"};
  return methods;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_kv(KvConfig kv) {
  std::set<std::string> known;
  for (const auto& [key, value] : default_keys()) {
    known.insert(key);
    kv.set_default(key, value);
  }
  for (const auto& [key, value] : kv.values)
    if (!known.count(key)) throw std::runtime_error("unknown config key: " + key);

  ExperimentConfig c;
  c.world.seed = kv.get_u64("world.seed");
  c.world.vocab_size = kv.get_int("world.vocab_size");
  c.world.feature_dim = kv.get_int("world.feature_dim");
  c.world.num_clients = kv.get_int("world.clients");
  c.world.invisible_clients = kv.get_int("world.invisible_clients");
  c.world.train_per_client = kv.get_int("world.train_per_client");
  c.world.dev_per_client = kv.get_int("world.dev_per_client");
  c.world.test_per_client = kv.get_int("world.test_per_client");
  c.world.accent_strength = kv.get_double("world.accent_strength");
  c.world.noise_std = kv.get_double("world.noise_std");
  c.world.domain_bias = kv.get_double("world.domain_bias");
  c.world.min_len = kv.get_int("world.min_len");
  c.world.max_len = kv.get_int("world.max_len");
  c.world.validate();

  c.model.feature_dim = c.world.feature_dim;
  c.model.hidden_dim = kv.get_int("model.hidden_dim");
  c.model.vocab_size = c.world.vocab_size;
  c.model.lora_targets = parse_lora_targets(kv.get("model.lora_targets"));
  c.model.lora_rank = kv.get_int("model.lora_rank");
  c.model.lora_alpha = kv.get_double("model.lora_alpha");
  c.model.validate();

  c.pretrain_train = kv.get_int("pretrain.train");
  c.pretrain_dev = kv.get_int("pretrain.dev");
  c.pretrain_test = kv.get_int("pretrain.test");
  c.pretrain_opts.epochs = kv.get_int("pretrain.epochs");
  c.pretrain_opts.batch_size = kv.get_int("pretrain.batch");
  c.pretrain_opts.lr = kv.get_double("pretrain.lr");

  c.fed.num_clients = c.world.num_clients;
  c.fed.max_rounds = kv.get_int("fed.rounds");
  c.fed.patience = kv.get_int("fed.patience");
  c.fed.local_epochs = kv.get_int("fed.epochs");
  c.fed.batch_size = kv.get_int("fed.batch");
  c.fed.lr = kv.get_double("fed.lr");
  c.fed.seed = c.world.seed;
  c.fed.eval_max_len = kv.get_int("eval.max_len");
  c.fed.validate();

  c.central_opts.epochs = kv.get_int("central.epochs");
  c.central_opts.batch_size = kv.get_int("central.batch");
  c.central_opts.lr = kv.get_double("central.lr");

  const std::string backend = kv.get("mem.backend");
  if (backend == "exact") c.mem.backend = RetrievalBackend::kExact;
  else if (backend == "ivfpq") c.mem.backend = RetrievalBackend::kIvfPq;
  else throw std::runtime_error("mem.backend must be exact or ivfpq");
  c.mem.nprobe = kv.get_int("mem.nprobe");
  c.mem_ncluster = kv.get_int("mem.ncluster");
  c.mem_subquantizers = kv.get_int("mem.subquantizers");
  c.mem_kmeans_iters = kv.get_int("mem.kmeans_iters");
  c.grid.ks = kv.get_ints("mem.grid_k");
  c.grid.lambdas = kv.get_doubles("mem.grid_lambda");
  c.grid.temperatures = kv.get_doubles("mem.grid_temp");

  c.eval_beam = kv.get_int("eval.beam");
  c.eval_max_len = kv.get_int("eval.max_len");
  if (c.eval_beam < 1) throw std::runtime_error("eval.beam must be >= 1");

  c.method = kv.get("run.method");
  if (!known_methods().count(c.method))
    throw std::runtime_error("unknown run.method: " + c.method);
  c.fedmem = kv.get_bool("run.fedmem");
  c.timing = kv.get_bool("run.timing");
  c.out_dir = kv.get("run.out_dir");

  c.kv = std::move(kv);
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& config_path,
                                        const std::vector<std::string>& overrides) {
  KvConfig kv;
  if (!config_path.empty()) kv = KvConfig::from_file(config_path);
  for (const std::string& o : overrides) kv.set(o);
  return from_kv(std::move(kv));
}

ExperimentPaths::ExperimentPaths(const ExperimentConfig& config)
    : out_dir(config.out_dir),
      resolved_config(out_dir / "resolved.cfg"),
      world_records(out_dir / "world.records"),
      world_frames(out_dir / "world.frames"),
      backbone(out_dir / "backbone.fs2t"),
      pretrain_log(out_dir / "pretrain.log") {}

std::filesystem::path ExperimentPaths::model_checkpoint(const std::string& m) const {
  return out_dir / ("model_" + m + ".fs2t");
}
std::filesystem::path ExperimentPaths::adapter_checkpoint(const std::string& m) const {
  return out_dir / ("adapter_" + m + ".flra");
}
std::filesystem::path ExperimentPaths::metrics_log(const std::string& m) const {
  return out_dir / ("metrics_" + m + ".log");
}
std::filesystem::path ExperimentPaths::ledger_csv(const std::string& m) const {
  return out_dir / ("ledger_" + m + ".csv");
}
std::filesystem::path ExperimentPaths::datastore(const std::string& m,
                                                 int client_id) const {
  return out_dir / ("datastore_" + m + "_c" + std::to_string(client_id) + ".fmem");
}
std::filesystem::path ExperimentPaths::index(const std::string& m,
                                             int client_id) const {
  return out_dir / ("index_" + m + "_c" + std::to_string(client_id) + ".fivf");
}
std::filesystem::path ExperimentPaths::tuned_config(const std::string& m,
                                                    int client_id) const {
  return out_dir / ("tuned_" + m + "_c" + std::to_string(client_id) + ".cfg");
}
std::filesystem::path ExperimentPaths::results_csv() const {
  return out_dir / "results.csv";
}
std::filesystem::path ExperimentPaths::generalize_csv() const {
  return out_dir / "generalize.csv";
}
std::filesystem::path ExperimentPaths::report_txt() const {
  return out_dir / "report.txt";
}
std::filesystem::path ExperimentPaths::timings_txt() const {
  return out_dir / "timings.txt";
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void prepare_out_dir(const ExperimentConfig& config, const ExperimentPaths& paths) {
  std::filesystem::create_directories(paths.out_dir);
  write_text(paths.resolved_config, config.kv.dump());
}

WorldFile load_world_files(const ExperimentPaths& paths) {
  if (!std::filesystem::exists(paths.world_records))
    throw std::runtime_error("missing dataset files; run gen-data first: " +
                             paths.world_records.string());
  return load_world(paths.world_records, paths.world_frames);
}

std::pair<ModelConfig, ParameterSet> load_backbone(const ExperimentPaths& paths) {
  if (!std::filesystem::exists(paths.backbone))
    throw std::runtime_error("missing backbone checkpoint; run pretrain first: " +
                             paths.backbone.string());
  return deserialize_parameters(read_bytes(paths.backbone));
}

void check_model_config(const ModelConfig& expected, const ModelConfig& loaded,
                        const std::string& what) {
  if (expected.feature_dim != loaded.feature_dim ||
      expected.hidden_dim != loaded.hidden_dim ||
      expected.vocab_size != loaded.vocab_size ||
      expected.lora_targets != loaded.lora_targets ||
      expected.lora_rank != loaded.lora_rank ||
      std::abs(expected.lora_alpha - loaded.lora_alpha) > 1e-6)
    throw std::runtime_error("config inconsistency: " + what +
                             " does not match the experiment config");
}

std::vector<ClientDataset> visible_clients(const WorldFile& world,
                                           const ExperimentConfig& config) {
  std::vector<ClientDataset> out;
  for (const ClientDataset& c : world.clients)
    if (c.client_id < config.world.num_clients) out.push_back(c);
  if (static_cast<int>(out.size()) != config.world.num_clients)
    throw std::runtime_error("dataset files hold fewer clients than configured");
  return out;
}

std::vector<ClientDataset> invisible_clients_of(const WorldFile& world,
                                                const ExperimentConfig& config) {
  std::vector<ClientDataset> out;
  for (const ClientDataset& c : world.clients)
    if (c.client_id >= config.world.num_clients) out.push_back(c);
  return out;
}

WorldFile ensure_world(const ExperimentConfig& config, const ExperimentPaths& paths) {
  if (std::filesystem::exists(paths.world_records))
    return load_world(paths.world_records, paths.world_frames);
  WorldFile world;
  world.vocab_size = config.world.vocab_size;
  world.feature_dim = config.world.feature_dim;
  world.clients = generate_world(config.world);
  world.public_set = generate_public_dataset(
      config.world, config.pretrain_train, config.pretrain_dev, config.pretrain_test);
  save_world(paths.world_records, paths.world_frames, world);
  return world;
}

ParameterSet model_for_method(const ExperimentConfig& config,
                              const ExperimentPaths& paths,
                              const std::string& method) {
  if (method == kMethodPublic) {
    auto [loaded_config, params] = load_backbone(paths);
    check_model_config(config.model, loaded_config, "backbone checkpoint");
    return params;
  }
  const auto path = paths.model_checkpoint(method);
  if (!std::filesystem::exists(path))
    throw std::runtime_error("missing model checkpoint for " + method + ": " +
                             path.string());
  auto [loaded_config, params] = deserialize_parameters(read_bytes(path));
  check_model_config(config.model, loaded_config, "model checkpoint " + method);
  return params;
}

FedMode mode_for_method(const std::string& method) {
  if (method == kMethodFedAvg) return FedMode::kFull;
  if (method == kMethodFedLora) return FedMode::kLora;
  throw std::runtime_error("not a federated method: " + method);
}

std::string metrics_log_text(const FederationResult& result) {
  std::ostringstream out;
  for (const RoundRecord& r : result.rounds) {
    out << "round=" << r.round << " pooled_dev_wer=" << fmt(r.pooled_dev_wer)
        << " improved=" << (r.improved ? 1 : 0) << " bytes_down=" << r.bytes_down
        << " bytes_up=" << r.bytes_up << " client_dev_wer=";
    for (std::size_t i = 0; i < r.client_dev_wer.size(); ++i) {
      if (i) out << ',';
      out << fmt(r.client_dev_wer[i]);
    }
    out << "\n";
  }
  return out.str();
}

std::string ledger_csv_text(const CommLedger& ledger) {
  std::ostringstream out;
  out << "round,direction,client_id,bytes\n";
  for (const auto& e : ledger.entries)
    out << e.round << ',' << (e.direction == Direction::kDown ? "down" : "up")
        << ',' << e.client_id << ',' << e.bytes << "\n";
  return out.str();
}

struct FedSummary {
  int rounds = 0;
  int best_round = 0;
  std::uint64_t total_bytes = 0;
  std::uint64_t h_theta = 0;
  std::uint64_t h_delta = 0;
  double best_dev_wer = 0;
};

std::filesystem::path summary_path(const ExperimentPaths& paths,
                                   const std::string& method) {
  return paths.out_dir / ("summary_" + method + ".cfg");
}

void write_fed_summary(const ExperimentPaths& paths, const std::string& method,
                       const FederationResult& result) {
  std::ostringstream out;
  out << "best_dev_wer = " << fmt(result.best_dev_wer) << "\n"
      << "best_round = " << result.best_round << "\n"
      << "h_delta = " << result.ledger.h_delta << "\n"
      << "h_theta = " << result.ledger.h_theta << "\n"
      << "rounds = " << result.rounds_run << "\n"
      << "total_bytes = " << result.ledger.total_bytes() << "\n";
  write_text(summary_path(paths, method), out.str());
}

FedSummary read_fed_summary(const ExperimentPaths& paths, const std::string& method) {
  const auto path = summary_path(paths, method);
  if (!std::filesystem::exists(path))
    throw std::runtime_error("missing federation summary; run federate first: " +
                             path.string());
  const KvConfig kv = KvConfig::from_file(path);
  FedSummary s;
  s.rounds = kv.get_int("rounds");
  s.best_round = kv.get_int("best_round");
  s.total_bytes = kv.get_u64("total_bytes");
  s.h_theta = kv.get_u64("h_theta");
  s.h_delta = kv.get_u64("h_delta");
  s.best_dev_wer = kv.get_double("best_dev_wer");
  return s;
}

int auto_ncluster(const ExperimentConfig& config, Index store_size) {
  int n = config.mem_ncluster > 0
              ? config.mem_ncluster
              : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(store_size))));
  return std::max(1, std::min<int>(n, static_cast<int>(store_size)));
}

RetrievalConfig read_tuned_config(const ExperimentPaths& paths,
                                  const std::string& method, int client_id,
                                  const RetrievalConfig& base) {
  const auto path = paths.tuned_config(method, client_id);
  if (!std::filesystem::exists(path))
    throw std::runtime_error("missing tuned retrieval config; run tune-mem first: " +
                             path.string());
  const KvConfig kv = KvConfig::from_file(path);
  RetrievalConfig cfg = base;
  cfg.k = kv.get_int("k");
  cfg.lambda = kv.get_double("lambda");
  cfg.temperature = kv.get_double("temperature");
  return cfg;
}

}  // namespace

std::string results_csv(const std::vector<MethodResult>& rows, int num_clients) {
  std::ostringstream out;
  out << "method,tuned_params,total_params";
  for (int c = 0; c < num_clients; ++c) out << ",wer_c" << c;
  out << ",mean_wer,rounds,total_bytes\n";
  for (const MethodResult& r : rows) {
    out << r.method << ',' << r.tuned_params << ',' << r.total_params;
    for (double w : r.client_wer) out << ',' << fmt(w);
    out << ',' << fmt(r.mean_wer);
    out << ',' << (r.rounds ? std::to_string(*r.rounds) : std::string("-"));
    out << ','
        << (r.total_bytes ? std::to_string(*r.total_bytes) : std::string("-"));
    out << "\n";
  }
  return out.str();
}

WorldFile cmd_gen_data(const ExperimentConfig& config) {
  const ExperimentPaths paths(config);
  prepare_out_dir(config, paths);
  WorldFile world;
  world.vocab_size = config.world.vocab_size;
  world.feature_dim = config.world.feature_dim;
  world.clients = generate_world(config.world);
  world.public_set = generate_public_dataset(
      config.world, config.pretrain_train, config.pretrain_dev, config.pretrain_test);
  save_world(paths.world_records, paths.world_frames, world);
  return world;
}

PretrainResult cmd_pretrain(const ExperimentConfig& config) {
  const ExperimentPaths paths(config);
  prepare_out_dir(config, paths);
  const WorldFile world = ensure_world(config, paths);
  if (!world.public_set)
    throw std::runtime_error("dataset files carry no public split");

  StreamRng init_rng(config.world.seed, "model_init");
  ParameterSet params = init_parameters(config.model, init_rng);

  const EvalOptions greedy{1, config.eval_max_len, nullptr};
  PretrainResult result;
  result.public_dev_wer_init = split_wer(params, world.public_set->dev, greedy);

  StreamRng train_rng(config.world.seed, "pretrain");
  params = train_full(std::move(params), world.public_set->train,
                      config.pretrain_opts, train_rng);

  const Bytes bytes = serialize_parameters(config.model, params);
  write_bytes(paths.backbone, bytes);
  // Evaluate the wire copy: downstream stages only ever see the checkpoint.
  const ParameterSet wire = deserialize_parameters(bytes).second;
  result.public_dev_wer_final = split_wer(wire, world.public_set->dev, greedy);

  std::ostringstream log;
  log << "public_dev_wer_init = " << fmt(result.public_dev_wer_init) << "\n"
      << "public_dev_wer_final = " << fmt(result.public_dev_wer_final) << "\n";
  write_text(paths.pretrain_log, log.str());
  return result;
}

FederationResult cmd_federate(const ExperimentConfig& config,
                              const std::string& method) {
  const ExperimentPaths paths(config);
  prepare_out_dir(config, paths);
  const WorldFile world = load_world_files(paths);
  auto [backbone_config, backbone] = load_backbone(paths);
  check_model_config(config.model, backbone_config, "backbone checkpoint");

  FederationConfig fed = config.fed;
  fed.mode = mode_for_method(method);
  const auto clients = visible_clients(world, config);

  FederationResult result = run_federation(clients, config.model, backbone, fed);

  write_text(paths.metrics_log(method), metrics_log_text(result));
  write_text(paths.ledger_csv(method), ledger_csv_text(result.ledger));
  write_bytes(paths.model_checkpoint(method),
              serialize_parameters(config.model, result.global_model));
  if (result.global_adapter)
    write_bytes(paths.adapter_checkpoint(method),
                serialize_adapter(config.model, *result.global_adapter));
  write_fed_summary(paths, method, result);
  return result;
}

ParameterSet cmd_centralize(const ExperimentConfig& config,
                            const std::string& method) {
  const ExperimentPaths paths(config);
  prepare_out_dir(config, paths);
  const WorldFile world = load_world_files(paths);
  auto [backbone_config, backbone] = load_backbone(paths);
  check_model_config(config.model, backbone_config, "backbone checkpoint");

  std::vector<Example> pooled;
  for (const ClientDataset& c : visible_clients(world, config))
    pooled.insert(pooled.end(), c.train.begin(), c.train.end());

  ParameterSet model;
  if (method == kMethodCentralFull) {
    StreamRng rng(config.world.seed, "central_full");
    model = train_full(backbone, pooled, config.central_opts, rng);
  } else if (method == kMethodCentralLora) {
    StreamRng init_rng(config.world.seed, "central_lora_init");
    LoraAdapter adapter = init_adapter(config.model, init_rng);
    StreamRng rng(config.world.seed, "central_lora");
    adapter = train_lora(backbone, std::move(adapter), pooled,
                         config.central_opts, rng);
    write_bytes(paths.adapter_checkpoint(method),
                serialize_adapter(config.model, adapter));
    model = merge(backbone, adapter);
  } else {
    throw std::runtime_error("not a centralized method: " + method);
  }
  write_bytes(paths.model_checkpoint(method),
              serialize_parameters(config.model, model));
  return model;
}

void cmd_build_datastore(const ExperimentConfig& config, const std::string& method) {
  const ExperimentPaths paths(config);
  prepare_out_dir(config, paths);
  const WorldFile world = load_world_files(paths);
  const ParameterSet model = model_for_method(config, paths, method);

  for (const ClientDataset& c : visible_clients(world, config)) {
    const Datastore store = build_datastore(model, c.train);
    write_bytes(paths.datastore(method, c.client_id), serialize_datastore(store));
    if (config.mem.backend == RetrievalBackend::kIvfPq) {
      const IvfPqIndex index = build_ivfpq(
          store, auto_ncluster(config, store.size()), config.mem_subquantizers,
          config.mem_kmeans_iters,
          stream_seed(config.world.seed, "ivfpq",
                      {static_cast<std::uint64_t>(c.client_id)}));
      write_bytes(paths.index(method, c.client_id), serialize_index(index));
    }
  }
}

std::vector<TuneResult> cmd_tune_mem(const ExperimentConfig& config,
                                     const std::string& method) {
  const ExperimentPaths paths(config);
  prepare_out_dir(config, paths);
  const WorldFile world = load_world_files(paths);
  const ParameterSet model = model_for_method(config, paths, method);

  std::vector<TuneResult> results;
  for (const ClientDataset& c : visible_clients(world, config)) {
    const auto store_path = paths.datastore(method, c.client_id);
    if (!std::filesystem::exists(store_path))
      throw std::runtime_error("missing datastore; run build-datastore first: " +
                               store_path.string());
    const Datastore store = deserialize_datastore(read_bytes(store_path));
    IvfPqIndex index;
    const IvfPqIndex* index_ptr = nullptr;
    if (config.mem.backend == RetrievalBackend::kIvfPq) {
      index = deserialize_index(read_bytes(paths.index(method, c.client_id)));
      index_ptr = &index;
    }
    TuneResult tuned = tune_retrieval(model, store, c.dev, config.grid, config.mem,
                                      index_ptr, config.eval_max_len);
    std::ostringstream out;
    out << "base_dev_wer = " << fmt(tuned.base_dev_wer) << "\n"
        << "dev_wer = " << fmt(tuned.dev_wer) << "\n"
        << "k = " << tuned.config.k << "\n"
        << "lambda = " << fmt(tuned.config.lambda) << "\n"
        << "temperature = " << fmt(tuned.config.temperature) << "\n";
    write_text(paths.tuned_config(method, c.client_id), out.str());
    results.push_back(std::move(tuned));
  }
  return results;
}

namespace {

MethodResult evaluate_rows_base(const ExperimentConfig& config,
                                const std::vector<ClientDataset>& clients,
                                const ParameterSet& model,
                                const std::string& method) {
  MethodResult row;
  row.method = method;
  row.total_params = config.model.backbone_params();
  if (method == kMethodCentralLora || method == kMethodFedLora) {
    row.total_params += config.model.adapter_params();
    row.tuned_params = config.model.adapter_params();
  } else if (method == kMethodCentralFull || method == kMethodFedAvg) {
    row.tuned_params = config.model.backbone_params();
  } else {
    row.tuned_params = config.model.backbone_params();  // P-S2T, paper style
  }
  const EvalOptions opts{config.eval_beam, config.eval_max_len, nullptr};
  double sum = 0;
  for (const ClientDataset& c : clients) {
    row.client_wer.push_back(split_wer(model, c.test, opts));
    sum += row.client_wer.back();
  }
  row.mean_wer = sum / static_cast<double>(clients.size());
  return row;
}

}  // namespace

std::vector<MethodResult> cmd_evaluate(const ExperimentConfig& config,
                                       const std::string& method) {
  const ExperimentPaths paths(config);
  prepare_out_dir(config, paths);
  const WorldFile world = load_world_files(paths);
  const ParameterSet model = model_for_method(config, paths, method);
  const auto clients = visible_clients(world, config);

  std::vector<MethodResult> rows;
  rows.push_back(evaluate_rows_base(config, clients, model, method));
  if (method == kMethodFedAvg || method == kMethodFedLora) {
    const FedSummary summary = read_fed_summary(paths, method);
    rows.back().rounds = summary.rounds;
    rows.back().total_bytes = summary.total_bytes;
  }

  if (!config.fedmem) return rows;

  MethodResult mem_row;
  mem_row.method = method + "+FedMem";
  mem_row.tuned_params = 0;
  mem_row.total_params = config.model.backbone_params();

  double base_seconds = 0, mem_seconds = 0;
  double sum = 0;
  for (const ClientDataset& c : clients) {
    const Datastore store =
        deserialize_datastore(read_bytes(paths.datastore(method, c.client_id)));
    IvfPqIndex index;
    const IvfPqIndex* index_ptr = nullptr;
    if (config.mem.backend == RetrievalBackend::kIvfPq) {
      index = deserialize_index(read_bytes(paths.index(method, c.client_id)));
      index_ptr = &index;
    }
    const RetrievalConfig tuned =
        read_tuned_config(paths, method, c.client_id, config.mem);
    const RetrievalContext ctx{&store, tuned, index_ptr};
    const EvalOptions opts{config.eval_beam, config.eval_max_len, &ctx};

    if (config.timing) {
      const EvalOptions base_opts{config.eval_beam, config.eval_max_len, nullptr};
      auto t0 = std::chrono::steady_clock::now();
      (void)split_wer(model, c.test, base_opts);
      auto t1 = std::chrono::steady_clock::now();
      mem_row.client_wer.push_back(split_wer(model, c.test, opts));
      auto t2 = std::chrono::steady_clock::now();
      base_seconds += std::chrono::duration<double>(t1 - t0).count();
      mem_seconds += std::chrono::duration<double>(t2 - t1).count();
    } else {
      mem_row.client_wer.push_back(split_wer(model, c.test, opts));
    }
    sum += mem_row.client_wer.back();
  }
  mem_row.mean_wer = sum / static_cast<double>(clients.size());
  rows.push_back(std::move(mem_row));

  if (config.timing) {
    // Decode-speed ratio of retrieval-augmented inference vs the plain
    // model; informational only and deliberately not part of results.csv.
    std::ostringstream out;
    out << "method = " << method << "\n"
        << "base_seconds = " << fmt(base_seconds) << "\n"
        << "fedmem_seconds = " << fmt(mem_seconds) << "\n"
        << "fedmem_speed_ratio = "
        << fmt(mem_seconds > 0 ? base_seconds / mem_seconds : 0) << "\n";
    write_text(paths.timings_txt(), out.str());
  }
  return rows;
}

std::vector<MethodResult> cmd_run(const ExperimentConfig& config) {
  const ExperimentPaths paths(config);
  prepare_out_dir(config, paths);
  cmd_gen_data(config);
  cmd_pretrain(config);

  std::vector<std::string> methods;
  if (config.method == "ALL")
    methods = {kMethodPublic, kMethodCentralFull, kMethodFedAvg,
               kMethodCentralLora, kMethodFedLora};
  else
    methods = {config.method};

  std::vector<MethodResult> rows;
  for (const std::string& method : methods) {
    if (method == kMethodFedAvg || method == kMethodFedLora)
      cmd_federate(config, method);
    else if (method == kMethodCentralFull || method == kMethodCentralLora)
      cmd_centralize(config, method);

    // In ALL mode, mirror the reference workflow: retrieval personalizes the
    // federated global models only.
    const bool mem_here =
        config.fedmem && (config.method != "ALL" || method == kMethodFedAvg ||
                          method == kMethodFedLora);
    ExperimentConfig local = config;
    local.fedmem = mem_here;
    if (mem_here) {
      cmd_build_datastore(local, method);
      cmd_tune_mem(local, method);
    }
    for (MethodResult& row : cmd_evaluate(local, method))
      rows.push_back(std::move(row));
  }
  write_text(paths.results_csv(), results_csv(rows, config.world.num_clients));
  return rows;
}

std::vector<GeneralizeRow> cmd_generalize(const ExperimentConfig& config,
                                          const std::string& method) {
  const ExperimentPaths paths(config);
  prepare_out_dir(config, paths);
  const WorldFile world = load_world_files(paths);
  const ParameterSet model = model_for_method(config, paths, method);
  const auto held_out = invisible_clients_of(world, config);

  std::vector<GeneralizeRow> rows;
  const EvalOptions base_opts{config.eval_beam, config.eval_max_len, nullptr};
  for (const ClientDataset& c : held_out) {
    GeneralizeRow row;
    row.method = method;
    row.client_id = c.client_id;
    row.global_wer = split_wer(model, c.test, base_opts);

    const Datastore store = build_datastore(model, c.train);
    IvfPqIndex index;
    const IvfPqIndex* index_ptr = nullptr;
    if (config.mem.backend == RetrievalBackend::kIvfPq) {
      index = build_ivfpq(store, auto_ncluster(config, store.size()),
                          config.mem_subquantizers, config.mem_kmeans_iters,
                          stream_seed(config.world.seed, "ivfpq",
                                      {static_cast<std::uint64_t>(c.client_id)}));
      index_ptr = &index;
    }
    const TuneResult tuned = tune_retrieval(model, store, c.dev, config.grid,
                                            config.mem, index_ptr,
                                            config.eval_max_len);
    row.tuned = tuned.config;
    const RetrievalContext ctx{&store, tuned.config, index_ptr};
    row.fedmem_wer =
        split_wer(model, c.test, EvalOptions{config.eval_beam,
                                             config.eval_max_len, &ctx});
    rows.push_back(row);
  }

  std::ostringstream out;
  out << "method,client_id,global_wer,fedmem_wer,k,lambda,temperature\n";
  for (const GeneralizeRow& r : rows)
    out << r.method << ',' << r.client_id << ',' << fmt(r.global_wer) << ','
        << fmt(r.fedmem_wer) << ',' << r.tuned.k << ',' << fmt(r.tuned.lambda)
        << ',' << fmt(r.tuned.temperature) << "\n";
  write_text(paths.generalize_csv(), out.str());
  return rows;
}

std::string cmd_report(const ExperimentConfig& config) {
  const ExperimentPaths paths(config);
  std::ostringstream out;

  if (std::filesystem::exists(paths.results_csv())) {
    std::ifstream in(paths.results_csv());
    out << "== results ==\n" << in.rdbuf() << "\n";
  }

  std::optional<FedSummary> avg, lora;
  out << "== communication cost ==\n";
  for (const char* method : {kMethodFedAvg, kMethodFedLora}) {
    if (!std::filesystem::exists(summary_path(paths, method))) continue;
    const FedSummary s = read_fed_summary(paths, method);
    const FedMode mode = mode_for_method(method);
    const double predicted =
        predicted_cost(static_cast<double>(s.h_theta),
                       static_cast<double>(s.h_delta),
                       config.world.num_clients, s.rounds, mode);
    out << method << ": rounds=" << s.rounds << " h_theta=" << s.h_theta
        << " h_delta=" << s.h_delta << " measured_bytes=" << s.total_bytes
        << " predicted_bytes=" << static_cast<std::uint64_t>(predicted)
        << " match=" << (predicted == static_cast<double>(s.total_bytes) ? "yes" : "NO")
        << "\n";
    if (method == std::string(kMethodFedAvg)) avg = s;
    else lora = s;
  }
  if (avg && lora && avg->total_bytes > 0) {
    const double reduction =
        1.0 - static_cast<double>(lora->total_bytes) /
                  static_cast<double>(avg->total_bytes);
    out << "communication reduction (FEDLORA vs FEDAVG, measured rounds): "
        << fmt(100.0 * reduction) << "%\n";
  }

  if (std::filesystem::exists(paths.generalize_csv())) {
    std::ifstream in(paths.generalize_csv());
    out << "\n== invisible clients ==\n" << in.rdbuf();
  }

  const std::string text = out.str();
  std::filesystem::create_directories(paths.out_dir);
  write_text(paths.report_txt(), text);
  return text;
}

}  // namespace feds2t
