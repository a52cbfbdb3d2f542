#pragma once

#include "feds2t/federation.hpp"
#include "feds2t/model.hpp"
#include "feds2t/retrieval.hpp"
#include "feds2t/serialize.hpp"
#include "feds2t/synth.hpp"
#include "feds2t/train.hpp"
#include "feds2t/tune.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace feds2t {

// Flat key=value configuration: one `key = value` pair per line, `#` starts
// a comment. Values keep their original spelling so a resolved dump is
// byte-stable.
struct KvConfig {
  std::map<std::string, std::string> values;

  static KvConfig from_file(const std::filesystem::path& path);

  // Accepts "key=value"; later calls win.
  void set(const std::string& assignment);
  void set(const std::string& key, const std::string& value);
  void set_default(const std::string& key, const std::string& value);

  bool has(const std::string& key) const { return values.count(key) != 0; }
  std::string get(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_ints(const std::string& key) const;      // comma list
  std::vector<double> get_doubles(const std::string& key) const;

  std::string dump() const;  // sorted "key = value" lines
};

// The method rows the experiment driver knows how to produce.
inline constexpr const char* kMethodPublic = "P-S2T";
inline constexpr const char* kMethodCentralFull = "C-S2T-FULL";
inline constexpr const char* kMethodCentralLora = "C-S2T-LORA";
inline constexpr const char* kMethodFedAvg = "FEDAVG";
inline constexpr const char* kMethodFedLora = "FEDLORA";

struct ExperimentConfig {
  KvConfig kv;  // fully resolved (defaults filled in)

  WorldConfig world;
  ModelConfig model;

  TrainOptions pretrain_opts;
  int pretrain_train = 256, pretrain_dev = 64, pretrain_test = 64;

  FederationConfig fed;        // mode is set per method when used
  TrainOptions central_opts;

  RetrievalConfig mem;         // backend template; k/lambda/T come from tuning
  int mem_ncluster = 0;        // 0 = ceil(sqrt(N)) per datastore
  int mem_subquantizers = 2;
  int mem_kmeans_iters = 10;
  TuningGrid grid;

  int eval_beam = 5;
  int eval_max_len = 16;

  std::string method = kMethodFedLora;
  bool fedmem = true;
  bool timing = false;
  std::filesystem::path out_dir = "out";

  // Parses and validates; unknown keys are rejected to catch typos.
  static ExperimentConfig from_kv(KvConfig kv);
  static ExperimentConfig load(const std::filesystem::path& config_path,
                               const std::vector<std::string>& overrides);
};

// Well-known artifact locations under out_dir.
struct ExperimentPaths {
  explicit ExperimentPaths(const ExperimentConfig& config);

  std::filesystem::path out_dir, resolved_config, world_records, world_frames,
      backbone, pretrain_log;

  std::filesystem::path model_checkpoint(const std::string& method) const;
  std::filesystem::path adapter_checkpoint(const std::string& method) const;
  std::filesystem::path metrics_log(const std::string& method) const;
  std::filesystem::path ledger_csv(const std::string& method) const;
  std::filesystem::path datastore(const std::string& method, int client_id) const;
  std::filesystem::path index(const std::string& method, int client_id) const;
  std::filesystem::path tuned_config(const std::string& method, int client_id) const;
  std::filesystem::path results_csv() const;
  std::filesystem::path generalize_csv() const;
  std::filesystem::path report_txt() const;
  std::filesystem::path timings_txt() const;
};

// One row of the results table.
struct MethodResult {
  std::string method;                  // e.g. "FEDLORA" or "FEDLORA+FedMem"
  std::int64_t tuned_params = 0;
  std::int64_t total_params = 0;
  std::vector<double> client_wer;      // per visible client, ascending id
  double mean_wer = 0;                 // unweighted mean over clients
  std::optional<int> rounds;           // federated methods only
  std::optional<std::uint64_t> total_bytes;
};

std::string results_csv(const std::vector<MethodResult>& rows, int num_clients);

// Generates (or loads) the world and writes the dataset files.
WorldFile cmd_gen_data(const ExperimentConfig& config);

struct PretrainResult {
  double public_dev_wer_init = 0;
  double public_dev_wer_final = 0;
};

// Trains the public backbone on the server-side split and writes the FS2T
// checkpoint plus a small log.
PretrainResult cmd_pretrain(const ExperimentConfig& config);

// Runs config.method (plus the +FedMem row when enabled), writes results.csv
// and all per-method artifacts, and returns the table rows.
std::vector<MethodResult> cmd_run(const ExperimentConfig& config);

// Lower-level pieces, each reading its inputs from out_dir.
FederationResult cmd_federate(const ExperimentConfig& config,
                              const std::string& method);
ParameterSet cmd_centralize(const ExperimentConfig& config,
                            const std::string& method);
void cmd_build_datastore(const ExperimentConfig& config, const std::string& method);
std::vector<TuneResult> cmd_tune_mem(const ExperimentConfig& config,
                                     const std::string& method);
std::vector<MethodResult> cmd_evaluate(const ExperimentConfig& config,
                                       const std::string& method);

struct GeneralizeRow {
  std::string method;
  int client_id = 0;
  double global_wer = 0;
  double fedmem_wer = 0;
  RetrievalConfig tuned;
};

// Invisible-client workflow: evaluate the trained global model as-is, then
// build a datastore from the held-out client's own train split, tune, and
// evaluate retrieval-augmented decoding.
std::vector<GeneralizeRow> cmd_generalize(const ExperimentConfig& config,
                                          const std::string& method);

// Re-reads artifacts and writes a summary table with the measured-vs-
// predicted communication cost cross-check.
std::string cmd_report(const ExperimentConfig& config);

}  // namespace feds2t
