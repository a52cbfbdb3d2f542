#include "feds2t/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string method;  // empty = run.method from config
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_method) {
  cmd->add_option("-c,--config", args.config_path,
                  "key=value configuration file");
  cmd->add_option("-s,--set", args.overrides,
                  "override a config key, e.g. --set fed.rounds=6")
      ->take_all();
  if (with_method)
    cmd->add_option("-m,--method", args.method,
                    "method to operate on (default: run.method)");
}

feds2t::ExperimentConfig load_config(const CommonArgs& args) {
  auto config = feds2t::ExperimentConfig::load(args.config_path, args.overrides);
  return config;
}

std::string resolve_method(const CommonArgs& args,
                           const feds2t::ExperimentConfig& config) {
  return args.method.empty() ? config.method : args.method;
}

void print_results(const std::vector<feds2t::MethodResult>& rows, int clients) {
  std::cout << feds2t::results_csv(rows, clients);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "feds2t: federated low-rank tuning + retrieval personalization on a "
      "synthetic sequence transduction task"};
  app.require_subcommand(1);

  CommonArgs args;
  auto* gen = app.add_subcommand("gen-data", "generate the client datasets");
  add_common(gen, args, false);
  auto* pre = app.add_subcommand("pretrain", "train the public backbone");
  add_common(pre, args, false);
  auto* fed = app.add_subcommand("federate", "run FEDAVG or FEDLORA rounds");
  add_common(fed, args, true);
  auto* cen = app.add_subcommand("centralize", "train C-S2T-FULL or C-S2T-LORA");
  add_common(cen, args, true);
  auto* ds = app.add_subcommand("build-datastore",
                                "build per-client datastores from a global model");
  add_common(ds, args, true);
  auto* tune = app.add_subcommand("tune-mem",
                                  "grid-search k/lambda/T on each client dev split");
  add_common(tune, args, true);
  auto* ev = app.add_subcommand("evaluate", "report per-client test WER");
  add_common(ev, args, true);
  auto* gen2 = app.add_subcommand("generalize",
                                  "datastore + retrieval on invisible clients");
  add_common(gen2, args, true);
  auto* rep = app.add_subcommand("report", "summarize artifacts in out_dir");
  add_common(rep, args, false);
  auto* run = app.add_subcommand("run", "full pipeline for run.method (or ALL)");
  add_common(run, args, false);

  CLI11_PARSE(app, argc, argv);

  try {
    const auto config = load_config(args);
    if (gen->parsed()) {
      const auto world = feds2t::cmd_gen_data(config);
      std::cout << "wrote " << world.clients.size() << " clients + public split to "
                << config.out_dir.string() << "\n";
    } else if (pre->parsed()) {
      const auto result = feds2t::cmd_pretrain(config);
      std::cout << "public dev WER: init=" << result.public_dev_wer_init
                << " final=" << result.public_dev_wer_final << "\n";
    } else if (fed->parsed()) {
      const auto result =
          feds2t::cmd_federate(config, resolve_method(args, config));
      std::cout << "rounds=" << result.rounds_run
                << " best_round=" << result.best_round
                << " best_dev_wer=" << result.best_dev_wer
                << " total_bytes=" << result.ledger.total_bytes() << "\n";
    } else if (cen->parsed()) {
      feds2t::cmd_centralize(config, resolve_method(args, config));
      std::cout << "wrote model checkpoint\n";
    } else if (ds->parsed()) {
      feds2t::cmd_build_datastore(config, resolve_method(args, config));
      std::cout << "wrote per-client datastores\n";
    } else if (tune->parsed()) {
      const auto tuned = feds2t::cmd_tune_mem(config, resolve_method(args, config));
      for (std::size_t i = 0; i < tuned.size(); ++i)
        std::cout << "client " << i << ": k=" << tuned[i].config.k
                  << " lambda=" << tuned[i].config.lambda
                  << " T=" << tuned[i].config.temperature
                  << " dev_wer=" << tuned[i].dev_wer
                  << " (base " << tuned[i].base_dev_wer << ")\n";
    } else if (ev->parsed()) {
      print_results(feds2t::cmd_evaluate(config, resolve_method(args, config)),
                    config.world.num_clients);
    } else if (gen2->parsed()) {
      const auto rows = feds2t::cmd_generalize(config, resolve_method(args, config));
      for (const auto& r : rows)
        std::cout << "client " << r.client_id << ": global=" << r.global_wer
                  << " fedmem=" << r.fedmem_wer << "\n";
      if (rows.empty()) std::cout << "no invisible clients configured\n";
    } else if (rep->parsed()) {
      std::cout << feds2t::cmd_report(config);
    } else if (run->parsed()) {
      print_results(feds2t::cmd_run(config), config.world.num_clients);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
