// fedasync <subcommand> [--config FILE] [--out DIR] [--set section.key=value ...]

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedasync/config.hpp"
#include "fedasync/errors.hpp"
#include "fedasync/experiment.hpp"

namespace {

struct Args {
  std::string config_path;
  std::string out;
  std::vector<std::string> sets;
  std::string host;
  int port = -1;
  int index = -1;
};

}  // namespace

int main(int argc, char** argv) {
  using fedasync::config::Mode;
  CLI::App app{"Asynchronous federated optimization: simulator, distributed runner and probes"};
  app.require_subcommand(1);

  Args args;
  std::string chosen;
  auto add = [&](Mode mode, const std::string& help) {
    CLI::App* sub = app.add_subcommand(std::string(fedasync::config::to_string(mode)), help);
    sub->add_option("-c,--config", args.config_path, "TOML experiment config")->check(CLI::ExistingFile);
    sub->add_option("-o,--out", args.out, "output directory (FEDASYNC_OUT takes precedence)");
    sub->add_option("-s,--set", args.sets, "override, e.g. --set hyperparams.eta=0.05")->take_all();
    return sub;
  };
  add(Mode::simulate_async, "simulate the asynchronous protocol on heterogeneous devices");
  add(Mode::simulate_sync, "simulate synchronous FedAvg");
  add(Mode::simulate_central, "centralized SGD reference run");
  CLI::App* serve = add(Mode::serve, "run the parameter server over TCP");
  serve->add_option("-p,--port", args.port, "listen port (0 picks a free one)");
  CLI::App* client = add(Mode::client, "run one federated client over TCP");
  client->add_option("-p,--port", args.port, "server port");
  client->add_option("--host", args.host, "server host");
  client->add_option("-i,--index", args.index, "client index in [0, n_clients)");
  add(Mode::distill, "teacher -> assistants -> student distillation chain");
  add(Mode::gradcheck, "finite-difference check of every model gradient");
  add(Mode::sweep, "grid over the staleness exponent a and mixing weight beta");
  add(Mode::probe, "empirical convergence probe over increasing E");

  CLI11_PARSE(app, argc, argv);
  for (CLI::App* sub : app.get_subcommands()) chosen = sub->get_name();

  std::vector<std::string> overrides = args.sets;
  overrides.push_back("mode=" + chosen);
  if (!args.out.empty()) overrides.push_back("output.dir=\"" + args.out + "\"");
  if (args.port >= 0) overrides.push_back("net.port=" + std::to_string(args.port));
  if (!args.host.empty()) overrides.push_back("net.host=\"" + args.host + "\"");
  if (args.index >= 0) overrides.push_back("net.client_index=" + std::to_string(args.index));

  fedasync::config::ExperimentConfig cfg;
  try {
    cfg = args.config_path.empty() ? fedasync::config::config_from_overrides(overrides)
                                   : fedasync::config::load_config(args.config_path, overrides);
  } catch (const fedasync::Error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return fedasync::experiment::kConfigError;
  }
  return fedasync::experiment::run(cfg, std::cerr);
}
