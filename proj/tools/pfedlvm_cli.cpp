// pfedlvm: run experiments, cost sweeps and comparison reports.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "pfedlvm/experiment.hpp"

using namespace pfedlvm;

namespace {

struct RunArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string mode;
};

void add_run_flags(CLI::App* cmd, RunArgs& a) {
  cmd->add_option("--config", a.config, "key=value config file");
  cmd->add_option("--seed", a.seed, "master seed (overrides the config)");
  cmd->add_option("--out", a.out, "output directory");
  cmd->add_option("--mode", a.mode, "pfedlvm, fedavg, fedprox, commsweep or layersweep");
}

int execute(const RunArgs& a, std::optional<RunMode> forced_default) {
  std::vector<std::string> warnings;
  RunConfig cfg;
  if (!a.config.empty()) {
    cfg = load_run_config(a.config, &warnings);
  }
  if (!a.mode.empty()) cfg.mode = parse_run_mode(a.mode);
  // sweep: a training mode from the config falls back to the cost sweep
  if (forced_default && cfg.mode != RunMode::CommSweep && cfg.mode != RunMode::LayerSweep) cfg.mode = *forced_default;
  if (a.seed) cfg.seed = *a.seed;
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  cfg.out_dir = a.out.empty() ? default_out_dir(cfg) : std::filesystem::path(a.out);
  const RunOutcome r = run_experiment(cfg);
  std::cout << to_string(cfg.mode) << " -> " << cfg.out_dir.string() << "\n";
  if (!r.final_eval.per_vehicle.empty()) {
    for (std::size_t v = 0; v < r.final_eval.per_vehicle.size(); ++v) {
      std::printf("vehicle %zu  mIoU %.4f  mF1 %.4f\n", v, r.final_eval.per_vehicle[v].mean_iou,
                  r.final_eval.per_vehicle[v].mean_f1);
    }
    std::printf("pooled     mIoU %.4f  mF1 %.4f\n", r.final_eval.pooled.mean_iou, r.final_eval.pooled.mean_f1);
  }
  for (const auto& [sel, ev] : r.layer_sweep) {
    std::printf("%-14s mIoU %.4f\n", to_string(sel).c_str(), ev.pooled.mean_iou);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pFedLVM federated simulator"};
  app.require_subcommand(1);

  RunArgs run_args, sweep_args;
  auto* run = app.add_subcommand("run", "train pFedLVM or a baseline");
  add_run_flags(run, run_args);
  auto* sweep = app.add_subcommand("sweep", "communication-cost or layer-selection sweep");
  add_run_flags(sweep, sweep_args);

  std::vector<std::string> dirs;
  std::string report_out;
  auto* report = app.add_subcommand("report", "compare finished runs");
  report->add_option("dirs", dirs, "run directories (the pfedlvm run is the reference)")->required();
  report->add_option("--out", report_out, "summary CSV (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return execute(run_args, std::nullopt);
    if (*sweep) {
      if (!sweep_args.mode.empty() && sweep_args.mode != "commsweep" && sweep_args.mode != "layersweep") {
        throw ConfigError("sweep: --mode must be commsweep or layersweep");
      }
      return execute(sweep_args, RunMode::CommSweep);
    }
    std::vector<std::filesystem::path> paths(dirs.begin(), dirs.end());
    if (report_out.empty()) {
      compare_report(paths, std::cout);
    } else {
      std::ofstream out(report_out, std::ios::binary);
      if (!out) throw ConfigError("cannot write " + report_out);
      compare_report(paths, out);
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
