#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pfedlvm/baselines.hpp"
#include "pfedlvm/commcost.hpp"
#include "pfedlvm/datagen.hpp"
#include "pfedlvm/metrics.hpp"
#include "pfedlvm/protocol.hpp"

namespace pfedlvm {

inline constexpr const char* kCodeVersion = "0.1.0";
inline constexpr const char* kOutRootEnv = "PFEDLVM_OUT_ROOT";

enum class RunMode { PFedLVM, FedAvg, FedProx, CommSweep, LayerSweep };

std::string to_string(RunMode mode);
RunMode parse_run_mode(std::string_view name);

struct RunConfig {
  RunMode mode = RunMode::PFedLVM;
  std::uint64_t seed = 1;

  SceneConfig scene;  // scene.seed is derived from `seed`
  std::size_t total_images = 200;
  std::vector<double> proportions{848.0 / 2975.0, 1046.0 / 2975.0, 1081.0 / 2975.0};
  double holdout = 0.15;  // trailing share of each vehicle's data kept for evaluation

  ProtocolConfig protocol;  // batch, epochs, adam and workers are shared with `fl`
  FLConfig fl;
  SweepGrid sweep;
  std::size_t eval_every = 0;  // rounds between periodic evaluations; 0 = final only

  std::filesystem::path out_dir;

  std::size_t vehicles() const { return proportions.size(); }
  /// Copies the shared training fields into `fl` and checks every sub-config.
  void resolve();
};

/// Parses key=value text ('#' starts a comment). Unknown keys and bad values
/// throw ConfigError naming the key and line. Keys set to a non-default value
/// that the selected mode ignores are appended to `warnings`.
RunConfig parse_run_config(std::istream& in, std::vector<std::string>* warnings = nullptr);
RunConfig load_run_config(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr);

/// Full resolved configuration in the same key=value format, plus the code
/// version. Parsing it back yields the same run.
void write_manifest(std::ostream& out, const RunConfig& cfg);

struct SplitData {
  std::vector<std::vector<LabeledImage>> train;
  std::vector<std::vector<LabeledImage>> test;
};

/// Table-II-proportional per-vehicle datasets; the last `holdout` share of
/// each is the test split.
SplitData build_datasets(const RunConfig& cfg);

struct EvalResult {
  std::vector<MetricSummary> per_vehicle;
  MetricSummary pooled;
};

struct RunOutcome {
  EvalResult final_eval;
  std::size_t rounds = 0;
  std::vector<std::pair<LayerSelection, EvalResult>> layer_sweep;
};

/// Executes the configured mode. When `cfg.out_dir` is non-empty the run
/// writes only inside it:
///   manifest.cfg, losses.csv, metrics_v<k>.csv, metrics_pooled.csv,
///   metrics_periodic.csv, summary.csv, comm.csv
/// (commsweep: manifest.cfg, sweep.csv; layersweep: one run directory per
/// selection plus layersweep.csv).
RunOutcome run_experiment(const RunConfig& cfg);

/// Per-vehicle final metric deltas of the pfedlvm run against every other
/// run. Without a pfedlvm run the first directory is the reference.
/// Columns: baseline,scope,metric,reference,baseline_value,delta,delta_pct.
void compare_report(const std::vector<std::filesystem::path>& run_dirs, std::ostream& out);

/// (a - b) / b * 100; nan when b == 0.
double percent_delta(double a, double b);

/// `--out` if given, else $PFEDLVM_OUT_ROOT/<mode>-seed<N>, else runs/<mode>-seed<N>.
std::filesystem::path default_out_dir(const RunConfig& cfg);

}  // namespace pfedlvm
