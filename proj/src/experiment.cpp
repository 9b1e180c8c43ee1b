#include "pfedlvm/experiment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <locale>
#include <map>
#include <set>
#include <sstream>

#include "pfedlvm/csv.hpp"
#include "pfedlvm/rng.hpp"

namespace pfedlvm {

namespace fs = std::filesystem;

std::string to_string(RunMode mode) {
  switch (mode) {
    case RunMode::PFedLVM: return "pfedlvm";
    case RunMode::FedAvg: return "fedavg";
    case RunMode::FedProx: return "fedprox";
    case RunMode::CommSweep: return "commsweep";
    case RunMode::LayerSweep: return "layersweep";
  }
  return "?";
}

RunMode parse_run_mode(std::string_view name) {
  for (auto m : {RunMode::PFedLVM, RunMode::FedAvg, RunMode::FedProx, RunMode::CommSweep, RunMode::LayerSweep}) {
    if (name == to_string(m)) return m;
  }
  throw ConfigError("mode: unknown mode '" + std::string(name) +
                    "' (expected pfedlvm, fedavg, fedprox, commsweep or layersweep)");
}

namespace {

constexpr std::uint64_t kSceneStream = 0x5ce;

// Modes a key applies to.
enum : unsigned { kPfed = 1, kAvg = 2, kProx = 4, kSweep = 8, kLayer = 16 };
constexpr unsigned kAll = kPfed | kAvg | kProx | kSweep | kLayer;
constexpr unsigned kTrain = kPfed | kAvg | kProx | kLayer;
constexpr unsigned kFed = kPfed | kLayer;
constexpr unsigned kFl = kAvg | kProx;

unsigned mode_bit(RunMode m) {
  switch (m) {
    case RunMode::PFedLVM: return kPfed;
    case RunMode::FedAvg: return kAvg;
    case RunMode::FedProx: return kProx;
    case RunMode::CommSweep: return kSweep;
    case RunMode::LayerSweep: return kLayer;
  }
  return 0;
}

std::uint64_t to_u64(std::string_view s) {
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("expected a non-negative integer, got '" + std::string(s) + "'");
  }
  return v;
}

double to_real(std::string_view s) { return parse_double(trim(s)); }

bool to_bool(std::string_view s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("expected true or false, got '" + std::string(s) + "'");
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

template <class T, class F>
std::string join(const std::vector<T>& xs, F fmt, char sep = ',') {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += sep;
    out += fmt(xs[i]);
  }
  return out;
}

std::vector<double> to_reals(std::string_view s) {
  std::vector<double> out;
  if (trim(s).empty()) return out;
  for (const auto& part : split(s, ',')) out.push_back(to_real(part));
  return out;
}

std::vector<std::uint64_t> to_u64s(std::string_view s) {
  std::vector<std::uint64_t> out;
  for (const auto& part : split(s, ',')) out.push_back(to_u64(trim(part)));
  if (out.empty()) throw std::invalid_argument("empty list");
  return out;
}

std::string fmt_u64(std::uint64_t v) { return std::to_string(v); }

struct Key {
  const char* name;
  unsigned modes;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

#define PF_SIZE(NAME, MODES, FIELD) \
  Key { NAME, MODES, [](const RunConfig& c) { return fmt_u64(c.FIELD); }, [](RunConfig& c, std::string_view v) { c.FIELD = to_u64(v); } }
#define PF_REAL(NAME, MODES, FIELD) \
  Key { NAME, MODES, [](const RunConfig& c) { return format_double(c.FIELD); }, [](RunConfig& c, std::string_view v) { c.FIELD = to_real(v); } }
#define PF_BOOL(NAME, MODES, FIELD) \
  Key { NAME, MODES, [](const RunConfig& c) { return from_bool(c.FIELD); }, [](RunConfig& c, std::string_view v) { c.FIELD = to_bool(v); } }
#define PF_LIST(NAME, FIELD)                                                                   \
  Key {                                                                                        \
    NAME, kSweep, [](const RunConfig& c) { return join(c.FIELD, fmt_u64); },                   \
        [](RunConfig& c, std::string_view v) { c.FIELD = to_u64s(v); }                         \
  }

std::string time_vehicles_text(const RunConfig& c) {
  if (!c.protocol.time_model) return "";
  return join(
      c.protocol.time_model->vehicles,
      [](const VehicleTimes& t) {
        return join(std::vector<double>{t.tf_c, t.tb_c, t.tf_p, t.tb_p, t.tu, t.td}, format_double);
      },
      ';');
}

void set_time_vehicles(RunConfig& c, std::string_view v) {
  if (trim(v).empty()) {
    c.protocol.time_model.reset();
    return;
  }
  TimeParams tp;
  if (c.protocol.time_model) tp.t_s = c.protocol.time_model->t_s;
  for (const auto& item : split(v, ';')) {
    const auto xs = to_reals(item);
    if (xs.size() != 6) throw std::invalid_argument("each vehicle needs tf_c,tb_c,tf_p,tb_p,tu,td");
    tp.vehicles.push_back({xs[0], xs[1], xs[2], xs[3], xs[4], xs[5]});
  }
  c.protocol.time_model = tp;
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      Key{"mode", kAll, [](const RunConfig& c) { return to_string(c.mode); },
          [](RunConfig& c, std::string_view v) { c.mode = parse_run_mode(v); }},
      PF_SIZE("seed", kAll, seed),
      PF_SIZE("eval_every", kTrain, eval_every),
      PF_SIZE("data.total_images", kTrain, total_images),
      Key{"data.proportions", kTrain, [](const RunConfig& c) { return join(c.proportions, format_double); },
          [](RunConfig& c, std::string_view v) { c.proportions = to_reals(v); }},
      PF_REAL("data.holdout", kTrain, holdout),
      PF_SIZE("scene.image_size", kTrain, scene.image_size),
      PF_SIZE("scene.class_count", kTrain, scene.class_count),
      PF_SIZE("scene.min_shapes", kTrain, scene.min_shapes),
      PF_SIZE("scene.max_shapes", kTrain, scene.max_shapes),
      PF_REAL("scene.noise_std", kTrain, scene.noise_std),
      PF_BOOL("scene.rotate_palettes", kTrain, scene.rotate_palettes),
      Key{"scene.class_weights", kTrain,
          [](const RunConfig& c) {
            return join(
                c.scene.class_weights, [](const std::vector<double>& w) { return join(w, format_double); }, ';');
          },
          [](RunConfig& c, std::string_view v) {
            c.scene.class_weights.clear();
            if (trim(v).empty()) return;
            for (const auto& item : split(v, ';')) c.scene.class_weights.push_back(to_reals(item));
          }},
      PF_SIZE("train.batch_size", kTrain, protocol.batch_size),
      PF_SIZE("train.epochs", kTrain, protocol.epochs),
      PF_REAL("train.lr", kTrain, protocol.adam.learning_rate),
      PF_REAL("train.beta1", kTrain, protocol.adam.beta1),
      PF_REAL("train.beta2", kTrain, protocol.adam.beta2),
      PF_REAL("train.epsilon", kTrain, protocol.adam.epsilon),
      PF_REAL("train.weight_decay", kTrain, protocol.adam.weight_decay),
      PF_SIZE("train.workers", kTrain, protocol.workers),
      Key{"pfed.selection", kPfed, [](const RunConfig& c) { return to_string(c.protocol.selection); },
          [](RunConfig& c, std::string_view v) { c.protocol.selection = parse_layer_selection(v); }},
      PF_BOOL("pfed.broadcast_full", kFed, protocol.broadcast_full),
      PF_SIZE("model.feature_channels", kFed, protocol.backbone.channels),
      PF_SIZE("model.compressor_hidden", kFed, protocol.compressor.hidden_channels),
      PF_SIZE("model.backbone_depth", kFed, protocol.backbone.depth),
      PF_REAL("model.backbone_gain", kFed, protocol.backbone.init_gain),
      PF_SIZE("model.head_hidden", kFed, protocol.head_hidden),
      Key{"time.t_s", kFed,
          [](const RunConfig& c) { return c.protocol.time_model ? format_double(c.protocol.time_model->t_s) : ""; },
          [](RunConfig& c, std::string_view v) {
            if (trim(v).empty()) return;
            if (!c.protocol.time_model) c.protocol.time_model = TimeParams{};
            c.protocol.time_model->t_s = to_real(v);
          }},
      Key{"time.vehicles", kFed, time_vehicles_text, set_time_vehicles},
      PF_SIZE("fl.sigma", kFl, fl.sigma),
      PF_REAL("fl.mu", kProx, fl.mu),
      PF_SIZE("fl.hidden_channels", kFl, fl.model.hidden_channels),
      PF_SIZE("fl.conv_layers", kFl, fl.model.conv_layers),
      Key{"fl.weights", kFl, [](const RunConfig& c) { return join(c.fl.weights, format_double); },
          [](RunConfig& c, std::string_view v) { c.fl.weights = to_reals(v); }},
      PF_LIST("sweep.S_max", sweep.S_max),
      PF_LIST("sweep.N_b", sweep.N_b),
      PF_LIST("sweep.B_s", sweep.B_s),
      PF_LIST("sweep.F_b", sweep.F_b),
      PF_LIST("sweep.M_b", sweep.M_b),
      PF_LIST("sweep.sigma", sweep.sigma),
      PF_LIST("sweep.V", sweep.V),
  };
  return table;
}

#undef PF_SIZE
#undef PF_REAL
#undef PF_BOOL
#undef PF_LIST

const Key* find_key(std::string_view name) {
  for (const auto& k : keys()) {
    if (name == k.name) return &k;
  }
  return nullptr;
}

std::ofstream open_csv(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.imbue(std::locale::classic());
  return out;
}

}  // namespace

void RunConfig::resolve() {
  if (proportions.empty()) throw ConfigError("data.proportions: at least one vehicle required");
  double share = 0.0;
  for (double x : proportions) {
    if (!(x >= 0.0)) throw ConfigError("data.proportions: entries must be non-negative");
    share += x;
  }
  if (std::abs(share - 1.0) > 1e-9) throw ConfigError("data.proportions: must sum to 1");
  const std::size_t v = vehicles();
  if (total_images < v) throw ConfigError("data.total_images: need at least one image per vehicle");
  if (!(holdout >= 0.0 && holdout < 1.0)) throw ConfigError("data.holdout: must lie in [0, 1)");
  scene.seed = derive_seed(seed, kSceneStream);
  scene.validate(v);

  protocol.vehicles = v;
  protocol.seed = seed;
  protocol.classes = scene.class_count;
  protocol.compressor.feature_channels = protocol.backbone.channels;
  if (protocol.batch_size == 0) throw ConfigError("train.batch_size: must be positive");
  if (protocol.epochs == 0) throw ConfigError("train.epochs: must be at least 1");
  if (!(protocol.adam.learning_rate > 0.0)) throw ConfigError("train.lr: must be positive");
  if (protocol.workers == 0) throw ConfigError("train.workers: must be at least 1");
  if (protocol.time_model) {
    auto& tp = *protocol.time_model;
    if (tp.vehicles.size() == 1 && v > 1) tp.vehicles.assign(v, tp.vehicles.front());
    if (tp.vehicles.size() != v) {
      throw ConfigError("time.vehicles: lists " + std::to_string(tp.vehicles.size()) + " vehicles, need " +
                        std::to_string(v));
    }
    tp.validate();
  }
  if ((mode == RunMode::PFedLVM || mode == RunMode::LayerSweep) && protocol.backbone.depth < 4) {
    for (auto sel : {LayerSelection::Middle4Avg, LayerSelection::Middle4Concat}) {
      if (mode == RunMode::LayerSweep || protocol.selection == sel) {
        throw ConfigError("model.backbone_depth: " + to_string(sel) + " needs depth >= 4");
      }
    }
  }

  fl.batch_size = protocol.batch_size;
  fl.epochs = protocol.epochs;
  fl.adam = protocol.adam;
  fl.workers = protocol.workers;
  fl.seed = seed;
  fl.model.classes = scene.class_count;
  if (mode == RunMode::FedAvg) fl.mu = 0.0;
  try {
    fl.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("fl: ") + e.what());
  }
  if (!fl.weights.empty() && fl.weights.size() != v) throw ConfigError("fl.weights: need one weight per vehicle");
}

RunConfig parse_run_config(std::istream& in, std::vector<std::string>* warnings) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view text = line;
    if (auto hash = text.find('#'); hash != std::string_view::npos) text = text.substr(0, hash);
    text = trim(text);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key(trim(text.substr(0, eq)));
    const std::string_view value = trim(text.substr(eq + 1));
    if (key == "code_version") continue;
    const Key* k = find_key(key);
    if (!k) throw ConfigError(key + ": unknown key (line " + std::to_string(lineno) + ")");
    try {
      k->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(key + ": " + e.what() + " (line " + std::to_string(lineno) + ")");
    } catch (const std::invalid_argument& e) {
      throw ConfigError(key + ": " + e.what() + " (line " + std::to_string(lineno) + ")");
    }
    seen.insert(key);
  }
  if (warnings) {
    const unsigned bit = mode_bit(cfg.mode);
    const RunConfig defaults;
    for (const auto& name : seen) {
      const Key* k = find_key(name);
      if (!(k->modes & bit) && k->get(cfg) != k->get(defaults)) {
        warnings->push_back(name + " is ignored in mode " + to_string(cfg.mode));
      }
    }
  }
  return cfg;
}

RunConfig load_run_config(const fs::path& path, std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  return parse_run_config(in, warnings);
}

void write_manifest(std::ostream& out, const RunConfig& cfg) {
  out.imbue(std::locale::classic());
  out << "# pfedlvm run manifest\n";
  out << "code_version = " << kCodeVersion << "\n";
  for (const auto& k : keys()) out << k.name << " = " << k.get(cfg) << "\n";
}

SplitData build_datasets(const RunConfig& cfg) {
  SplitData split;
  const auto counts = partition_counts(cfg.total_images, cfg.proportions);
  for (std::size_t v = 0; v < counts.size(); ++v) {
    if (counts[v] < 2 && cfg.holdout > 0.0) {
      throw ConfigError("data.total_images: vehicle " + std::to_string(v) + " gets " + std::to_string(counts[v]) +
                        " images, too few to hold out a test split");
    }
    auto all = generate_vehicle_dataset(cfg.scene, v, counts[v]);
    std::size_t ntest = 0;
    if (cfg.holdout > 0.0) {
      ntest = static_cast<std::size_t>(std::ceil(cfg.holdout * static_cast<double>(all.size()) - 1e-9));
      ntest = std::clamp<std::size_t>(ntest, 1, all.size() - 1);
    }
    const auto cut = all.end() - static_cast<std::ptrdiff_t>(ntest);
    split.train.emplace_back(all.begin(), cut);
    split.test.emplace_back(cut, all.end());
  }
  return split;
}

// ---------------------------------------------------------------------------

namespace {

template <class Predict>
EvalResult evaluate(const SplitData& data, std::size_t classes, Predict predict) {
  EvalResult result;
  ConfusionAccumulator pooled(classes);
  for (std::size_t v = 0; v < data.test.size(); ++v) {
    ConfusionAccumulator acc(classes);
    if (!data.test[v].empty()) acc.accumulate_batch(predict(v, stack_images(data.test[v])), stack_masks(data.test[v]));
    result.per_vehicle.push_back(summarize(acc));
    pooled.merge(acc);
  }
  result.pooled = summarize(pooled);
  return result;
}

void write_periodic_rows(std::ostream& out, std::uint64_t round, const EvalResult& r) {
  auto row = [&](const std::string& scope, const MetricSummary& m) {
    out << round << ',' << scope << ',' << format_double(m.mean_iou) << ',' << format_double(m.mean_f1) << ','
        << format_double(m.mean_precision) << ',' << format_double(m.mean_recall) << '\n';
  };
  for (std::size_t v = 0; v < r.per_vehicle.size(); ++v) row("vehicle" + std::to_string(v), r.per_vehicle[v]);
  row("pooled", r.pooled);
  out.flush();
}

void write_eval_files(const fs::path& dir, const EvalResult& r) {
  for (std::size_t v = 0; v < r.per_vehicle.size(); ++v) {
    auto f = open_csv(dir / ("metrics_v" + std::to_string(v) + ".csv"));
    write_metric_csv(f, r.per_vehicle[v]);
  }
  {
    auto f = open_csv(dir / "metrics_pooled.csv");
    write_metric_csv(f, r.pooled);
  }
  auto f = open_csv(dir / "summary.csv");
  f << "scope,mIoU,mF1,mPrecision,mRecall\n";
  auto row = [&](const std::string& scope, const MetricSummary& m) {
    f << scope << ',' << format_double(m.mean_iou) << ',' << format_double(m.mean_f1) << ','
      << format_double(m.mean_precision) << ',' << format_double(m.mean_recall) << '\n';
  };
  for (std::size_t v = 0; v < r.per_vehicle.size(); ++v) row("vehicle" + std::to_string(v), r.per_vehicle[v]);
  row("pooled", r.pooled);
}

struct CommRow {
  std::string quantity;
  double analytic;
  double traced;
};

void write_comm(const fs::path& dir, const std::vector<CommRow>& rows) {
  auto f = open_csv(dir / "comm.csv");
  f << "quantity,analytic,traced,match\n";
  for (const auto& r : rows) {
    f << r.quantity << ',' << format_double(r.analytic) << ',' << format_double(r.traced) << ','
      << (r.analytic == r.traced ? "true" : "false") << '\n';
  }
}

RunOutcome run_pfedlvm(const RunConfig& cfg, const SplitData& data) {
  const bool files = !cfg.out_dir.empty();
  PfedSimulation sim(cfg.protocol, data.train);
  const std::size_t rounds = sim.total_rounds();

  std::ofstream losses, periodic;
  if (files) {
    losses = open_csv(cfg.out_dir / "losses.csv");
    losses << "round,vehicle,compressor_loss,head_loss\n";
    periodic = open_csv(cfg.out_dir / "metrics_periodic.csv");
    periodic << "round,scope,mIoU,mF1,mPrecision,mRecall\n";
  }
  auto predict = [&](std::size_t v, const Tensor& x) { return sim.predict(v, x); };
  double modeled = 0.0;
  for (std::size_t r = 0; r < rounds; ++r) {
    const RoundTrace t = sim.step();
    modeled += t.modeled_time;
    if (files) {
      for (std::size_t v = 0; v < t.head_loss.size(); ++v) {
        losses << t.round_index << ',' << v << ',' << format_double(t.compressor_loss[v]) << ','
               << format_double(t.head_loss[v]) << '\n';
      }
      losses.flush();
      if (cfg.eval_every && (r + 1) % cfg.eval_every == 0 && r + 1 < rounds) {
        write_periodic_rows(periodic, r + 1, evaluate(data, cfg.protocol.classes, predict));
      }
    }
  }

  RunOutcome outcome;
  outcome.rounds = rounds;
  outcome.final_eval = evaluate(data, cfg.protocol.classes, predict);
  if (files) {
    write_periodic_rows(periodic, rounds, outcome.final_eval);
    write_eval_files(cfg.out_dir, outcome.final_eval);

    CommParams p;
    p.S_max = sim.s_max();
    p.N_b = cfg.protocol.epochs;
    p.B_s = cfg.protocol.batch_size;
    p.F_b = sim.upload_feature_bytes();
    p.M_b = 1;
    p.sigma = 1;
    p.V = cfg.vehicles();
    const auto& log = sim.log();
    const double up = static_cast<double>(log.total_payload_bytes(MessageKind::CompressedFeatures));
    const double down = static_cast<double>(log.total_payload_bytes(MessageKind::SharedFeatures));
    const double per_dir = static_cast<double>(p.N_b * batches_per_pass(p) * p.V);
    std::vector<CommRow> rows{
        {"upload_bytes", per_dir * static_cast<double>(sim.upload_feature_bytes()), up},
        {"download_bytes", per_dir * static_cast<double>(sim.download_feature_bytes()), down},
        {"total_bytes",
         static_cast<double>(m_pfl_directional(p, sim.upload_feature_bytes(), sim.download_feature_bytes())),
         up + down},
        {"m_pfl_eq7", static_cast<double>(m_pfl(p)), up + down},
        {"messages", static_cast<double>(2 * rounds * p.V), static_cast<double>(log.count())},
    };
    if (cfg.protocol.time_model) {
      rows.push_back({"total_time", static_cast<double>(rounds) * round_time(*cfg.protocol.time_model), modeled});
    }
    write_comm(cfg.out_dir, rows);
  }
  return outcome;
}

RunOutcome run_fl(const RunConfig& cfg, const SplitData& data) {
  const bool files = !cfg.out_dir.empty();
  FedBaseline fb(cfg.fl, data.train);
  const std::size_t rounds = fb.total_rounds();

  std::ofstream losses, periodic;
  if (files) {
    losses = open_csv(cfg.out_dir / "losses.csv");
    losses << "round,vehicle,train_loss\n";
    periodic = open_csv(cfg.out_dir / "metrics_periodic.csv");
    periodic << "round,scope,mIoU,mF1,mPrecision,mRecall\n";
  }
  auto predict = [&](std::size_t, const Tensor& x) { return fb.predict(x); };
  for (std::size_t r = 0; r < rounds; ++r) {
    const BaselineRoundTrace t = fb.step();
    if (files) {
      for (std::size_t v = 0; v < t.train_loss.size(); ++v) {
        losses << t.round_index << ',' << v << ',' << format_double(t.train_loss[v]) << '\n';
      }
      losses.flush();
      if (cfg.eval_every && (r + 1) % cfg.eval_every == 0 && r + 1 < rounds) {
        write_periodic_rows(periodic, r + 1, evaluate(data, cfg.fl.model.classes, predict));
      }
    }
  }

  RunOutcome outcome;
  outcome.rounds = rounds;
  outcome.final_eval = evaluate(data, cfg.fl.model.classes, predict);
  if (files) {
    write_periodic_rows(periodic, rounds, outcome.final_eval);
    write_eval_files(cfg.out_dir, outcome.final_eval);

    CommParams p;
    p.S_max = fb.s_max();
    p.N_b = cfg.fl.epochs;
    p.B_s = cfg.fl.batch_size;
    p.F_b = 1;
    p.M_b = model_byte_size(fb.global_model().params);
    p.sigma = cfg.fl.sigma;
    p.V = cfg.vehicles();
    const auto& log = fb.log();
    const double up = static_cast<double>(log.total_payload_bytes(MessageKind::ParameterUp));
    const double down = static_cast<double>(log.total_payload_bytes(MessageKind::ParameterDown));
    const double half = static_cast<double>(m_fl(p)) / 2.0;
    write_comm(cfg.out_dir, {
                                {"upload_bytes", half, up},
                                {"download_bytes", half, down},
                                {"m_fl_eq8", static_cast<double>(m_fl(p)), up + down},
                                {"messages", static_cast<double>(2 * rounds * p.V), static_cast<double>(log.count())},
                            });
  }
  return outcome;
}

void write_manifest_file(const RunConfig& cfg) {
  std::ofstream out(cfg.out_dir / "manifest.cfg", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + (cfg.out_dir / "manifest.cfg").string());
  write_manifest(out, cfg);
}

}  // namespace

RunOutcome run_experiment(const RunConfig& input) {
  RunConfig cfg = input;
  cfg.resolve();
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    write_manifest_file(cfg);
  }

  switch (cfg.mode) {
    case RunMode::CommSweep: {
      if (!cfg.out_dir.empty()) {
        auto f = open_csv(cfg.out_dir / "sweep.csv");
        write_sweep_csv(f, comm_sweep(cfg.sweep));
      }
      return {};
    }
    case RunMode::PFedLVM: return run_pfedlvm(cfg, build_datasets(cfg));
    case RunMode::FedAvg:
    case RunMode::FedProx: return run_fl(cfg, build_datasets(cfg));
    case RunMode::LayerSweep: {
      const SplitData data = build_datasets(cfg);
      RunOutcome outcome;
      std::ofstream table;
      if (!cfg.out_dir.empty()) {
        table = open_csv(cfg.out_dir / "layersweep.csv");
        table << "selection,mIoU,mF1,mPrecision,mRecall\n";
      }
      for (auto sel : kAllSelections) {
        RunConfig sub = cfg;
        sub.mode = RunMode::PFedLVM;
        sub.protocol.selection = sel;
        if (!cfg.out_dir.empty()) {
          sub.out_dir = cfg.out_dir / to_string(sel);
          fs::create_directories(sub.out_dir);
          write_manifest_file(sub);
        }
        RunOutcome r = run_pfedlvm(sub, data);
        if (table.is_open()) {
          const auto& m = r.final_eval.pooled;
          table << to_string(sel) << ',' << format_double(m.mean_iou) << ',' << format_double(m.mean_f1) << ','
                << format_double(m.mean_precision) << ',' << format_double(m.mean_recall) << '\n';
          table.flush();
        }
        outcome.rounds = r.rounds;
        outcome.layer_sweep.emplace_back(sel, std::move(r.final_eval));
      }
      return outcome;
    }
  }
  return {};
}

// ---------------------------------------------------------------------------

double percent_delta(double a, double b) { return b == 0.0 ? std::nan("") : (a - b) / b * 100.0; }

namespace {

struct Summary {
  std::string mode;
  std::vector<std::string> scopes;
  std::map<std::string, std::array<double, 4>> values;
};

Summary read_summary(const fs::path& dir) {
  Summary s;
  {
    std::ifstream in(dir / "manifest.cfg");
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq != std::string::npos && trim(std::string_view(line).substr(0, eq)) == "mode") {
        s.mode = std::string(trim(std::string_view(line).substr(eq + 1)));
      }
    }
  }
  std::ifstream in(dir / "summary.csv");
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto cols = split(line, ',');
    if (cols.size() != 5) throw ConfigError("malformed row in " + (dir / "summary.csv").string());
    s.scopes.push_back(cols[0]);
    s.values[cols[0]] = {parse_double(cols[1]), parse_double(cols[2]), parse_double(cols[3]), parse_double(cols[4])};
  }
  return s;
}

}  // namespace

void compare_report(const std::vector<fs::path>& run_dirs, std::ostream& out) {
  if (run_dirs.size() < 2) throw ConfigError("report: need at least two run directories");
  std::vector<std::string> missing;
  for (const auto& d : run_dirs) {
    for (const char* name : {"summary.csv", "manifest.cfg"}) {
      if (!fs::is_regular_file(d / name)) missing.push_back((d / name).string());
    }
  }
  if (!missing.empty()) {
    std::string msg = "report: missing metric files:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw ConfigError(msg);
  }
  std::vector<Summary> sums;
  for (const auto& d : run_dirs) sums.push_back(read_summary(d));
  std::size_t ref = 0;
  for (std::size_t i = 0; i < sums.size(); ++i) {
    if (sums[i].mode == "pfedlvm") {
      ref = i;
      break;
    }
  }

  static const char* names[4] = {"mIoU", "mF1", "mPrecision", "mRecall"};
  out.imbue(std::locale::classic());
  out << "baseline,scope,metric,reference,baseline_value,delta,delta_pct\n";
  for (std::size_t i = 0; i < sums.size(); ++i) {
    if (i == ref) continue;
    const std::string label = run_dirs[i].filename().empty() ? run_dirs[i].parent_path().filename().string()
                                                              : run_dirs[i].filename().string();
    for (const auto& scope : sums[ref].scopes) {
      auto it = sums[i].values.find(scope);
      if (it == sums[i].values.end()) continue;
      const auto& a = sums[ref].values.at(scope);
      for (int m = 0; m < 4; ++m) {
        out << label << ',' << scope << ',' << names[m] << ',' << format_double(a[m]) << ','
            << format_double(it->second[m]) << ',' << format_double(a[m] - it->second[m]) << ','
            << format_double(percent_delta(a[m], it->second[m])) << '\n';
      }
    }
  }
}

fs::path default_out_dir(const RunConfig& cfg) {
  const std::string leaf = to_string(cfg.mode) + "-seed" + std::to_string(cfg.seed);
  if (const char* root = std::getenv(kOutRootEnv); root && *root) return fs::path(root) / leaf;
  return fs::path("runs") / leaf;
}

}  // namespace pfedlvm
