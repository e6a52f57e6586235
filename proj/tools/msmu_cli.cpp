// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "msmu/allocator.hpp"
#include "msmu/continual.hpp"
#include "msmu/forecaster.hpp"
#include "msmu/nn.hpp"
#include "msmu/runtime.hpp"
#include "msmu/scenario.hpp"
#include "msmu/traffic.hpp"

namespace fs = std::filesystem;
using namespace msmu;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 2;
constexpr int kRuntime = 3;

// Bad input from the user, as opposed to a failure while running.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", p.string()));
  return out;
}

std::ifstream open_in(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw UsageError(fmt::format("cannot read {}", p.string()));
  return in;
}

Scenario scenario_or_default(const std::string& path) {
  return path.empty() ? Scenario{} : load_scenario_file(path);
}

struct SimulateOpts {
  std::string scenario;
  std::uint64_t seed = 1;
  int frames = 100;
  std::string controller = "heuristic";
  std::string out;
  int threads = 1;
  bool urllc_floor = false;
  std::string forecaster;
  std::string allocator;
};

int cmd_simulate(const SimulateOpts& o) {
  const Scenario s = scenario_or_default(o.scenario);
  const ControllerKind kind = parse_controller(o.controller);
  if (o.frames < 1) throw UsageError("--frames must be at least 1");
  if (o.threads < 1) throw UsageError("--threads must be at least 1");

  std::optional<ForecasterModel> fm;
  std::optional<AllocatorModel> am;
  if (kind == ControllerKind::learned) {
    if (o.forecaster.empty() || o.allocator.empty()) {
      throw UsageError("--controller learned needs --forecaster and --allocator checkpoints");
    }
    fm.emplace(ForecasterConfig::from_scenario(s), 1);
    nn::load_checkpoint(o.forecaster, fm->params());
    am.emplace(AllocatorConfig::from_scenario(s), 1);
    nn::load_checkpoint(o.allocator, am->params());
  }

  SimulationConfig cfg;
  cfg.frames = o.frames;
  cfg.seed = o.seed;
  cfg.threads = o.threads;
  cfg.slice_policy.urllc_floor = o.urllc_floor;

  ControllerPair c = make_controllers(kind, s, cfg.slice_policy, fm ? &*fm : nullptr,
                                      am ? &*am : nullptr);
  const SimulationResult r = run_simulation(s, *c.planner, *c.scheduler, cfg);
  const fs::path csv = emit_report(r.log, o.out);

  fmt::print("frames {}  grids {}/{} feasible  bytes conserved: {}\n", r.log.rows.size(),
             r.feasible_grids, r.grids, r.conserved ? "yes" : "no");
  fmt::print("uRLLC within budget {}/{} ({:.4f})\n", r.urllc_within_budget, r.urllc_checks,
             r.reliability());
  fmt::print("wrote {}\n", csv.string());
  return kOk;
}

std::vector<DemandFrame> generate_trace(const Scenario& s, int frames, std::uint64_t seed) {
  TrafficGenerator gen(s, seed);
  std::vector<DemandFrame> out;
  out.reserve(static_cast<std::size_t>(frames));
  for (int t = 0; t < frames; ++t) out.push_back(gen.next_frame());
  return out;
}

struct ForecasterOpts {
  std::string scenario;
  int epochs = 4;
  std::string out;
  int frames = 5000;
  double train_frac = 0.8;
  int batch = 4;
  int steps_per_epoch = 100;
  double lr = 1e-3;
  std::uint64_t trace_seed = 7;
  std::uint64_t seed = 1;
  std::string log;
};

int cmd_train_forecaster(const ForecasterOpts& o) {
  const Scenario s = scenario_or_default(o.scenario);
  if (o.epochs < 1) throw UsageError("--epochs must be at least 1");
  const int split = static_cast<int>(std::floor(o.frames * o.train_frac));
  if (split <= s.history_frames || split >= o.frames) {
    throw UsageError("--frames and --train-frac leave no training or test windows");
  }
  const auto trace = generate_trace(s, o.frames, o.trace_seed);
  const auto train = make_forecast_samples(trace, s.history_frames, s.num_rus, 1, split);
  const auto test = make_forecast_samples(trace, s.history_frames, s.num_rus, split + 1, o.frames);

  ForecasterModel model(ForecasterConfig::from_scenario(s), o.seed);
  ForecasterTrainParams p;
  p.epochs = o.epochs;
  p.batch_size = o.batch;
  p.steps_per_epoch = o.steps_per_epoch;
  p.lr = o.lr;
  p.seed = o.seed;
  const auto log = train_forecaster(model, train, p, [](const ForecasterEpoch& e) {
    fmt::print("epoch {:3d}  em {:.4f}  ur {:.4f}  route {:.4f}  acc {:.4f}\n", e.epoch,
               e.loss_em, e.loss_ur, e.loss_route, e.acc_route);
  });

  const ForecastSkill k = evaluate_forecaster(model, test);
  const ForecastSkill base = persistence_skill(test);
  fmt::print("held-out demand MSE {:.4f} (persistence {:.4f})  route accuracy {:.4f}\n",
             k.demand_mse(), base.demand_mse(), k.route_acc);

  nn::save_checkpoint(o.out, model.params());
  if (!o.log.empty()) {
    auto out = open_out(o.log);
    write_forecaster_log(out, log);
  }
  fmt::print("wrote {}\n", o.out);
  return kOk;
}

struct AllocatorOpts {
  std::string scenario;
  int epochs = 30;
  std::string out;
  int samples = 4000;
  int batch = 16;
  double lr = 1e-4;
  std::uint64_t seed = 1;
  std::string log;
};

int cmd_train_allocator(const AllocatorOpts& o) {
  const Scenario s = scenario_or_default(o.scenario);
  if (o.epochs < 1) throw UsageError("--epochs must be at least 1");
  if (o.samples < 10) throw UsageError("--samples must be at least 10");

  AllocatorDataParams dp;
  dp.samples = o.samples;
  dp.seed = o.seed;
  auto data = make_allocator_dataset(s, dp);
  const auto cut = data.size() - data.size() / 5;
  const std::vector<AllocatorSample> test(data.begin() + static_cast<std::ptrdiff_t>(cut),
                                          data.end());
  data.resize(cut);

  AllocatorModel model(AllocatorConfig::from_scenario(s), o.seed);
  AllocatorTrainParams p;
  p.epochs = o.epochs;
  p.batch_size = o.batch;
  p.lr = o.lr;
  p.seed = o.seed;
  const auto log = train_allocator(model, data, s, p, [](const AllocatorEpoch& e) {
    fmt::print("epoch {:3d}  service {:.4f}  prb {:.5f}  power {:.5f}  acc {:.4f}\n", e.epoch,
               e.loss_service, e.loss_prb, e.loss_power, e.acc_service);
  });

  const AllocatorSkill k = evaluate_allocator(model, test, s);
  fmt::print("held-out service accuracy {:.4f}  PRB MSE/var {:.3f}  power MSE/var {:.3f}\n",
             k.service_acc, k.prb_var > 0 ? k.prb_mse / k.prb_var : 0.0,
             k.power_var > 0 ? k.power_mse / k.power_var : 0.0);

  nn::save_checkpoint(o.out, model.params());
  if (!o.log.empty()) {
    auto out = open_out(o.log);
    write_allocator_log(out, log);
  }
  fmt::print("wrote {}\n", o.out);
  return kOk;
}

int cmd_gen_tasks(const TaskStreamParams& p, const std::string& out_path) {
  if (p.tasks < 1 || p.seq_len < 1 || p.features < 1) {
    throw UsageError("--tasks, --seq-len and --features must be positive");
  }
  if (p.test_per_class * 4 != p.train_per_class) {
    throw UsageError("--train-per-class must be four times --test-per-class");
  }
  const TaskStream stream = make_task_stream(p);
  auto out = open_out(out_path);
  write_task_stream_csv(out, stream);
  fmt::print("wrote {} tasks to {}\n", stream.tasks.size(), out_path);
  return kOk;
}

struct ClOpts {
  std::string tasks;
  std::string replay = "on";
  std::string out;
  int seq_len = 8;
  int hidden = 32;
  int epochs = 20;
  int batch = 64;
  double lr = 1e-3;
  std::size_t memory = 1000;
  std::uint64_t seed = 1;
};

int cmd_cl_run(const ClOpts& o) {
  auto in = open_in(o.tasks);
  const TaskStream stream = read_task_stream_csv(in, o.seq_len);

  ClRunParams p;
  p.replay = o.replay == "on";
  p.memory_per_task = o.memory;
  p.model.seq_len = stream.seq_len;
  p.model.features = stream.features;
  p.model.hidden = o.hidden;
  p.train.epochs = o.epochs;
  p.train.batch_size = o.batch;
  p.train.lr = o.lr;
  p.train.seed = o.seed;

  const ClRunResult r = run_continual(stream, p, [](const ClStage& st) {
    fmt::print("task {}  acc {:.4f}  forgetting(task 0) {:.4f}  superclass acc {:.4f}\n", st.task,
               st.acc_ap, st.acc_af, st.superclass_acc);
  });

  const fs::path dir(o.out);
  {
    auto out = open_out(dir / "metrics.csv");
    write_cl_metrics_csv(out, r);
  }
  {
    auto out = open_out(dir / "accuracy_matrix.csv");
    write_accuracy_matrix_csv(out, r.acc);
  }
  {
    auto out = open_out(dir / "stages.csv");
    write_cl_stages_csv(out, r.stages);
  }
  const ClMetrics& m = r.final_metrics;
  fmt::print("AA {:.4f}  AF {:.4f}  BWT {:.4f}  FWT {:.4f}  CF {:.4f}\n", m.aa, m.af, m.bwt,
             m.fwt, m.cf);
  fmt::print("wrote {}\n", (dir / "metrics.csv").string());
  return kOk;
}

void report_simulation(const MetricsLog& log) {
  double obj = 0.0;
  double tput = 0.0;
  double c10e = 0.0;
  double c10h = 0.0;
  double worst = 0.0;
  int finite = 0;
  int unbounded = 0;
  std::int64_t drops = 0;
  for (const MetricsRow& r : log.rows) {
    if (std::isfinite(r.objective)) {
      obj += r.objective;
      ++finite;
    }
    if (std::isfinite(r.worst_ur_latency_s)) {
      worst = std::max(worst, r.worst_ur_latency_s);
    } else {
      ++unbounded;
    }
    tput += r.embb_tput_bps;
    c10e += r.c10e_freq;
    c10h += r.c10h_freq;
    drops += r.drops_bytes;
  }
  const double n = static_cast<double>(log.rows.size());
  fmt::print("frames                 {}\n", log.rows.size());
  fmt::print("RUs                    {}\n", log.rus);
  fmt::print("mean objective         {}\n",
             finite > 0 ? fmt::format("{:.6g} over {} finite frames", obj / finite, finite)
                        : std::string("n/a"));
  fmt::print("mean eMBB throughput   {:.6g} bit/s\n", tput / n);
  fmt::print("worst uRLLC latency    {:.6g} s (finite frames), {} unbounded\n", worst, unbounded);
  fmt::print("eMBB rate constraint   {:.4f} of frames\n", c10e / n);
  fmt::print("uRLLC delay constraint {:.4f} of frames\n", c10h / n);
  fmt::print("dropped bytes          {}\n", drops);
  fmt::print("final queue            {} bytes\n", log.rows.back().q_total_bytes);
}

int cmd_report(const std::string& dir) {
  const fs::path csv = fs::path(dir) / "metrics.csv";
  auto in = open_in(csv);
  std::string header;
  std::getline(in, header);
  if (header.rfind("task,", 0) == 0) {
    // A continual-learning run: echo the final row.
    std::string line;
    std::string last;
    while (std::getline(in, line)) {
      if (!line.empty()) last = line;
    }
    if (last.empty()) throw UsageError(fmt::format("{} has no rows", csv.string()));
    fmt::print("{}\n{}\n", header, last);
    return kOk;
  }
  in.clear();
  in.seekg(0);
  const MetricsLog log = read_metrics_csv(in);
  if (log.rows.empty()) throw UsageError(fmt::format("{} has no rows", csv.string()));
  report_simulation(log);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-slice multi-RU RAN controller simulator"};
  app.require_subcommand(1);

  SimulateOpts sim;
  auto* simulate = app.add_subcommand("simulate", "Run the closed loop and write metrics.csv");
  simulate->add_option("--scenario", sim.scenario, "Scenario INI (default: built-in)")
      ->check(CLI::ExistingFile);
  simulate->add_option("--seed", sim.seed, "Simulation seed");
  simulate->add_option("--frames", sim.frames, "Frames to run");
  simulate->add_option("--controller", sim.controller, "learned, oracle or heuristic")
      ->check(CLI::IsMember({"learned", "oracle", "heuristic", "heuristic-proportional"}));
  simulate->add_option("--out", sim.out, "Output directory")->required();
  simulate->add_option("--threads", sim.threads, "Worker threads for per-RU scheduling");
  simulate->add_flag("--urllc-floor", sim.urllc_floor, "Keep one uRLLC RB on every RU");
  simulate->add_option("--forecaster", sim.forecaster, "Forecaster checkpoint")
      ->check(CLI::ExistingFile);
  simulate->add_option("--allocator", sim.allocator, "Allocator checkpoint")
      ->check(CLI::ExistingFile);

  ForecasterOpts fo;
  auto* tf = app.add_subcommand("train-forecaster", "Train the demand and route forecaster");
  tf->add_option("--scenario", fo.scenario, "Scenario INI")->check(CLI::ExistingFile);
  tf->add_option("--epochs", fo.epochs, "Epochs");
  tf->add_option("--out", fo.out, "Checkpoint path")->required();
  tf->add_option("--frames", fo.frames, "Trace length");
  tf->add_option("--train-frac", fo.train_frac, "Leading fraction of the trace used for training")
      ->check(CLI::Range(0.0, 1.0));
  tf->add_option("--batch", fo.batch, "Windows per batch")->check(CLI::PositiveNumber);
  tf->add_option("--steps-per-epoch", fo.steps_per_epoch, "Batches per epoch (0: full pass)")
      ->check(CLI::NonNegativeNumber);
  tf->add_option("--lr", fo.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  tf->add_option("--trace-seed", fo.trace_seed, "Traffic seed for the training trace");
  tf->add_option("--seed", fo.seed, "Initialization and shuffling seed");
  tf->add_option("--log", fo.log, "Per-epoch loss CSV");

  AllocatorOpts ao;
  auto* ta = app.add_subcommand("train-allocator", "Train the slot allocator");
  ta->add_option("--scenario", ao.scenario, "Scenario INI")->check(CLI::ExistingFile);
  ta->add_option("--epochs", ao.epochs, "Epochs");
  ta->add_option("--out", ao.out, "Checkpoint path")->required();
  ta->add_option("--samples", ao.samples, "Teacher frames generated");
  ta->add_option("--batch", ao.batch, "Frames per batch")->check(CLI::PositiveNumber);
  ta->add_option("--lr", ao.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  ta->add_option("--seed", ao.seed, "Data, initialization and shuffling seed");
  ta->add_option("--log", ao.log, "Per-epoch loss CSV");

  TaskStreamParams gp;
  std::string gen_out;
  auto* gt = app.add_subcommand("gen-tasks", "Write a synthetic class-incremental task stream");
  gt->add_option("--out", gen_out, "Task CSV path")->required();
  gt->add_option("--tasks", gp.tasks, "Number of tasks");
  gt->add_option("--seq-len", gp.seq_len, "Steps per sequence");
  gt->add_option("--features", gp.features, "Features per step");
  gt->add_option("--train-per-class", gp.train_per_class, "Training sequences per subclass");
  gt->add_option("--test-per-class", gp.test_per_class, "Test sequences per subclass");
  gt->add_option("--margin", gp.margin, "Subclass separation in noise units")
      ->check(CLI::PositiveNumber);
  gt->add_option("--seed", gp.seed, "Seed");

  ClOpts co;
  auto* cl = app.add_subcommand("cl-run", "Class-incremental training over a task stream");
  cl->add_option("--tasks", co.tasks, "Task CSV")->required()->check(CLI::ExistingFile);
  cl->add_option("--replay", co.replay, "on or off")->check(CLI::IsMember({"on", "off"}));
  cl->add_option("--out", co.out, "Output directory")->required();
  cl->add_option("--seq-len", co.seq_len, "Steps per sequence in the CSV")
      ->check(CLI::PositiveNumber);
  cl->add_option("--hidden", co.hidden, "LSTM width")->check(CLI::PositiveNumber);
  cl->add_option("--epochs", co.epochs, "Epochs per task")->check(CLI::PositiveNumber);
  cl->add_option("--batch", co.batch, "Batch size")->check(CLI::PositiveNumber);
  cl->add_option("--lr", co.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  cl->add_option("--memory", co.memory, "Exemplars kept per task");
  cl->add_option("--seed", co.seed, "Seed");

  std::string report_dir;
  auto* rep = app.add_subcommand("report", "Summarize a metrics.csv");
  rep->add_option("--in", report_dir, "Run directory")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*simulate) return cmd_simulate(sim);
    if (*tf) return cmd_train_forecaster(fo);
    if (*ta) return cmd_train_allocator(ao);
    if (*gt) return cmd_gen_tasks(gp, gen_out);
    if (*cl) return cmd_cl_run(co);
    if (*rep) return cmd_report(report_dir);
  } catch (const UsageError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kValidation;
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kValidation;
  } catch (const ClassificationError& e) {
    fmt::print(stderr, "label error: {}\n", e.what());
    return kValidation;
  } catch (const nn::CheckpointError& e) {
    fmt::print(stderr, "checkpoint error: {}\n", e.what());
    return kValidation;
  } catch (const std::logic_error& e) {
    fmt::print(stderr, "invalid input: {}\n", e.what());
    return kValidation;
  } catch (const SimulationError& e) {
    fmt::print(stderr, "simulation failed at frame {} slot {}: {}\n", e.frame(), e.slot(),
               e.what());
    return kRuntime;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kRuntime;
  }
  return kValidation;
}
