// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion, exit 0 only when every selected one passes.
#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "grad_cases.hpp"
#include "msmu/continual.hpp"
#include "msmu/runtime.hpp"
#include "msmu/scenario.hpp"

using namespace msmu;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double limit_s;
  std::function<Outcome()> run;
};

std::string scenario_dir = MSMU_SCENARIO_DIR;

Scenario scenario(const std::string& file) { return load_scenario_file(scenario_dir + "/" + file); }

std::vector<DemandFrame> trace(const Scenario& s, int frames, std::uint64_t seed) {
  TrafficGenerator g(s, seed);
  std::vector<DemandFrame> out;
  out.reserve(static_cast<std::size_t>(frames));
  for (int t = 0; t < frames; ++t) out.push_back(g.next_frame());
  return out;
}

// Models trained by criteria 6 and 7, reused by the simulation criteria when present.
std::unique_ptr<ForecasterModel> trained_forecaster;
std::unique_ptr<AllocatorModel> trained_allocator;

Outcome formula_fidelity() {
  const auto n1 = numerology_params(1, 0.01);
  const auto n2 = numerology_params(2, 0.01);
  Scenario s;
  s.ru_bandwidth_hz = 3e6;
  const auto l = s.layout(0.5);
  const bool ok = n1.rb_bandwidth_hz == 360e3 && n1.tti_s == 0.25e-3 && n1.ttis_per_frame == 40 &&
                  n2.rb_bandwidth_hz == 720e3 && n2.tti_s == 0.125e-3 && n2.ttis_per_frame == 80 &&
                  l.o_ur == 2 && l.o_em == 3;
  return {ok, fmt::format("g=1: {} Hz/{} s/S={}; g=2: {} Hz/{} s/S={}; B=3 MHz, phi=0.5: O_ur={} O_em={}",
                          n1.rb_bandwidth_hz, n1.tti_s, n1.ttis_per_frame, n2.rb_bandwidth_hz,
                          n2.tti_s, n2.ttis_per_frame, l.o_ur, l.o_em)};
}

Outcome gradient_integrity() {
  double layers = 0.0;
  std::string worst_layer;
  for (const auto& [name, err] : grad_cases::layer_errors(11)) {
    if (err >= layers) {
      layers = err;
      worst_layer = name;
    }
  }

  // Sinusoid traffic so both demand targets vary inside the batch.
  Scenario s = scenario("forecast_sinusoid.ini");
  s.num_ues = 2;
  ForecasterModel fm(ForecasterConfig::from_scenario(s), 5);
  const auto frames = trace(s, 40, 5);
  const auto samples = make_forecast_samples(frames, s.history_frames, s.num_rus, 20, 21);
  const std::vector<const ForecastSample*> fbatch{&samples[0], &samples[1]};
  const auto scales = target_scales(samples);
  const double f_err = nn::grad_check(
      [&] {
        std::mt19937_64 drop(17);
        return forecaster_loss(fm, fbatch, scales, true, &drop).total;
      },
      fm.params(), 1e-5, 12, 3);

  AllocatorModel am(AllocatorConfig::from_scenario(s), 6);
  AllocatorDataParams dp;
  dp.samples = 2;
  dp.seed = 9;
  dp.p_zero = 0.0;
  const auto data = make_allocator_dataset(s, dp);
  const std::vector<const AllocatorSample*> abatch{&data[0], &data[1]};
  const double a_err = nn::grad_check(
      [&] {
        std::mt19937_64 drop(19);
        return allocator_loss(am, abatch, s, true, &drop).total;
      },
      am.params(), 1e-5, 24, 4);

  const bool ok = layers < 1e-4 && f_err < 1e-4 && a_err < 1e-4;
  return {ok, fmt::format("worst layer {:.2e} ({}), forecaster loss {:.2e}, allocator loss {:.2e}",
                          layers, worst_layer, f_err, a_err)};
}

Outcome revin_round_trip() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> level(0.0, 1000.0);
  std::uniform_int_distribution<int> route(0, 3);
  constexpr int kBatches = 1000;
  constexpr int kWindows = 8;
  constexpr int kRows = 24 * 10;
  double worst = 0.0;
  for (int b = 0; b < kBatches; ++b) {
    for (int w = 0; w < kWindows; ++w) {
      nn::Mat x = nn::Mat::Zero(kRows, 6);
      const double em = level(rng);
      const double ur = 0.3 * level(rng);
      std::poisson_distribution<int> pe(em);
      std::poisson_distribution<int> pu(ur + 1e-9);
      for (int r = 0; r < kRows; ++r) {
        x(r, 0) = pe(rng);
        x(r, 1) = pu(rng);
        x(r, 2 + route(rng)) = 1.0;
      }
      const auto n = revin_normalize(x, 1e-10);
      for (int c = 0; c < 6; ++c) {
        const nn::Mat back = revin_denormalize(n.normalized.col(c), n.stats, c);
        worst = std::max(worst, (back - x.col(c)).cwiseAbs().maxCoeff());
      }
    }
  }
  return {worst <= 1e-9, fmt::format("max abs error {:.3e} over {} batches of {} windows", worst,
                                     kBatches, kWindows)};
}

Outcome feasibility_totality() {
  const Scenario s = scenario("default.ini");
  std::unique_ptr<ForecasterModel> fm_fresh;
  std::unique_ptr<AllocatorModel> am_fresh;
  const ForecasterModel* fm = trained_forecaster.get();
  const AllocatorModel* am = trained_allocator.get();
  if (fm == nullptr) {
    fm_fresh = std::make_unique<ForecasterModel>(ForecasterConfig::from_scenario(s), 1);
    fm = fm_fresh.get();
  }
  if (am == nullptr) {
    am_fresh = std::make_unique<AllocatorModel>(AllocatorConfig::from_scenario(s), 1);
    am = am_fresh.get();
  }
  bool ok = true;
  std::string detail;
  for (auto kind : {ControllerKind::learned, ControllerKind::heuristic, ControllerKind::oracle}) {
    auto c = make_controllers(kind, s, {}, fm, am);
    const auto r = run_simulation(s, *c.planner, *c.scheduler, {1000, 1, 1, {}});
    const bool conserved = r.conserved && r.arrived_bytes == r.served_bytes + r.queued_bytes + r.dropped_bytes;
    ok = ok && r.feasible_grids == r.grids && conserved && r.log.rows.size() == 1000;
    detail += fmt::format("{}{}: {}/{} grids feasible, conserved {}", detail.empty() ? "" : "; ",
                          to_string(kind), r.feasible_grids, r.grids, conserved ? "yes" : "no");
  }
  if (fm_fresh || am_fresh) detail += " (learned models untrained)";
  return {ok, detail};
}

Outcome oracle_correctness() {
  const Scenario s = scenario("default.ini");
  std::mt19937_64 rng(55);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  int violations = 0;
  int monotone_breaks = 0;
  int feasible = 0;
  long grids = 0;
  for (int i = 0; i < 50; ++i) {
    OracleInstance inst;
    inst.ues = 1 + static_cast<int>(rng() % 2);
    const int rbs = 1 + static_cast<int>(rng() % 3);
    inst.o_ur = static_cast<int>(rng() % static_cast<unsigned>(rbs + 1));
    inst.o_em = rbs - inst.o_ur;
    for (int k = 0; k < rbs * inst.ues; ++k) inst.gains.push_back(std::pow(10.0, -13.5 + 4.0 * d(rng)));
    for (int u = 0; u < inst.ues; ++u) {
      const bool ur = d(rng) < 0.5;
      inst.service.push_back(ur ? Service::urllc : Service::embb);
      inst.embb_backlog_bits.push_back(ur ? 0.0 : 2e3 * d(rng));
      inst.urllc_load.push_back(ur ? 100.0 * d(rng) : 0.0);
      inst.fixed_latency_s.push_back(ur ? 2e-4 * d(rng) : 0.0);
    }
    inst.levels = {0.1, 0.4, 1.0};
    inst.r_max_bps = s.r_max();
    double prev = std::numeric_limits<double>::infinity();
    bool chain = true;
    for (double lambda : {0.0, 0.5, 1.0, 2.0, 10.0}) {
      inst.lambda = lambda;
      const auto r = oracle_allocate(inst, s);
      grids += r.enumerated;
      if (lambda == 1.0 && r.feasible) ++feasible;
      enumerate_grids(inst, [&](const RuAllocation& a) {
        const auto sc = score_grid(inst, a, s);
        if (sc.feasible() && (!r.feasible || sc.objective > r.score.objective)) ++violations;
      });
      if (!r.feasible) {
        chain = false;
        continue;
      }
      if (chain && r.score.worst_latency_s > prev) ++monotone_breaks;
      prev = r.score.worst_latency_s;
    }
  }
  return {violations == 0 && monotone_breaks == 0 && feasible > 0,
          fmt::format("{} grids scored, {} better alternatives, {} latency increases in lambda, {}/50 "
                      "instances feasible",
                      grids, violations, monotone_breaks, feasible)};
}

Outcome forecaster_skill() {
  const Scenario s = scenario("forecast_sinusoid.ini");
  const auto frames = trace(s, 5000, 7);
  const auto train = make_forecast_samples(frames, s.history_frames, s.num_rus, 1, 4000);
  const auto test = make_forecast_samples(frames, s.history_frames, s.num_rus, 4001, 5000);
  auto m = std::make_unique<ForecasterModel>(ForecasterConfig::from_scenario(s), 1);
  ForecasterTrainParams p;
  p.epochs = 4;
  p.steps_per_epoch = 100;
  p.batch_size = 4;
  p.lr = 1e-3;
  p.seed = 1;
  train_forecaster(*m, train, p);
  const auto k = evaluate_forecaster(*m, test);
  const auto base = persistence_skill(test);
  const double ratio = k.demand_mse() / base.demand_mse();
  trained_forecaster = std::move(m);
  return {ratio <= 0.8 && k.route_acc >= 0.99,
          fmt::format("demand MSE {:.4f} vs persistence {:.4f} (ratio {:.3f}), route accuracy {:.4f}",
                      k.demand_mse(), base.demand_mse(), ratio, k.route_acc)};
}

Outcome allocator_skill() {
  const Scenario s = scenario("default.ini");
  AllocatorDataParams dp;
  dp.samples = 4000;
  dp.seed = 1;
  auto data = make_allocator_dataset(s, dp);
  const auto cut = data.size() - data.size() / 5;
  const std::vector<AllocatorSample> test(data.begin() + static_cast<std::ptrdiff_t>(cut), data.end());
  data.resize(cut);
  auto m = std::make_unique<AllocatorModel>(AllocatorConfig::from_scenario(s), 1);
  AllocatorTrainParams p;
  p.epochs = 30;
  p.batch_size = 16;
  p.lr = 1e-4;
  p.seed = 1;
  train_allocator(*m, data, s, p);
  const auto k = evaluate_allocator(*m, test, s);
  const double prb = k.prb_mse / k.prb_var;
  const double pw = k.power_mse / k.power_var;
  trained_allocator = std::move(m);
  return {k.service_acc >= 0.99 && prb <= 0.5 && pw <= 0.5,
          fmt::format("service accuracy {:.4f}, PRB MSE/var {:.3f}, power MSE/var {:.3f}", k.service_acc,
                      prb, pw)};
}

Outcome continual_learning() {
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TaskStreamParams tp;
    tp.seed = seed;
    const auto stream = make_task_stream(tp);
    ClRunParams on;
    on.train.seed = seed;
    auto off = on;
    off.replay = false;
    const auto a = run_continual(stream, on).final_metrics;
    const auto b = run_continual(stream, off).final_metrics;
    const bool pass = a.aa >= 0.9 && a.af <= 0.05 && a.af < b.af;
    ok = ok && pass;
    detail += fmt::format("{}seed {}: AA {:.3f} AF {:.3f} (no replay AF {:.3f})", seed == 1 ? "" : "; ",
                          seed, a.aa, a.af, b.af);
  }
  return {ok, detail};
}

Outcome reliability() {
  const Scenario s = scenario("reliability_2ue.ini");
  auto c = make_controllers(ControllerKind::oracle, s, SlicePolicy{true});
  const auto r = run_simulation(s, *c.planner, *c.scheduler, {10000, 7, 1, SlicePolicy{true}});
  return {r.reliability() >= s.eps2 && r.urllc_checks > 0,
          fmt::format("{}/{} uRLLC (frame, UE) pairs within {} s ({:.5f} >= {})", r.urllc_within_budget,
                      r.urllc_checks, s.latency_budget_s, r.reliability(), s.eps2)};
}

Outcome determinism() {
  const Scenario s = scenario("default.ini");
  std::unique_ptr<ForecasterModel> fm_fresh;
  std::unique_ptr<AllocatorModel> am_fresh;
  const ForecasterModel* fm = trained_forecaster.get();
  const AllocatorModel* am = trained_allocator.get();
  if (fm == nullptr) {
    fm_fresh = std::make_unique<ForecasterModel>(ForecasterConfig::from_scenario(s), 1);
    fm = fm_fresh.get();
  }
  if (am == nullptr) {
    am_fresh = std::make_unique<AllocatorModel>(AllocatorConfig::from_scenario(s), 1);
    am = am_fresh.get();
  }
  bool ok = true;
  std::string detail;
  for (auto kind : {ControllerKind::learned, ControllerKind::heuristic, ControllerKind::oracle}) {
    std::string first;
    int same = 0;
    int runs = 0;
    for (int threads : {1, 1, 2, 4}) {
      auto c = make_controllers(kind, s, {}, fm, am);
      const auto r = run_simulation(s, *c.planner, *c.scheduler, {100, 11, threads, {}});
      std::ostringstream out;
      write_metrics_csv(out, r.log);
      if (first.empty()) first = out.str();
      same += out.str() == first ? 1 : 0;
      ++runs;
    }
    ok = ok && same == runs;
    detail += fmt::format("{}{}: {}/{} identical", detail.empty() ? "" : "; ", to_string(kind), same, runs);
  }
  return {ok, detail + " (threads 1, 1, 2, 4)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only;
  app.add_option("--only", only, "Criteria to run (default: all)")->check(CLI::Range(1, 10));
  app.add_option("--scenario-dir", scenario_dir, "Directory holding the shipped scenarios");
  CLI11_PARSE(app, argc, argv);

  // Order matters: 6 and 7 train the models that 4 and 10 then drive.
  const std::vector<Criterion> all{
      {1, "formula fidelity", 1.0, formula_fidelity},
      {2, "gradient integrity", 30.0, gradient_integrity},
      {3, "ReVIN round trip", 5.0, revin_round_trip},
      {5, "oracle correctness and Pareto property", 60.0, oracle_correctness},
      {6, "forecaster skill", 300.0, forecaster_skill},
      {7, "allocator skill", 300.0, allocator_skill},
      {4, "feasibility totality", 120.0, feasibility_totality},
      {8, "continual learning", 600.0, continual_learning},
      {9, "reliability", 120.0, reliability},
      {10, "determinism", 120.0, determinism},
  };
  const std::set<int> selected(only.begin(), only.end());
  std::vector<std::string> lines(11);
  bool all_pass = true;
  for (const auto& c : all) {
    if (!selected.empty() && selected.count(c.id) == 0) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, fmt::format("threw: {}", e.what())};
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = dt < c.limit_s;
    const bool pass = o.pass && in_time;
    all_pass = all_pass && pass;
    lines[static_cast<std::size_t>(c.id)] =
        fmt::format("criterion {:2d} {}: {} | {} | {:.1f} s (limit {:.0f} s{})", c.id,
                    pass ? "PASS" : "FAIL", c.name, o.detail, dt, c.limit_s, in_time ? "" : ", exceeded");
    fmt::print("{}\n", lines[static_cast<std::size_t>(c.id)]);
    std::fflush(stdout);
  }
  fmt::print("\nsummary\n");
  for (const auto& l : lines) {
    if (!l.empty()) fmt::print("{}\n", l);
  }
  return all_pass ? 0 : 1;
}
