// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "msmu/runtime.hpp"

using namespace msmu;

namespace {

void BM_EmbbRate(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<double> p(n, 0.1);
  std::vector<double> g(n, 1e-10);
  for (auto _ : state) benchmark::DoNotOptimize(embb_rate(p, g, 360e3, 1e-13));
}
BENCHMARK(BM_EmbbRate)->Arg(7)->Arg(64);

void BM_UrllcRate(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<double> p(n, 0.1);
  std::vector<double> g(n, 1e-10);
  std::vector<std::uint8_t> psi(n, 1);
  const UrllcRateParams params{720e3, 0.125e-3, 1e-5, 1e-13, 1.0, 1.0};
  for (auto _ : state) benchmark::DoNotOptimize(urllc_rate(p, g, psi, params));
}
BENCHMARK(BM_UrllcRate)->Arg(4)->Arg(64);

void BM_OracleAllocate(benchmark::State& state) {
  const Scenario s;
  OracleInstance inst;
  inst.ues = 2;
  inst.o_ur = 1;
  inst.o_em = 2;
  inst.gains = {1e-10, 2e-10, 3e-10, 1e-10, 5e-11, 2e-10};
  inst.service = {Service::urllc, Service::embb};
  inst.embb_backlog_bits = {0.0, 4e3};
  inst.urllc_load = {50.0, 0.0};
  inst.fixed_latency_s = {1e-4, 0.0};
  inst.levels = {0.1, 0.4, 1.0};
  for (auto _ : state) benchmark::DoNotOptimize(oracle_allocate(inst, s));
}
BENCHMARK(BM_OracleAllocate);

void BM_ForecastInference(benchmark::State& state) {
  const Scenario s;
  const ForecasterModel m(ForecasterConfig::from_scenario(s), 1);
  TrafficGenerator gen(s, 1);
  std::vector<DemandFrame> frames;
  for (int t = 0; t < 20; ++t) frames.push_back(gen.next_frame());
  const auto in = build_lsp_input(frames, s.history_frames, 20, s.num_rus);
  for (auto _ : state) benchmark::DoNotOptimize(forecast(m, in));
}
BENCHMARK(BM_ForecastInference)->Unit(benchmark::kMillisecond);

void BM_AllocatorSlot(benchmark::State& state) {
  const Scenario s;
  const AllocatorModel m(AllocatorConfig::from_scenario(s), 1);
  A1Message a1;
  a1.omega_em.assign(static_cast<std::size_t>(s.num_ues), 80.0);
  a1.omega_ur.assign(static_cast<std::size_t>(s.num_ues), 10.0);
  a1.route = RoutingDecision::uniform(s.num_rus, s.num_ues);
  a1.phi.assign(static_cast<std::size_t>(s.num_rus), 0.3);
  AllocatorSession session(m, s);
  const std::vector<SlotFeedback> fb(static_cast<std::size_t>(s.num_ues));
  session.begin_frame(a1);
  for (auto _ : state) {
    if (session.next_slot() > s.slots_per_frame()) session.begin_frame(a1);
    benchmark::DoNotOptimize(session.predict());
    session.observe(fb);
  }
}
BENCHMARK(BM_AllocatorSlot)->Unit(benchmark::kMicrosecond);

void BM_SimulateFrames(benchmark::State& state) {
  const Scenario s;
  const auto kind = static_cast<ControllerKind>(state.range(0));
  for (auto _ : state) {
    auto c = make_controllers(kind, s, {});
    benchmark::DoNotOptimize(run_simulation(s, *c.planner, *c.scheduler, {10, 1, 1, {}}));
  }
  state.SetLabel(to_string(kind));
}
BENCHMARK(BM_SimulateFrames)
    ->Arg(static_cast<int>(ControllerKind::heuristic))
    ->Arg(static_cast<int>(ControllerKind::oracle))
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
