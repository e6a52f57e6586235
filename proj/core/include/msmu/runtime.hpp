// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "msmu/allocator.hpp"
#include "msmu/forecaster.hpp"
#include "msmu/messages.hpp"
#include "msmu/oracle.hpp"
#include "msmu/phy.hpp"
#include "msmu/ran_state.hpp"
#include "msmu/scenario.hpp"
#include "msmu/slicer.hpp"
#include "msmu/traffic.hpp"

namespace msmu {

/// A module failure inside the loop, tagged with where it happened.
class SimulationError : public std::runtime_error {
 public:
  SimulationError(int frame, int slot, const std::string& what);
  int frame() const noexcept { return frame_; }
  int slot() const noexcept { return slot_; }

 private:
  int frame_;
  int slot_;
};

enum class ControllerKind { learned, oracle, heuristic };

const char* to_string(ControllerKind k);
/// Throws std::invalid_argument for unknown names.
ControllerKind parse_controller(const std::string& name);

/// Per-frame gains for every RU, sub-band and UE.
GainTable draw_gains(const Scenario& s, const std::vector<Point>& rus,
                     const std::vector<Point>& ues, const std::vector<BwpLayout>& layouts,
                     std::mt19937_64& rng);

/// Frame-level policy. `history` holds every frame before `t` as reported over O1.
class LongTermController {
 public:
  virtual ~LongTermController() = default;
  virtual A1Message plan(int t, const std::vector<DemandFrame>& history,
                         const DemandFrame& truth) = 0;
};

/// What a short-term controller may read while building one slot's grid.
struct SlotContext {
  int t = 0;
  int slot = 1;  // 1-based
  const A1Message* a1 = nullptr;
  const QueueState* queues = nullptr;
  const GainTable* gains = nullptr;
  const std::vector<BwpLayout>* layouts = nullptr;
};

/// Slot-level policy. `prepare` runs once per slot on the loop thread; `allocate_ru` must be
/// safe to call concurrently for distinct RUs.
class ShortTermController {
 public:
  virtual ~ShortTermController() = default;
  virtual void begin_frame(const A1Message& a1) { (void)a1; }
  virtual void prepare(const SlotContext& ctx) { (void)ctx; }
  virtual RuAllocation allocate_ru(int ru, const SlotContext& ctx) const = 0;
  virtual void observe(const SlotContext& ctx, const AllocationGrid& grid) {
    (void)ctx;
    (void)grid;
  }
};

/// Learned forecaster + ratio slicing.
class ForecastPlanner : public LongTermController {
 public:
  ForecastPlanner(const ForecasterModel& model, const Scenario& s, SlicePolicy policy);
  A1Message plan(int t, const std::vector<DemandFrame>& history, const DemandFrame& truth) override;

 private:
  const ForecasterModel* model_;
  Scenario s_;
  SlicePolicy policy_;
};

/// Repeats the previous frame's demand and route.
class PersistencePlanner : public LongTermController {
 public:
  PersistencePlanner(const Scenario& s, SlicePolicy policy);
  A1Message plan(int t, const std::vector<DemandFrame>& history, const DemandFrame& truth) override;

 private:
  Scenario s_;
  SlicePolicy policy_;
};

/// Uses the frame's true demand and route.
class TruthPlanner : public LongTermController {
 public:
  TruthPlanner(const Scenario& s, SlicePolicy policy);
  A1Message plan(int t, const std::vector<DemandFrame>& history, const DemandFrame& truth) override;

 private:
  Scenario s_;
  SlicePolicy policy_;
};

/// LSTM allocator streamed slot by slot, then discretized and power-projected per RU.
class LearnedScheduler : public ShortTermController {
 public:
  LearnedScheduler(const AllocatorModel& model, const Scenario& s);
  void begin_frame(const A1Message& a1) override;
  void prepare(const SlotContext& ctx) override;
  RuAllocation allocate_ru(int ru, const SlotContext& ctx) const override;
  void observe(const SlotContext& ctx, const AllocationGrid& grid) override;

 private:
  Scenario s_;
  AllocatorSession session_;
  SspPrediction pred_;
};

/// RBs of each BWP shared in proportion to backlog; uRLLC backlog takes precedence.
class ProportionalScheduler : public ShortTermController {
 public:
  explicit ProportionalScheduler(const Scenario& s);
  RuAllocation allocate_ru(int ru, const SlotContext& ctx) const override;

 private:
  Scenario s_;
};

/// Exhaustive search per RU over a truncated grid.
class OracleScheduler : public ShortTermController {
 public:
  explicit OracleScheduler(const Scenario& s);
  RuAllocation allocate_ru(int ru, const SlotContext& ctx) const override;

  /// The instance the scheduler would solve on `ru`, with `ues_out` mapping instance UEs back.
  OracleInstance instance(int ru, const SlotContext& ctx, std::vector<int>& ues_out) const;

 private:
  Scenario s_;
};

struct MetricsRow {
  int frame = 0;
  double objective = 0.0;
  double embb_tput_bps = 0.0;
  double worst_ur_latency_s = 0.0;
  std::vector<double> phi;
  std::int64_t q_total_bytes = 0;
  std::int64_t drops_bytes = 0;  // dropped during this frame
  double c10e_freq = 1.0;
  double c10h_freq = 1.0;
};

struct MetricsLog {
  int rus = 0;
  std::vector<MetricsRow> rows;
};

std::string metrics_header(int rus);
void write_metrics_csv(std::ostream& out, const MetricsLog& log);
/// Parses a metrics.csv; the RU count is taken from the header.
MetricsLog read_metrics_csv(std::istream& in);

/// Writes `dir/metrics.csv`. Throws std::invalid_argument on an empty log (nothing is written)
/// and std::runtime_error if the file cannot be written.
std::filesystem::path emit_report(const MetricsLog& log, const std::filesystem::path& dir);

struct SimulationConfig {
  int frames = 100;
  std::uint64_t seed = 1;
  int threads = 1;
  SlicePolicy slice_policy;
};

/// Optional taps on the message channels.
struct SimulationHooks {
  std::function<void(const A1Message&)> on_a1;
  std::function<void(const E2Message&, const FeasibilityReport&)> on_e2;
  std::function<void(const O1Report&)> on_o1;
};

struct SimulationResult {
  MetricsLog log;
  long grids = 0;
  long feasible_grids = 0;
  std::int64_t arrived_bytes = 0;
  std::int64_t served_bytes = 0;
  std::int64_t queued_bytes = 0;
  std::int64_t dropped_bytes = 0;
  bool conserved = false;
  long urllc_checks = 0;  // (frame, UE) pairs with uRLLC activity
  long urllc_within_budget = 0;
  int unbounded_frames = 0;

  double reliability() const {
    return urllc_checks == 0 ? 1.0
                             : static_cast<double>(urllc_within_budget) /
                                   static_cast<double>(urllc_checks);
  }
};

SimulationResult run_simulation(const Scenario& s, LongTermController& planner,
                                ShortTermController& scheduler, const SimulationConfig& cfg,
                                const SimulationHooks& hooks = {});

/// Controllers owned together, ready for run_simulation.
struct ControllerPair {
  std::unique_ptr<LongTermController> planner;
  std::unique_ptr<ShortTermController> scheduler;
};

/// Learned controllers need both models; the others ignore them.
ControllerPair make_controllers(ControllerKind kind, const Scenario& s, SlicePolicy policy,
                                const ForecasterModel* forecaster = nullptr,
                                const AllocatorModel* allocator = nullptr);

}  // namespace msmu
