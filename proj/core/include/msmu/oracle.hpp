// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "msmu/phy.hpp"
#include "msmu/scenario.hpp"
#include "msmu/traffic.hpp"

namespace msmu {

inline constexpr int kOracleMaxUes = 2;
inline constexpr int kOracleMaxRbs = 3;
inline constexpr int kOracleMaxLevels = 3;

/// One RU, one mini-slot, small enough to enumerate.
struct OracleInstance {
  int o_ur = 0;
  int o_em = 0;
  int ues = 0;
  std::vector<double> gains;              // o * U + u
  std::vector<Service> service;           // per UE, fixed for the slot
  std::vector<double> embb_backlog_bits;  // per UE
  std::vector<double> urllc_load;         // per UE, numerator of the radio latency term
  std::vector<double> fixed_latency_s;    // per UE, all non-radio terms
  std::vector<double> levels;             // candidate powers (W), each > 0
  double lambda = 1.0;
  double r_max_bps = 1e6;

  int subbands() const { return o_ur + o_em; }
  double gain(int o, int u) const {
    return gains[static_cast<std::size_t>(o) * static_cast<std::size_t>(ues) +
                 static_cast<std::size_t>(u)];
  }
  /// Throws std::invalid_argument when outside the enumeration bounds or malformed.
  void validate() const;
};

struct GridScore {
  bool power_ok = false;       // power set and orthogonality
  int latency_violations = 0;  // uRLLC UEs over the budget
  int unserved = 0;            // loaded uRLLC UEs with no rate
  double embb_tput_bps = 0.0;  // served, capped by backlog
  double worst_latency_s = 0.0;         // infinite when a loaded UE gets no rate
  double worst_finite_latency_s = 0.0;  // ignores UEs without rate
  double objective = 0.0;
  bool feasible() const { return power_ok && latency_violations == 0; }
};

/// Scores a single-RU grid against the instance.
GridScore score_grid(const OracleInstance& inst, const RuAllocation& grid, const Scenario& s);

/// Visits every grid: each RB is unassigned or held by a UE of the RB's service at one level.
/// Order is lexicographic in (RB 0 choice, RB 1 choice, ...).
void enumerate_grids(const OracleInstance& inst,
                     const std::function<void(const RuAllocation&)>& visit);

struct OracleResult {
  bool feasible = false;
  RuAllocation grid;
  GridScore score;
  long enumerated = 0;
};

/// Exhaustive maximizer of throughput/R_max - lambda * worst latency / D_ur subject to the power
/// set, orthogonality and the latency budget. First maximum in enumeration order wins. When no
/// grid meets the latency budget the result is marked infeasible and `grid` holds the best
/// power-feasible grid with the fewest latency violations, then the fewest unserved uRLLC UEs.
OracleResult oracle_allocate(const OracleInstance& inst, const Scenario& s);

}  // namespace msmu
