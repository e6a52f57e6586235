// SPDX-License-Identifier: Apache-2.0
#include "msmu/oracle.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <stdexcept>

namespace msmu {

void OracleInstance::validate() const {
  if (ues < 1 || ues > kOracleMaxUes) {
    throw std::invalid_argument(fmt::format("oracle: {} UEs outside [1, {}]", ues, kOracleMaxUes));
  }
  if (o_ur < 0 || o_em < 0 || subbands() > kOracleMaxRbs) {
    throw std::invalid_argument(fmt::format("oracle: {} RBs exceed {}", subbands(), kOracleMaxRbs));
  }
  if (levels.empty() || static_cast<int>(levels.size()) > kOracleMaxLevels) {
    throw std::invalid_argument(fmt::format("oracle: {} power levels outside [1, {}]",
                                            levels.size(), kOracleMaxLevels));
  }
  for (double l : levels) {
    if (!(l > 0.0)) throw std::invalid_argument("oracle: power levels must be positive");
  }
  const auto u = static_cast<std::size_t>(ues);
  if (gains.size() != static_cast<std::size_t>(subbands()) * u || service.size() != u ||
      embb_backlog_bits.size() != u || urllc_load.size() != u || fixed_latency_s.size() != u) {
    throw std::invalid_argument("oracle: per-UE vectors have the wrong size");
  }
  if (!(r_max_bps > 0.0) || lambda < 0.0) {
    throw std::invalid_argument("oracle: R_max must be positive and lambda non-negative");
  }
}

GridScore score_grid(const OracleInstance& inst, const RuAllocation& grid, const Scenario& s) {
  GridScore sc;
  GainTable gains{inst.ues, {inst.gains}};
  PowerGrid pg{{grid}};
  sc.power_ok = grid.o_ur == inst.o_ur && grid.o_em == inst.o_em && grid.num_ues == inst.ues &&
                check_power_feasible(pg, gains, s).feasible();
  for (int o = 0; o < grid.subbands() && sc.power_ok; ++o) {
    for (int u = 0; u < grid.num_ues; ++u) {
      const auto i = grid.idx(o, u);
      const bool holds = grid.psi_em[i] != 0 || grid.psi_ur[i] != 0;
      if (holds && (grid.psi_ur[i] != 0) != (inst.service[static_cast<std::size_t>(u)] == Service::urllc)) {
        sc.power_ok = false;
      }
    }
  }
  const auto rates = ru_rates(grid, gains, 0, s);
  const double delta = s.slot_s();
  const double proc = s.proc_delay_s();
  constexpr double inf = std::numeric_limits<double>::infinity();
  for (int u = 0; u < inst.ues; ++u) {
    const auto ui = static_cast<std::size_t>(u);
    sc.embb_tput_bps += std::min(rates.embb[ui], inst.embb_backlog_bits[ui] / delta);
    if (inst.urllc_load[ui] <= 0.0) continue;
    const double r = rates.urllc[ui];
    const double lat = r > 0.0 ? inst.fixed_latency_s[ui] + inst.urllc_load[ui] / r + proc : inf;
    sc.worst_latency_s = std::max(sc.worst_latency_s, lat);
    if (r > 0.0) {
      sc.worst_finite_latency_s = std::max(sc.worst_finite_latency_s, lat);
    } else {
      ++sc.unserved;
    }
    if (!(lat <= s.latency_budget_s)) ++sc.latency_violations;
  }
  const double pen =
      inst.lambda == 0.0 ? 0.0 : inst.lambda * sc.worst_latency_s / s.latency_budget_s;
  sc.objective = sc.embb_tput_bps / inst.r_max_bps - pen;
  return sc;
}

void enumerate_grids(const OracleInstance& inst,
                     const std::function<void(const RuAllocation&)>& visit) {
  inst.validate();
  struct Choice {
    int ue;
    double power;
  };
  const int nsb = inst.subbands();
  std::vector<std::vector<Choice>> options(static_cast<std::size_t>(nsb));
  for (int o = 0; o < nsb; ++o) {
    const Service band = o < inst.o_ur ? Service::urllc : Service::embb;
    auto& opt = options[static_cast<std::size_t>(o)];
    opt.push_back({-1, 0.0});
    for (int u = 0; u < inst.ues; ++u) {
      if (inst.service[static_cast<std::size_t>(u)] != band) continue;
      for (double l : inst.levels) opt.push_back({u, l});
    }
  }
  std::vector<std::size_t> pick(static_cast<std::size_t>(nsb), 0);
  while (true) {
    RuAllocation a(inst.o_ur, inst.o_em, inst.ues);
    for (int o = 0; o < nsb; ++o) {
      const auto& c = options[static_cast<std::size_t>(o)][pick[static_cast<std::size_t>(o)]];
      if (c.ue < 0) continue;
      const auto i = a.idx(o, c.ue);
      if (o < inst.o_ur) {
        a.psi_ur[i] = 1;
        a.p_ur[i] = c.power;
      } else {
        a.psi_em[i] = 1;
        a.p_em[i] = c.power;
      }
    }
    visit(a);
    int k = nsb - 1;
    for (; k >= 0; --k) {
      auto& p = pick[static_cast<std::size_t>(k)];
      if (++p < options[static_cast<std::size_t>(k)].size()) break;
      p = 0;
    }
    if (k < 0) break;
  }
}

OracleResult oracle_allocate(const OracleInstance& inst, const Scenario& s) {
  OracleResult best;
  bool have_relaxed = false;
  RuAllocation relaxed;
  GridScore relaxed_score;
  auto relaxed_key = [&](const GridScore& g) {
    const double pen = inst.lambda * g.worst_finite_latency_s / s.latency_budget_s;
    return g.embb_tput_bps / inst.r_max_bps - pen;
  };
  enumerate_grids(inst, [&](const RuAllocation& a) {
    ++best.enumerated;
    const auto sc = score_grid(inst, a, s);
    if (!sc.power_ok) return;
    if (sc.feasible() && (!best.feasible || sc.objective > best.score.objective)) {
      best.feasible = true;
      best.grid = a;
      best.score = sc;
    }
    const auto rank = [&](const GridScore& g) { return std::pair{g.latency_violations, g.unserved}; };
    if (!have_relaxed || rank(sc) < rank(relaxed_score) ||
        (rank(sc) == rank(relaxed_score) && relaxed_key(sc) > relaxed_key(relaxed_score))) {
      have_relaxed = true;
      relaxed = a;
      relaxed_score = sc;
    }
  });
  if (!best.feasible) {
    best.grid = relaxed;
    best.score = relaxed_score;
  }
  return best;
}

}  // namespace msmu
