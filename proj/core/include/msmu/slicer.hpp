// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "msmu/ran_state.hpp"
#include "msmu/scenario.hpp"

namespace msmu {

struct SliceDecision {
  std::vector<double> phi;         // per RU
  std::vector<BwpLayout> layouts;  // per RU
};

/// Ratio rule on routed demand in bit/s, clamped to [phi_min, phi_max]. Zero eMBB demand gives
/// phi_max.
double slice_phi(double urllc_bps, double embb_bps, double lat_th_em_s, double lat_th_ur_s,
                 double phi_min, double phi_max);

struct SlicePolicy {
  /// Keep at least one uRLLC RB on every RU, so backlog left over from earlier frames can drain.
  bool urllc_floor = false;
};

/// Per-RU split from per-UE demand forecasts (packets/s) and routes.
SliceDecision slice_bandwidth(const Scenario& s, std::span<const double> omega_em_pps,
                              std::span<const double> omega_ur_pps, const RoutingDecision& r,
                              SlicePolicy policy = {});

/// Every RU at the same fraction.
SliceDecision uniform_slice(const Scenario& s, double phi);

}  // namespace msmu
