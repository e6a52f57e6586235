// SPDX-License-Identifier: Apache-2.0
#include "msmu/slicer.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <stdexcept>

namespace msmu {

double slice_phi(double urllc_bps, double embb_bps, double lat_th_em_s, double lat_th_ur_s,
                 double phi_min, double phi_max) {
  if (!(lat_th_em_s > 0.0) || !(lat_th_ur_s > 0.0)) {
    throw std::invalid_argument("slice_phi: latency thresholds must be positive");
  }
  if (!(phi_min >= 0.0 && phi_min <= phi_max && phi_max <= 1.0)) {
    throw std::invalid_argument(fmt::format("slice_phi: bad bounds [{}, {}]", phi_min, phi_max));
  }
  if (urllc_bps < 0.0 || embb_bps < 0.0) throw std::invalid_argument("slice_phi: negative demand");
  if (embb_bps == 0.0) return phi_max;
  const double phi = (urllc_bps / embb_bps) * (lat_th_em_s / lat_th_ur_s);
  return std::clamp(phi, phi_min, phi_max);
}

SliceDecision slice_bandwidth(const Scenario& s, std::span<const double> omega_em_pps,
                              std::span<const double> omega_ur_pps, const RoutingDecision& r,
                              SlicePolicy policy) {
  if (static_cast<int>(omega_em_pps.size()) != r.ues ||
      static_cast<int>(omega_ur_pps.size()) != r.ues || r.rus != s.num_rus) {
    throw std::invalid_argument("slice_bandwidth: demand and route shapes disagree");
  }
  const double z_em = s.pkt_size_em_bytes * 8.0;
  const double z_ur = s.pkt_size_ur_bytes * 8.0;
  const double phi_max = s.phi_max();
  const double floor_phi = std::min(s.urllc().rb_bandwidth_hz / s.ru_bandwidth_hz, phi_max);
  SliceDecision d;
  for (int e = 0; e < r.rus; ++e) {
    double em = 0.0;
    double ur = 0.0;
    for (int u = 0; u < r.ues; ++u) {
      const auto ui = static_cast<std::size_t>(u);
      em += r.at(e, u) * omega_em_pps[ui] * z_em;
      ur += r.at(e, u) * omega_ur_pps[ui] * z_ur;
    }
    double phi = slice_phi(ur, em, s.lat_th_em_s, s.lat_th_ur_s, 0.0, phi_max);
    if (policy.urllc_floor) phi = std::max(phi, floor_phi);
    d.phi.push_back(phi);
    d.layouts.push_back(s.layout(phi));
  }
  return d;
}

SliceDecision uniform_slice(const Scenario& s, double phi) {
  SliceDecision d;
  d.phi.assign(static_cast<std::size_t>(s.num_rus), phi);
  d.layouts.assign(static_cast<std::size_t>(s.num_rus), s.layout(phi));
  return d;
}

}  // namespace msmu
