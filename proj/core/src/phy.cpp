// SPDX-License-Identifier: Apache-2.0
#include "msmu/phy.hpp"

#include <boost/math/special_functions/erf.hpp>
#include <fmt/format.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace msmu {

std::vector<cplx> los_steering(int antennas, double angle_rad) {
  if (antennas < 1) throw std::invalid_argument("antenna count must be positive");
  std::vector<cplx> h(static_cast<std::size_t>(antennas));
  const double norm = 1.0 / std::sqrt(static_cast<double>(antennas));
  for (int k = 0; k < antennas; ++k) {
    h[static_cast<std::size_t>(k)] = std::polar(norm, std::numbers::pi * k * std::sin(angle_rad));
  }
  return h;
}

ChannelRealization sample_channel(double chi, double xi, int antennas, std::mt19937_64& rng,
                                  double los_angle_rad) {
  if (chi < 0.0 || xi < 0.0) throw std::invalid_argument("channel parameters must be >= 0");
  ChannelRealization c;
  c.large_scale = chi;
  c.rician = xi;
  c.h = los_steering(antennas, los_angle_rad);
  const double los = std::isinf(xi) ? 1.0 : std::sqrt(xi / (xi + 1.0));
  const double nlos = std::isinf(xi) ? 0.0 : std::sqrt(1.0 / (xi + 1.0));
  // scattered part: per-antenna variance 1/K keeps E||h~||^2 = 1
  std::normal_distribution<double> n01(0.0, std::sqrt(0.5 / antennas));
  const double amp = std::sqrt(chi);
  for (auto& hk : c.h) {
    const double re = n01(rng);
    const double im = n01(rng);
    hk = amp * (los * hk + nlos * cplx(re, im));
  }
  c.gain = effective_gain(c.h);
  return c;
}

double effective_gain(std::span<const cplx> h) {
  double g = 0.0;
  for (const auto& v : h) g += std::norm(v);
  return g;
}

double pathloss_gain(double distance_m, double carrier_ghz) {
  const double d = std::max(distance_m, 10.0);
  const double pl_db = 28.0 + 22.0 * std::log10(d) + 20.0 * std::log10(carrier_ghz);
  return std::pow(10.0, -pl_db / 10.0);
}

double q_function(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

double q_inv(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::domain_error(fmt::format("q_inv: probability {} outside (0,1)", p));
  }
  return std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

double embb_rate(std::span<const double> p, std::span<const double> g, double rb_hz,
                 double noise_w) {
  if (p.size() != g.size()) throw std::invalid_argument("embb_rate: size mismatch");
  double r = 0.0;
  for (std::size_t o = 0; o < p.size(); ++o) {
    if (p[o] < 0.0) throw std::invalid_argument("embb_rate: negative power");
    r += rb_hz * std::log2(1.0 + p[o] * g[o] / noise_w);
  }
  return r;
}

double urllc_power_floor(double g, double noise_w, double snr_floor) {
  if (snr_floor == 0.0) return 0.0;
  if (g <= 0.0) return std::numeric_limits<double>::infinity();
  return noise_w * snr_floor / g;
}

double urllc_rb_rate(double p, double g, const UrllcRateParams& params) {
  const double penalty = q_inv(params.error_prob) *
                         std::sqrt(params.dispersion / (params.tti_s * params.rb_hz));
  const double r = params.rb_hz * (std::log2(1.0 + p * g / params.noise_w) - penalty);
  return std::max(r, 0.0);
}

double urllc_rate(std::span<const double> p, std::span<const double> g,
                  std::span<const std::uint8_t> psi, const UrllcRateParams& params) {
  if (p.size() != g.size() || p.size() != psi.size()) {
    throw std::invalid_argument("urllc_rate: size mismatch");
  }
  double r = 0.0;
  for (std::size_t o = 0; o < p.size(); ++o) {
    if (psi[o] == 0) continue;
    const double floor = urllc_power_floor(g[o], params.noise_w, params.snr_floor);
    if (p[o] < floor) {
      throw std::domain_error(
          fmt::format("urllc_rate: power {} W below SNR floor {} W on RB {}", p[o], floor, o));
    }
    r += urllc_rb_rate(p[o], g[o], params);
  }
  return r;
}

RuAllocation::RuAllocation(int o_ur_, int o_em_, int ues)
    : o_ur(o_ur_), o_em(o_em_), num_ues(ues) {
  const auto n = static_cast<std::size_t>(o_ur + o_em) * static_cast<std::size_t>(ues);
  p_em.assign(n, 0.0);
  p_ur.assign(n, 0.0);
  psi_em.assign(n, 0);
  psi_ur.assign(n, 0);
}

int RuAllocation::owner(int o) const {
  for (int u = 0; u < num_ues; ++u) {
    const auto i = idx(o, u);
    if (psi_em[i] != 0 || psi_ur[i] != 0) return u;
  }
  return -1;
}

double RuAllocation::total_power() const {
  double total = 0.0;
  for (std::size_t i = 0; i < p_em.size(); ++i) total += p_em[i] + p_ur[i];
  return total;
}

const char* to_string(Clause c) {
  switch (c) {
    case Clause::embb_power_range: return "embb_power_range";
    case Clause::urllc_power_floor: return "urllc_power_floor";
    case Clause::urllc_power_cap: return "urllc_power_cap";
    case Clause::ru_power_budget: return "ru_power_budget";
    case Clause::orthogonality: return "orthogonality";
    case Clause::bwp_membership: return "bwp_membership";
    case Clause::service_exclusivity: return "service_exclusivity";
  }
  return "unknown";
}

std::string FeasibilityReport::describe() const {
  std::string out;
  for (const auto& v : violations) {
    out += fmt::format("{} ru={} subband={} ue={} value={} limit={}\n", to_string(v.clause), v.ru,
                       v.subband, v.ue, v.value, v.limit);
  }
  return out;
}

FeasibilityReport check_power_feasible(const PowerGrid& grid, const GainTable& gains,
                                       const Scenario& s) {
  FeasibilityReport rep;
  auto add = [&](Clause c, int e, int o, int u, double value, double limit) {
    rep.violations.push_back({c, e, o, u, value, limit});
  };
  for (int e = 0; e < static_cast<int>(grid.rus.size()); ++e) {
    const auto& a = grid.rus[static_cast<std::size_t>(e)];
    double total = 0.0;
    for (int o = 0; o < a.subbands(); ++o) {
      int holders = 0;
      for (int u = 0; u < a.num_ues; ++u) {
        const auto i = a.idx(o, u);
        const double pe = a.p_em[i];
        const double pu = a.p_ur[i];
        total += pe + pu;
        holders += a.psi_em[i] + a.psi_ur[i];
        if (a.psi_em[i] != 0 && a.is_urllc_band(o)) add(Clause::bwp_membership, e, o, u, 1, 0);
        if (a.psi_ur[i] != 0 && !a.is_urllc_band(o)) add(Clause::bwp_membership, e, o, u, 1, 0);
        const double cap_em = a.psi_em[i] != 0 ? s.p_max_w : 0.0;
        if (pe < 0.0 || pe > cap_em) add(Clause::embb_power_range, e, o, u, pe, cap_em);
        const double cap_ur = a.psi_ur[i] != 0 ? s.p_max_w : 0.0;
        if (pu > cap_ur) add(Clause::urllc_power_cap, e, o, u, pu, cap_ur);
        if (a.psi_ur[i] != 0) {
          const double floor = urllc_power_floor(gains.at(e, o, u), s.noise_w, s.snr_floor);
          if (pu < floor) add(Clause::urllc_power_floor, e, o, u, pu, floor);
        } else if (pu < 0.0) {
          add(Clause::urllc_power_floor, e, o, u, pu, 0.0);
        }
      }
      if (holders > 1) add(Clause::orthogonality, e, o, -1, holders, 1);
    }
    if (total > s.p_max_w) add(Clause::ru_power_budget, e, -1, -1, total, s.p_max_w);
  }
  // one service type per UE per mini-slot, across RUs
  if (!grid.rus.empty()) {
    const int ues = grid.rus.front().num_ues;
    for (int u = 0; u < ues; ++u) {
      bool em = false;
      bool ur = false;
      for (const auto& a : grid.rus) {
        for (int o = 0; o < a.subbands(); ++o) {
          em = em || a.psi_em[a.idx(o, u)] != 0;
          ur = ur || a.psi_ur[a.idx(o, u)] != 0;
        }
      }
      if (em && ur) add(Clause::service_exclusivity, -1, -1, u, 2, 1);
    }
  }
  return rep;
}

RuRates ru_rates(const RuAllocation& a, const GainTable& gains, int ru, const Scenario& s) {
  RuRates r;
  r.embb.assign(static_cast<std::size_t>(a.num_ues), 0.0);
  r.urllc.assign(static_cast<std::size_t>(a.num_ues), 0.0);
  const auto em = s.embb();
  const auto ur = s.urllc();
  const UrllcRateParams up{ur.rb_bandwidth_hz, ur.tti_s, s.error_prob, s.noise_w, s.dispersion,
                           s.snr_floor};
  for (int o = 0; o < a.subbands(); ++o) {
    for (int u = 0; u < a.num_ues; ++u) {
      const auto i = a.idx(o, u);
      const double g = gains.at(ru, o, u);
      const auto ui = static_cast<std::size_t>(u);
      if (a.psi_em[i] != 0) {
        r.embb[ui] += em.rb_bandwidth_hz * std::log2(1.0 + a.p_em[i] * g / s.noise_w);
      }
      if (a.psi_ur[i] != 0) r.urllc[ui] += urllc_rb_rate(a.p_ur[i], g, up);
    }
  }
  return r;
}

}  // namespace msmu
