// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "msmu/scenario.hpp"

namespace msmu {

using cplx = std::complex<double>;

struct ChannelRealization {
  std::vector<cplx> h;
  double large_scale = 0.0;
  double rician = 0.0;
  double gain = 0.0;
};

/// Unit-norm phase ramp across K antennas.
std::vector<cplx> los_steering(int antennas, double angle_rad);

ChannelRealization sample_channel(double chi, double xi, int antennas, std::mt19937_64& rng,
                                  double los_angle_rad = 0.0);

double effective_gain(std::span<const cplx> h);

/// Linear large-scale gain for a link of `distance_m` at `carrier_ghz` (urban macro style law).
double pathloss_gain(double distance_m, double carrier_ghz);

double q_function(double x);
double q_inv(double p);

double embb_rate(std::span<const double> p, std::span<const double> g, double rb_hz,
                 double noise_w);

struct UrllcRateParams {
  double rb_hz = 0.0;
  double tti_s = 0.0;
  double error_prob = 1e-5;
  double noise_w = 1e-13;
  double dispersion = 1.0;
  double snr_floor = 1.0;
};

/// Finite-blocklength rate over RBs with psi = 1; each RB contribution is clamped at 0.
double urllc_rate(std::span<const double> p, std::span<const double> g,
                  std::span<const std::uint8_t> psi, const UrllcRateParams& params);

/// Per-RB finite-blocklength rate without the floor precondition.
double urllc_rb_rate(double p, double g, const UrllcRateParams& params);

double urllc_power_floor(double g, double noise_w, double snr_floor);

/// One RU's assignment and power over its sub-bands. Sub-bands [0, o_ur) form the uRLLC
/// bandwidth part and [o_ur, o_ur + o_em) the eMBB part. Entries are indexed o * U + u.
struct RuAllocation {
  int o_ur = 0;
  int o_em = 0;
  int num_ues = 0;
  std::vector<double> p_em;
  std::vector<double> p_ur;
  std::vector<std::uint8_t> psi_em;
  std::vector<std::uint8_t> psi_ur;

  RuAllocation() = default;
  RuAllocation(int o_ur_, int o_em_, int ues);

  int subbands() const { return o_ur + o_em; }
  std::size_t idx(int o, int u) const {
    return static_cast<std::size_t>(o) * static_cast<std::size_t>(num_ues) +
           static_cast<std::size_t>(u);
  }
  bool is_urllc_band(int o) const { return o < o_ur; }
  /// UE holding sub-band o, or -1.
  int owner(int o) const;
  double total_power() const;
  bool operator==(const RuAllocation&) const = default;
};

struct PowerGrid {
  std::vector<RuAllocation> rus;
  bool operator==(const PowerGrid&) const = default;
};

using AllocationGrid = PowerGrid;

/// Effective gains g per (RU, sub-band, UE) for one frame, laid out like RuAllocation.
struct GainTable {
  int num_ues = 0;
  std::vector<std::vector<double>> per_ru;
  double at(int e, int o, int u) const {
    return per_ru[static_cast<std::size_t>(e)]
                 [static_cast<std::size_t>(o) * static_cast<std::size_t>(num_ues) +
                  static_cast<std::size_t>(u)];
  }
};

enum class Clause {
  embb_power_range,
  urllc_power_floor,
  urllc_power_cap,
  ru_power_budget,
  orthogonality,
  bwp_membership,
  service_exclusivity,
};

const char* to_string(Clause c);

struct Violation {
  Clause clause;
  int ru = -1;
  int subband = -1;
  int ue = -1;
  double value = 0.0;
  double limit = 0.0;
};

struct FeasibilityReport {
  std::vector<Violation> violations;
  bool feasible() const { return violations.empty(); }
  std::string describe() const;
};

FeasibilityReport check_power_feasible(const PowerGrid& grid, const GainTable& gains,
                                       const Scenario& s);

/// Per-UE rates (bit/s) on one RU; size U each.
struct RuRates {
  std::vector<double> embb;
  std::vector<double> urllc;
};

RuRates ru_rates(const RuAllocation& a, const GainTable& gains, int ru, const Scenario& s);

}  // namespace msmu
