// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "msmu/scenario.hpp"
#include "msmu/traffic.hpp"

namespace msmu {

/// Continuous queue recursion: max(q + R*Omega*Z*delta - rate*delta/8, 0).
double update_queue(double q_bytes, double route_frac, double omega_pps, double pkt_bytes,
                    double served_rate_bps, double slot_s);

/// Integer-byte queues per (RU, UE, service) with admission drop at Q_max.
class QueueState {
 public:
  QueueState(int rus, int ues, std::int64_t qmax_bytes);

  /// Admits up to the per-(RU, service) headroom; the remainder is counted as dropped.
  std::int64_t admit(int ru, int ue, Service s, std::int64_t bytes);
  /// Removes up to `capacity` bytes and returns the amount served.
  std::int64_t serve(int ru, int ue, Service s, std::int64_t capacity);

  std::int64_t q(int ru, int ue, Service s) const { return q_[idx(ru, ue, s)]; }
  std::int64_t ru_total(int ru, Service s) const;
  std::int64_t ue_backlog(int ue, Service s) const;
  std::int64_t total() const;

  std::int64_t arrived() const { return arrived_; }
  std::int64_t served() const { return served_; }
  std::int64_t dropped() const { return dropped_; }
  std::int64_t qmax() const { return qmax_; }
  int rus() const { return rus_; }
  int ues() const { return ues_; }

  /// arrived == served + queued + dropped
  bool conserved() const { return arrived_ == served_ + total() + dropped_; }

 private:
  std::size_t idx(int ru, int ue, Service s) const {
    return (static_cast<std::size_t>(ru) * static_cast<std::size_t>(ues_) +
            static_cast<std::size_t>(ue)) * 2 + static_cast<std::size_t>(s);
  }
  int rus_;
  int ues_;
  std::int64_t qmax_;
  std::vector<std::int64_t> q_;
  std::vector<std::int64_t> ru_sum_;
  std::int64_t arrived_ = 0;
  std::int64_t served_ = 0;
  std::int64_t dropped_ = 0;
};

struct RoutingDecision {
  int rus = 0;
  int ues = 0;
  std::vector<double> r;  // e * U + u

  double at(int e, int u) const {
    return r[static_cast<std::size_t>(e) * static_cast<std::size_t>(ues) +
             static_cast<std::size_t>(u)];
  }
  bool active(int e, int u) const { return at(e, u) > 0.0; }

  static RoutingDecision uniform(int rus, int ues);
  static RoutingDecision one_hot(std::span<const int> routes, int rus);
  /// Throws std::invalid_argument unless every column sums to 1 within 1e-12.
  void validate() const;
};

/// Splits `total` integer bytes across RUs in proportion to R (largest remainder, ties to
/// the lower RU index).
std::vector<std::int64_t> split_bytes(std::int64_t total, const RoutingDecision& r, int ue);

/// Even integer spreading of a frame's bytes over S slots; slot k receives
/// floor((k+1)*B/S) - floor(k*B/S).
std::int64_t spread_bytes(std::int64_t frame_bytes, int slot, int slots);

struct LatencyBreakdown {
  double cu = 0.0;
  double midhaul = 0.0;
  double du = 0.0;
  double fronthaul = 0.0;
  double radio = 0.0;
  double total() const { return cu + midhaul + du + fronthaul + radio; }
};

/// uRLLC rates r[t_s][e * U + u] over one frame.
using SlotRates = std::vector<std::vector<double>>;

class UnboundedLatency : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The four traffic terms shared by every uRLLC UE (radio term left at zero).
LatencyBreakdown fixed_latency(const Scenario& s, const RoutingDecision& r,
                               std::span<const double> omega_ur);

/// Full E2E latency of UE `ue`. Slots where a routed flow has zero rate add only the RU
/// processing term; zero rate in every slot throws UnboundedLatency.
LatencyBreakdown e2e_latency(const Scenario& s, const RoutingDecision& r,
                             std::span<const double> omega_ur, const SlotRates& rates, int ue);

/// Time from arrival to drain: shared terms, one RU processing delay, and busy slots.
double first_drain_latency(const LatencyBreakdown& fixed, int busy_slots, const Scenario& s);

double objective(double embb_total_bps, double worst_latency_s, double lambda, double r_max_bps,
                 double latency_budget_s);

struct ConstraintCheck {
  std::string id;
  bool pass = true;
  double margin = 0.0;
};

/// Everything the per-frame constraint report needs; filled by the runtime loop.
struct FrameObservation {
  std::vector<double> embb_avg_rate;      // per UE, bit/s averaged over the frame
  std::vector<std::uint8_t> embb_active;  // UE had eMBB demand
  std::vector<double> fh_peak_rate;       // per RU, max over slots of summed rates
  std::vector<double> urllc_delivered_bits;  // per (RU, UE)
  std::vector<double> urllc_required_bits;   // per (RU, UE)
  std::vector<double> urllc_latency;         // per UE, first-drain seconds
  std::vector<std::uint8_t> urllc_active;    // UE had uRLLC demand
  std::vector<std::int64_t> queue_peak;      // per (RU, service): max over slots of sum_u q
  std::vector<double> bwp_used_hz;           // per RU: o_ur*beta2 + o_em*beta1
  std::vector<double> bwp_avail_hz;          // per RU: b_ur + b_em
};

struct ConstraintReport {
  std::vector<ConstraintCheck> checks;
  double c10e_freq = 1.0;
  double c10h_freq = 1.0;
  bool all_pass() const;
  const ConstraintCheck* find(const std::string& id) const;
};

ConstraintReport check_frame_constraints(const FrameObservation& obs, const Scenario& s);

}  // namespace msmu
