// SPDX-License-Identifier: Apache-2.0
#include "msmu/ran_state.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace msmu {

double update_queue(double q_bytes, double route_frac, double omega_pps, double pkt_bytes,
                    double served_rate_bps, double slot_s) {
  return std::max(q_bytes + route_frac * omega_pps * pkt_bytes * slot_s -
                      served_rate_bps * slot_s / 8.0,
                  0.0);
}

QueueState::QueueState(int rus, int ues, std::int64_t qmax_bytes)
    : rus_(rus), ues_(ues), qmax_(qmax_bytes) {
  if (rus < 1 || ues < 1 || qmax_bytes < 0) throw std::invalid_argument("QueueState: bad sizes");
  q_.assign(static_cast<std::size_t>(rus) * static_cast<std::size_t>(ues) * 2, 0);
  ru_sum_.assign(static_cast<std::size_t>(rus) * 2, 0);
}

std::int64_t QueueState::admit(int ru, int ue, Service s, std::int64_t bytes) {
  if (bytes < 0) throw std::invalid_argument("QueueState::admit: negative bytes");
  auto& sum = ru_sum_[static_cast<std::size_t>(ru) * 2 + static_cast<std::size_t>(s)];
  const std::int64_t accepted = std::min(bytes, std::max<std::int64_t>(qmax_ - sum, 0));
  q_[idx(ru, ue, s)] += accepted;
  sum += accepted;
  arrived_ += bytes;
  dropped_ += bytes - accepted;
  return accepted;
}

std::int64_t QueueState::serve(int ru, int ue, Service s, std::int64_t capacity) {
  auto& q = q_[idx(ru, ue, s)];
  const std::int64_t out = std::clamp<std::int64_t>(capacity, 0, q);
  q -= out;
  ru_sum_[static_cast<std::size_t>(ru) * 2 + static_cast<std::size_t>(s)] -= out;
  served_ += out;
  return out;
}

std::int64_t QueueState::ru_total(int ru, Service s) const {
  return ru_sum_[static_cast<std::size_t>(ru) * 2 + static_cast<std::size_t>(s)];
}

std::int64_t QueueState::ue_backlog(int ue, Service s) const {
  std::int64_t b = 0;
  for (int e = 0; e < rus_; ++e) b += q(e, ue, s);
  return b;
}

std::int64_t QueueState::total() const {
  return std::accumulate(q_.begin(), q_.end(), std::int64_t{0});
}

RoutingDecision RoutingDecision::uniform(int rus, int ues) {
  RoutingDecision d{rus, ues, {}};
  d.r.assign(static_cast<std::size_t>(rus) * static_cast<std::size_t>(ues), 1.0 / rus);
  return d;
}

RoutingDecision RoutingDecision::one_hot(std::span<const int> routes, int rus) {
  RoutingDecision d{rus, static_cast<int>(routes.size()), {}};
  d.r.assign(static_cast<std::size_t>(rus) * routes.size(), 0.0);
  for (std::size_t u = 0; u < routes.size(); ++u) {
    const int e = routes[u];
    if (e < 0 || e >= rus) throw std::invalid_argument(fmt::format("route {} out of range", e));
    d.r[static_cast<std::size_t>(e) * routes.size() + u] = 1.0;
  }
  return d;
}

void RoutingDecision::validate() const {
  for (int u = 0; u < ues; ++u) {
    double sum = 0.0;
    for (int e = 0; e < rus; ++e) {
      const double v = at(e, u);
      if (!(v >= 0.0 && v <= 1.0)) {
        throw std::invalid_argument(fmt::format("route fraction R[{},{}]={} outside [0,1]", e, u, v));
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-12) {
      throw std::invalid_argument(fmt::format("route fractions of UE {} sum to {}", u, sum));
    }
  }
}

std::vector<std::int64_t> split_bytes(std::int64_t total, const RoutingDecision& r, int ue) {
  std::vector<std::int64_t> out(static_cast<std::size_t>(r.rus), 0);
  std::vector<double> rem(static_cast<std::size_t>(r.rus), 0.0);
  std::int64_t given = 0;
  for (int e = 0; e < r.rus; ++e) {
    const double exact = r.at(e, ue) * static_cast<double>(total);
    const auto whole = static_cast<std::int64_t>(std::floor(exact));
    out[static_cast<std::size_t>(e)] = whole;
    rem[static_cast<std::size_t>(e)] = exact - static_cast<double>(whole);
    given += whole;
  }
  bool routed = false;
  for (int e = 0; e < r.rus; ++e) routed = routed || r.at(e, ue) > 0.0;
  if (given < total && !routed) {
    throw std::invalid_argument(fmt::format("split_bytes: UE {} has no route", ue));
  }
  std::vector<int> order(static_cast<std::size_t>(r.rus));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return rem[static_cast<std::size_t>(a)] > rem[static_cast<std::size_t>(b)];
  });
  for (std::size_t k = 0; given < total; k = (k + 1) % order.size()) {
    const int e = order[k];
    if (r.at(e, ue) <= 0.0) continue;
    ++out[static_cast<std::size_t>(e)];
    ++given;
  }
  return out;
}

std::int64_t spread_bytes(std::int64_t frame_bytes, int slot, int slots) {
  if (slot < 0 || slot >= slots) throw std::out_of_range("spread_bytes: slot out of range");
  const auto s = static_cast<std::int64_t>(slots);
  const auto k = static_cast<std::int64_t>(slot);
  return (k + 1) * frame_bytes / s - k * frame_bytes / s;
}

LatencyBreakdown fixed_latency(const Scenario& s, const RoutingDecision& r,
                               std::span<const double> omega_ur) {
  const double omega = std::accumulate(omega_ur.begin(), omega_ur.end(), 0.0);
  LatencyBreakdown l;
  l.cu = omega * s.cycles_per_packet / s.cpu_cu_hz;
  l.midhaul = omega * s.packet_bits / s.mh_capacity_bps;
  l.du = omega * s.cycles_per_packet / s.cpu_du_hz;
  const double zbits = s.pkt_size_ur_bytes * 8.0;
  for (int e = 0; e < r.rus; ++e) {
    double load = 0.0;
    for (int u = 0; u < r.ues; ++u) load += r.at(e, u) * omega_ur[static_cast<std::size_t>(u)] * zbits;
    l.fronthaul = std::max(l.fronthaul, load / s.fh_capacity_bps);
  }
  return l;
}

LatencyBreakdown e2e_latency(const Scenario& s, const RoutingDecision& r,
                             std::span<const double> omega_ur, const SlotRates& rates, int ue) {
  LatencyBreakdown l = fixed_latency(s, r, omega_ur);
  const double zbits = s.pkt_size_ur_bytes * 8.0;
  const double proc = s.proc_delay_s();
  const auto u = static_cast<std::size_t>(ue);
  std::vector<std::uint8_t> served(static_cast<std::size_t>(r.rus), 0);
  for (const auto& slot : rates) {
    double worst = 0.0;
    for (int e = 0; e < r.rus; ++e) {
      const double load = r.at(e, ue) * omega_ur[u] * zbits;
      const double rate = slot[static_cast<std::size_t>(e) * static_cast<std::size_t>(r.ues) + u];
      if (load > 0.0 && rate > 0.0) {
        worst = std::max(worst, load / rate);
        served[static_cast<std::size_t>(e)] = 1;
      }
    }
    l.radio += worst + proc;
  }
  for (int e = 0; e < r.rus; ++e) {
    if (r.at(e, ue) * omega_ur[u] > 0.0 && served[static_cast<std::size_t>(e)] == 0) {
      throw UnboundedLatency(
          fmt::format("uRLLC flow of UE {} via RU {} received no rate in any slot", ue, e));
    }
  }
  return l;
}

double first_drain_latency(const LatencyBreakdown& fixed, int busy_slots, const Scenario& s) {
  return fixed.cu + fixed.midhaul + fixed.du + fixed.fronthaul + s.proc_delay_s() +
         static_cast<double>(busy_slots) * s.slot_s();
}

double objective(double embb_total_bps, double worst_latency_s, double lambda, double r_max_bps,
                 double latency_budget_s) {
  if (!(r_max_bps > 0.0) || !(latency_budget_s > 0.0)) {
    throw std::invalid_argument("objective: normalizers must be positive");
  }
  return embb_total_bps / r_max_bps - lambda * worst_latency_s / latency_budget_s;
}

bool ConstraintReport::all_pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.pass; });
}

const ConstraintCheck* ConstraintReport::find(const std::string& id) const {
  for (const auto& c : checks) {
    if (c.id == id) return &c;
  }
  return nullptr;
}

ConstraintReport check_frame_constraints(const FrameObservation& obs, const Scenario& s) {
  ConstraintReport rep;
  constexpr double inf = std::numeric_limits<double>::infinity();

  int em_total = 0;
  int em_ok = 0;
  double em_margin = inf;
  for (std::size_t u = 0; u < obs.embb_avg_rate.size(); ++u) {
    if (obs.embb_active[u] == 0) continue;
    ++em_total;
    const double m = obs.embb_avg_rate[u] - s.rate_threshold_bps;
    em_margin = std::min(em_margin, m);
    if (m >= 0.0) ++em_ok;
  }
  rep.c10e_freq = em_total == 0 ? 1.0 : static_cast<double>(em_ok) / em_total;
  rep.checks.push_back({"10e", em_ok == em_total, em_total == 0 ? inf : em_margin});

  double fh_margin = inf;
  for (double peak : obs.fh_peak_rate) fh_margin = std::min(fh_margin, s.fh_capacity_bps - peak);
  rep.checks.push_back({"10f", fh_margin >= 0.0, fh_margin});

  double vol_margin = inf;
  for (std::size_t i = 0; i < obs.urllc_required_bits.size(); ++i) {
    if (obs.urllc_required_bits[i] <= 0.0) continue;
    vol_margin = std::min(vol_margin, obs.urllc_delivered_bits[i] - obs.urllc_required_bits[i]);
  }
  rep.checks.push_back({"10g", vol_margin >= 0.0, vol_margin});

  int ur_total = 0;
  int ur_ok = 0;
  double lat_margin = inf;
  for (std::size_t u = 0; u < obs.urllc_latency.size(); ++u) {
    if (obs.urllc_active[u] == 0) continue;
    ++ur_total;
    const double m = s.latency_budget_s - obs.urllc_latency[u];
    lat_margin = std::min(lat_margin, m);
    if (m >= 0.0) ++ur_ok;
  }
  rep.c10h_freq = ur_total == 0 ? 1.0 : static_cast<double>(ur_ok) / ur_total;
  rep.checks.push_back({"10h", ur_ok == ur_total, lat_margin});

  double q_margin = inf;
  for (auto peak : obs.queue_peak) {
    q_margin = std::min(q_margin, s.qmax_bytes - static_cast<double>(peak));
  }
  rep.checks.push_back({"10j", q_margin >= 0.0, q_margin});

  double bw_margin = inf;
  for (std::size_t e = 0; e < obs.bwp_used_hz.size(); ++e) {
    bw_margin = std::min(bw_margin, obs.bwp_avail_hz[e] - obs.bwp_used_hz[e]);
  }
  rep.checks.push_back({"10k", bw_margin >= 0.0, bw_margin});
  return rep;
}

}  // namespace msmu
