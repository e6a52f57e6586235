// SPDX-License-Identifier: Apache-2.0
#include "msmu/traffic.hpp"

#include <fmt/format.h>

#include <cmath>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>

namespace msmu {

ServiceClass classify_service(double bandwidth_bps, double latency_s, double b_th_bps,
                              double l_th_s) {
  if (bandwidth_bps < 0.0 || latency_s < 0.0) {
    throw std::invalid_argument("service attributes must be non-negative");
  }
  if (latency_s < l_th_s) return {Service::urllc, std::nullopt};
  if (bandwidth_bps > b_th_bps) return {Service::embb, std::nullopt};
  throw ClassificationError(fmt::format(
      "service with {} bit/s and {} s latency matches neither class", bandwidth_bps, latency_s));
}

std::uint64_t gen_urllc_arrivals(double rate_pps, double frame_len_s, std::mt19937_64& rng) {
  if (rate_pps < 0.0) throw std::invalid_argument("negative arrival rate");
  const double mean = rate_pps * frame_len_s;
  if (mean <= 0.0) return 0;
  std::poisson_distribution<std::uint64_t> dist(mean);
  return dist(rng);
}

double gen_embb_demand(double rate_bps, double frame_len_s, double modulation) {
  if (rate_bps < 0.0) throw std::invalid_argument("negative bitrate");
  return rate_bps * modulation * frame_len_s / 8.0;
}

double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

std::vector<Point> ru_positions(const Scenario& s) {
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(s.num_rus))));
  std::vector<Point> out;
  out.reserve(static_cast<std::size_t>(s.num_rus));
  for (int e = 0; e < s.num_rus; ++e) {
    out.push_back({(e % cols) * s.ru_spacing_m, (e / cols) * s.ru_spacing_m});
  }
  return out;
}

int nearest_ru(const std::vector<Point>& rus, Point p) {
  int best = 0;
  double best_d = distance(rus.front(), p);
  for (int e = 1; e < static_cast<int>(rus.size()); ++e) {
    const double d = distance(rus[static_cast<std::size_t>(e)], p);
    if (d < best_d) {
      best_d = d;
      best = e;
    }
  }
  return best;
}

RandomWaypoint::RandomWaypoint(Point lo, Point hi, double speed_mps, std::mt19937_64& rng)
    : lo_(lo), hi_(hi), speed_(speed_mps) {
  pos_ = draw(rng);
  target_ = draw(rng);
}

Point RandomWaypoint::draw(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> ux(lo_.x, hi_.x);
  std::uniform_real_distribution<double> uy(lo_.y, hi_.y);
  const double x = ux(rng);
  return {x, uy(rng)};
}

void RandomWaypoint::step(double dt_s, std::mt19937_64& rng) {
  double budget = speed_ * dt_s;
  while (budget > 0.0) {
    const double d = distance(pos_, target_);
    if (d > budget) {
      pos_.x += (target_.x - pos_.x) * budget / d;
      pos_.y += (target_.y - pos_.y) * budget / d;
      return;
    }
    pos_ = target_;
    budget -= d;
    target_ = draw(rng);
  }
}

TrafficGenerator::TrafficGenerator(const Scenario& s, std::uint64_t seed)
    : s_(s), rng_(seed), rus_(ru_positions(s)) {
  Point lo{0.0, 0.0};
  Point hi{0.0, 0.0};
  for (const auto& p : rus_) {
    hi.x = std::max(hi.x, p.x);
    hi.y = std::max(hi.y, p.y);
  }
  const double margin = s.ru_spacing_m / 2.0;
  lo = {lo.x - margin, lo.y - margin};
  hi = {hi.x + margin, hi.y + margin};
  ues_.reserve(static_cast<std::size_t>(s.num_ues));
  for (int u = 0; u < s.num_ues; ++u) ues_.emplace_back(lo, hi, s.ue_speed_mps, rng_);
  last_ur_.assign(static_cast<std::size_t>(s.num_ues), 0);
}

double TrafficGenerator::modulation(int ue, int t) const {
  const double phase = 2.0 * std::numbers::pi * ue / s_.num_ues;
  return 1.0 + s_.sinusoid_amplitude *
                   std::sin(2.0 * std::numbers::pi * t / s_.sinusoid_period_frames + phase);
}

DemandFrame TrafficGenerator::next_frame() {
  ++t_;
  DemandFrame f;
  f.t = t_;
  const auto n = static_cast<std::size_t>(s_.num_ues);
  f.omega_em.resize(n);
  f.omega_ur.resize(n);
  f.true_route.resize(n);
  f.positions.resize(n);
  const double max_packets = std::floor(s_.omega_max_pps * s_.frame_len_s);
  for (std::size_t u = 0; u < n; ++u) {
    const int ui = static_cast<int>(u);
    const double m = modulation(ui, t_);
    const double bytes = gen_embb_demand(s_.embb_rate_bps, s_.frame_len_s, m);
    f.omega_em[u] = std::min(bytes / s_.pkt_size_em_bytes / s_.frame_len_s, s_.omega_max_pps);
    auto packets = gen_urllc_arrivals(s_.urllc_rate_pps * m, s_.frame_len_s, rng_);
    packets = std::min<std::uint64_t>(packets, static_cast<std::uint64_t>(max_packets));
    last_ur_[u] = packets;
    f.omega_ur[u] = static_cast<double>(packets) / s_.frame_len_s;
    ues_[u].step(s_.frame_len_s, rng_);
    f.positions[u] = ues_[u].position();
    f.true_route[u] = nearest_ru(rus_, f.positions[u]);
  }
  return f;
}

std::vector<DemandFrame> read_trace_csv(std::istream& in, int num_ues, int num_rus) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("trace: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "frame,ue,omega_em,omega_ur,route") {
    throw std::runtime_error(fmt::format("trace: unexpected header '{}'", line));
  }
  std::map<int, DemandFrame> frames;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::istringstream row(line);
    row.imbue(std::locale::classic());
    int t = 0;
    int u = 0;
    int route = 0;
    double em = 0.0;
    double ur = 0.0;
    char c1 = 0, c2 = 0, c3 = 0, c4 = 0;
    row >> t >> c1 >> u >> c2 >> em >> c3 >> ur >> c4 >> route;
    if (row.fail() || c1 != ',' || c2 != ',' || c3 != ',' || c4 != ',') {
      throw std::runtime_error(fmt::format("trace line {}: malformed row", lineno));
    }
    if (u < 0 || u >= num_ues || route < 0 || route >= num_rus || em < 0.0 || ur < 0.0) {
      throw std::runtime_error(fmt::format("trace line {}: value out of range", lineno));
    }
    auto& f = frames[t];
    if (f.omega_em.empty()) {
      f.t = t;
      f.omega_em.assign(static_cast<std::size_t>(num_ues), 0.0);
      f.omega_ur.assign(static_cast<std::size_t>(num_ues), 0.0);
      f.true_route.assign(static_cast<std::size_t>(num_ues), 0);
    }
    const auto ui = static_cast<std::size_t>(u);
    f.omega_em[ui] = em;
    f.omega_ur[ui] = ur;
    f.true_route[ui] = route;
  }
  std::vector<DemandFrame> out;
  out.reserve(frames.size());
  for (auto& [t, f] : frames) out.push_back(std::move(f));
  return out;
}

void write_trace_csv(std::ostream& out, const std::vector<DemandFrame>& frames) {
  out << "frame,ue,omega_em,omega_ur,route\n";
  for (const auto& f : frames) {
    for (std::size_t u = 0; u < f.omega_em.size(); ++u) {
      out << fmt::format("{},{},{},{},{}\n", f.t, u, f.omega_em[u], f.omega_ur[u],
                         f.true_route[u]);
    }
  }
}

}  // namespace msmu
