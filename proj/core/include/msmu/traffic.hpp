// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "msmu/scenario.hpp"

namespace msmu {

enum class Service : int { embb = 0, urllc = 1 };

inline const char* to_string(Service s) { return s == Service::embb ? "EMBB" : "URLLC"; }

struct ServiceClass {
  Service super = Service::embb;
  std::optional<int> subclass;
};

class ClassificationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Membership test against the bandwidth and latency thresholds; latency wins ties.
ServiceClass classify_service(double bandwidth_bps, double latency_s, double b_th_bps,
                              double l_th_s);

std::uint64_t gen_urllc_arrivals(double rate_pps, double frame_len_s, std::mt19937_64& rng);

/// Bytes offered by a constant-bitrate source in one frame, scaled by `modulation`.
double gen_embb_demand(double rate_bps, double frame_len_s, double modulation = 1.0);

struct Point {
  double x = 0.0;
  double y = 0.0;
};

double distance(Point a, Point b);

struct DemandFrame {
  int t = 0;
  std::vector<double> omega_em;
  std::vector<double> omega_ur;
  std::vector<int> true_route;
  std::vector<Point> positions;
};

/// RUs on a square grid with the scenario spacing.
std::vector<Point> ru_positions(const Scenario& s);

int nearest_ru(const std::vector<Point>& rus, Point p);

class RandomWaypoint {
 public:
  RandomWaypoint(Point lo, Point hi, double speed_mps, std::mt19937_64& rng);
  void step(double dt_s, std::mt19937_64& rng);
  Point position() const { return pos_; }

 private:
  Point lo_, hi_, pos_, target_;
  double speed_;
  Point draw(std::mt19937_64& rng) const;
};

/// Frame-by-frame ground truth: sinusoid-modulated CBR eMBB, Poisson uRLLC, nearest-RU routes.
class TrafficGenerator {
 public:
  TrafficGenerator(const Scenario& s, std::uint64_t seed);

  DemandFrame next_frame();
  int frames_generated() const { return t_; }
  const std::vector<Point>& rus() const { return rus_; }
  /// uRLLC packets drawn for each UE in the last frame.
  const std::vector<std::uint64_t>& last_urllc_packets() const { return last_ur_; }

  double modulation(int ue, int t) const;

 private:
  Scenario s_;
  std::mt19937_64 rng_;
  std::vector<Point> rus_;
  std::vector<RandomWaypoint> ues_;
  std::vector<std::uint64_t> last_ur_;
  int t_ = 0;
};

std::vector<DemandFrame> read_trace_csv(std::istream& in, int num_ues, int num_rus);
void write_trace_csv(std::ostream& out, const std::vector<DemandFrame>& frames);

}  // namespace msmu
