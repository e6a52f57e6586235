// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "msmu/phy.hpp"
#include "msmu/ran_state.hpp"

namespace msmu {

/// Frame-level policy from the long-term loop to the per-slot scheduler.
struct A1Message {
  int t = 0;
  std::vector<double> omega_em;  // packets/s per UE
  std::vector<double> omega_ur;  // packets/s per UE
  RoutingDecision route;
  std::vector<double> phi;  // per RU
};

/// Per-slot scheduling decision handed to the simulated CU/DU.
struct E2Message {
  int t = 0;
  int slot = 0;
  AllocationGrid grid;
};

/// End-of-frame report back to the long-term loop.
struct O1Report {
  int t = 0;
  std::vector<std::int64_t> queue_em;  // per (RU, UE), e * U + u
  std::vector<std::int64_t> queue_ur;
  std::vector<double> omega_em;
  std::vector<double> omega_ur;
  std::vector<int> true_route;
  std::vector<double> latency;          // per UE, seconds
  std::vector<double> embb_throughput;  // per UE, bit/s
};

}  // namespace msmu
