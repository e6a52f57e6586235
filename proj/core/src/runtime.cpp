// SPDX-License-Identifier: Apache-2.0
#include "msmu/runtime.hpp"

#include <fmt/format.h>
#include <tbb/global_control.h>
#include <tbb/parallel_for.h>
#include <tbb/task_arena.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <system_error>

namespace msmu {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::size_t at(int e, int u, int ues) {
  return static_cast<std::size_t>(e) * static_cast<std::size_t>(ues) + static_cast<std::size_t>(u);
}

A1Message initial_a1(const Scenario& s, std::vector<double> omega_em, std::vector<double> omega_ur) {
  A1Message a1;
  a1.t = 1;
  a1.omega_em = std::move(omega_em);
  a1.omega_ur = std::move(omega_ur);
  a1.route = RoutingDecision::uniform(s.num_rus, s.num_ues);
  a1.phi = uniform_slice(s, std::min(0.5, s.phi_max())).phi;
  return a1;
}

A1Message sliced_a1(int t, const Scenario& s, std::vector<double> omega_em,
                    std::vector<double> omega_ur, std::span<const int> routes, SlicePolicy policy) {
  A1Message a1;
  a1.t = t;
  a1.route = RoutingDecision::one_hot(routes, s.num_rus);
  a1.phi = slice_bandwidth(s, omega_em, omega_ur, a1.route, policy).phi;
  a1.omega_em = std::move(omega_em);
  a1.omega_ur = std::move(omega_ur);
  return a1;
}

/// Services are fixed per UE per slot from the queue snapshot so every RU agrees.
Service slot_service(const QueueState& q, int u) {
  return q.ue_backlog(u, Service::urllc) > 0 ? Service::urllc : Service::embb;
}

/// Routed to the RU this frame, or still holding bytes there from an earlier route.
bool reachable(const QueueState& q, const A1Message& a1, int ru, int u) {
  return a1.route.at(ru, u) > 0.0 || q.q(ru, u, Service::embb) > 0 || q.q(ru, u, Service::urllc) > 0;
}

/// Largest-remainder split of n items by weight; ties go to the earlier entry.
std::vector<int> apportion(std::span<const double> w, int n) {
  std::vector<int> out(w.size(), 0);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(total > 0.0) || n <= 0) return out;
  std::vector<double> rem(w.size(), 0.0);
  int given = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double exact = w[i] / total * n;
    out[i] = static_cast<int>(std::floor(exact));
    rem[i] = exact - out[i];
    given += out[i];
  }
  std::vector<std::size_t> order(w.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; given < n && k < order.size(); ++k, ++given) ++out[order[k]];
  return out;
}

RuAllocation project_ru(int ru, const std::vector<Placement>& placements,
                        std::span<const double> power_w, const SlotContext& ctx,
                        const Scenario& s) {
  const GainTable single{ctx.gains->num_ues, {ctx.gains->per_ru[static_cast<std::size_t>(ru)]}};
  const std::vector<BwpLayout> lay{(*ctx.layouts)[static_cast<std::size_t>(ru)]};
  auto grid = assign_power({placements}, power_w, single, lay, s);
  return std::move(grid.rus.front());
}

}  // namespace

SimulationError::SimulationError(int frame, int slot, const std::string& what)
    : std::runtime_error(fmt::format("frame {} slot {}: {}", frame, slot, what)),
      frame_(frame),
      slot_(slot) {}

const char* to_string(ControllerKind k) {
  switch (k) {
    case ControllerKind::learned: return "learned";
    case ControllerKind::oracle: return "oracle";
    case ControllerKind::heuristic: return "heuristic";
  }
  return "unknown";
}

ControllerKind parse_controller(const std::string& name) {
  if (name == "learned") return ControllerKind::learned;
  if (name == "oracle") return ControllerKind::oracle;
  if (name == "heuristic" || name == "heuristic-proportional") return ControllerKind::heuristic;
  throw std::invalid_argument(fmt::format("unknown controller '{}'", name));
}

GainTable draw_gains(const Scenario& s, const std::vector<Point>& rus,
                     const std::vector<Point>& ues, const std::vector<BwpLayout>& layouts,
                     std::mt19937_64& rng) {
  if (rus.size() != layouts.size()) throw std::invalid_argument("draw_gains: RU count mismatch");
  GainTable g;
  g.num_ues = static_cast<int>(ues.size());
  for (std::size_t e = 0; e < rus.size(); ++e) {
    const int o_total = layouts[e].o_ur + layouts[e].o_em;
    std::vector<double> row(static_cast<std::size_t>(o_total) * ues.size());
    for (int o = 0; o < o_total; ++o) {
      for (std::size_t u = 0; u < ues.size(); ++u) {
        const double chi = pathloss_gain(distance(rus[e], ues[u]), s.carrier_ghz);
        const double angle = std::atan2(ues[u].y - rus[e].y, ues[u].x - rus[e].x);
        row[static_cast<std::size_t>(o) * ues.size() + u] =
            sample_channel(chi, s.rician_k, s.antennas, rng, angle).gain;
      }
    }
    g.per_ru.push_back(std::move(row));
  }
  return g;
}

ForecastPlanner::ForecastPlanner(const ForecasterModel& model, const Scenario& s, SlicePolicy policy)
    : model_(&model), s_(s), policy_(policy) {
  const auto& cfg = model.config();
  if (cfg.ues != s.num_ues || cfg.rus != s.num_rus) {
    throw std::invalid_argument(fmt::format("forecaster built for {} UEs / {} RUs, scenario has {} / {}",
                                            cfg.ues, cfg.rus, s.num_ues, s.num_rus));
  }
}

A1Message ForecastPlanner::plan(int t, const std::vector<DemandFrame>& history, const DemandFrame&) {
  const auto u = static_cast<std::size_t>(s_.num_ues);
  if (t == 1) return initial_a1(s_, std::vector<double>(u, 0.0), std::vector<double>(u, 0.0));
  const auto in = build_lsp_input(history, model_->config().steps, t, s_.num_rus);
  auto fc = forecast(*model_, in);
  return sliced_a1(t, s_, std::move(fc.omega_em), std::move(fc.omega_ur), fc.route, policy_);
}

PersistencePlanner::PersistencePlanner(const Scenario& s, SlicePolicy policy)
    : s_(s), policy_(policy) {}

A1Message PersistencePlanner::plan(int t, const std::vector<DemandFrame>& history,
                                   const DemandFrame&) {
  const auto u = static_cast<std::size_t>(s_.num_ues);
  if (t == 1 || history.empty()) {
    return initial_a1(s_, std::vector<double>(u, 0.0), std::vector<double>(u, 0.0));
  }
  const auto& last = history.back();
  return sliced_a1(t, s_, last.omega_em, last.omega_ur, last.true_route, policy_);
}

TruthPlanner::TruthPlanner(const Scenario& s, SlicePolicy policy) : s_(s), policy_(policy) {}

A1Message TruthPlanner::plan(int t, const std::vector<DemandFrame>&, const DemandFrame& truth) {
  if (t == 1) return initial_a1(s_, truth.omega_em, truth.omega_ur);
  return sliced_a1(t, s_, truth.omega_em, truth.omega_ur, truth.true_route, policy_);
}

LearnedScheduler::LearnedScheduler(const AllocatorModel& model, const Scenario& s)
    : s_(s), session_(model, s) {}

void LearnedScheduler::begin_frame(const A1Message& a1) { session_.begin_frame(a1); }

void LearnedScheduler::prepare(const SlotContext&) { pred_ = session_.predict(); }

RuAllocation LearnedScheduler::allocate_ru(int ru, const SlotContext& ctx) const {
  const int ues = s_.num_ues;
  std::vector<RbRequest> req;
  std::vector<double> power(static_cast<std::size_t>(ues), 0.0);
  for (int u = 0; u < ues; ++u) {
    const double r = ctx.a1->route.at(ru, u);
    if (r <= 0.0) continue;
    const auto ui = static_cast<std::size_t>(u);
    req.push_back({u, pred_.service[ui], pred_.prb_frac[ui]});
    power[ui] = pred_.power_w[ui] * r;
  }
  const auto placements = place_requests(std::move(req), (*ctx.layouts)[static_cast<std::size_t>(ru)]);
  return project_ru(ru, placements, power, ctx, s_);
}

void LearnedScheduler::observe(const SlotContext& ctx, const AllocationGrid& grid) {
  const int ues = s_.num_ues;
  std::vector<SlotFeedback> fb(static_cast<std::size_t>(ues));
  for (int u = 0; u < ues; ++u) {
    int primary = 0;
    for (int e = 1; e < s_.num_rus; ++e) {
      if (ctx.a1->route.at(e, u) > ctx.a1->route.at(primary, u)) primary = e;
    }
    const auto& a = grid.rus[static_cast<std::size_t>(primary)];
    int held = 0;
    double p = 0.0;
    for (int o = 0; o < a.subbands(); ++o) {
      const auto i = a.idx(o, u);
      if (a.psi_em[i] != 0 || a.psi_ur[i] != 0) ++held;
      p += a.p_em[i] + a.p_ur[i];
    }
    auto& f = fb[static_cast<std::size_t>(u)];
    f.service = pred_.service[static_cast<std::size_t>(u)];
    f.prb_frac = a.subbands() > 0 ? static_cast<double>(held) / a.subbands() : 0.0;
    f.power_w = p;
  }
  session_.observe(fb);
}

ProportionalScheduler::ProportionalScheduler(const Scenario& s) : s_(s) {}

RuAllocation ProportionalScheduler::allocate_ru(int ru, const SlotContext& ctx) const {
  const int ues = s_.num_ues;
  const auto& lay = (*ctx.layouts)[static_cast<std::size_t>(ru)];
  const auto& q = *ctx.queues;
  std::vector<Placement> placements;
  std::vector<int> rbs(static_cast<std::size_t>(ues), 0);
  int used = 0;
  for (Service svc : {Service::urllc, Service::embb}) {
    std::vector<int> who;
    std::vector<double> w;
    for (int u = 0; u < ues; ++u) {
      if (!reachable(q, *ctx.a1, ru, u) || slot_service(q, u) != svc) continue;
      const auto backlog = q.q(ru, u, svc);
      if (backlog <= 0) continue;
      who.push_back(u);
      w.push_back(static_cast<double>(backlog));
    }
    const int first = svc == Service::urllc ? 0 : lay.o_ur;
    const int count = svc == Service::urllc ? lay.o_ur : lay.o_em;
    const auto share = apportion(w, count);
    int next = first;
    for (std::size_t i = 0; i < who.size(); ++i) {
      if (share[i] == 0) continue;
      Placement p{who[i], svc, {}};
      for (int k = 0; k < share[i]; ++k) p.subbands.push_back(next++);
      rbs[static_cast<std::size_t>(who[i])] += share[i];
      used += share[i];
      placements.push_back(std::move(p));
    }
  }
  std::vector<double> power(static_cast<std::size_t>(ues), 0.0);
  for (int u = 0; u < ues; ++u) {
    if (used > 0) power[static_cast<std::size_t>(u)] = s_.p_max_w * rbs[static_cast<std::size_t>(u)] / used;
  }
  return project_ru(ru, placements, power, ctx, s_);
}

OracleScheduler::OracleScheduler(const Scenario& s) : s_(s) {}

OracleInstance OracleScheduler::instance(int ru, const SlotContext& ctx,
                                         std::vector<int>& ues_out) const {
  const int ues = s_.num_ues;
  const auto& q = *ctx.queues;
  const auto& a1 = *ctx.a1;
  const auto& lay = (*ctx.layouts)[static_cast<std::size_t>(ru)];
  const double zbits = s_.pkt_size_ur_bytes * 8.0;
  auto load_of = [&](int u) {
    const double l = a1.route.at(ru, u) * a1.omega_ur[static_cast<std::size_t>(u)] * zbits;
    if (l > 0.0) return l;
    return static_cast<double>(q.q(ru, u, Service::urllc)) * 8.0 / s_.frame_len_s;
  };
  // servable UEs: routed here, with a bandwidth part for their slot service and something to send
  std::vector<int> ur_c;
  std::vector<int> em_c;
  for (int u = 0; u < ues; ++u) {
    if (!reachable(q, a1, ru, u)) continue;
    if (slot_service(q, u) == Service::urllc) {
      if (lay.o_ur > 0 && load_of(u) > 0.0) ur_c.push_back(u);
    } else if (lay.o_em > 0 && q.q(ru, u, Service::embb) > 0) {
      em_c.push_back(u);
    }
  }
  auto by_backlog = [&](Service svc) {
    return [&q, ru, svc](int a, int b) { return q.q(ru, a, svc) > q.q(ru, b, svc); };
  };
  std::stable_sort(ur_c.begin(), ur_c.end(), by_backlog(Service::urllc));
  std::stable_sort(em_c.begin(), em_c.end(), by_backlog(Service::embb));
  std::vector<int> cand;
  std::size_t iu = 0;
  std::size_t ie = 0;
  if (iu < ur_c.size()) cand.push_back(ur_c[iu++]);
  if (ie < em_c.size()) cand.push_back(em_c[ie++]);
  while (static_cast<int>(cand.size()) < kOracleMaxUes && (iu < ur_c.size() || ie < em_c.size())) {
    cand.push_back(iu < ur_c.size() ? ur_c[iu++] : em_c[ie++]);
  }
  std::sort(cand.begin(), cand.end());
  ues_out = cand;

  bool has_ur = false;
  bool has_em = false;
  for (int u : cand) (slot_service(q, u) == Service::urllc ? has_ur : has_em) = true;
  OracleInstance inst;
  inst.ues = static_cast<int>(cand.size());
  if (lay.o_ur + lay.o_em <= kOracleMaxRbs) {
    inst.o_ur = lay.o_ur;
    inst.o_em = lay.o_em;
  } else {
    inst.o_ur = has_ur ? std::min(lay.o_ur, kOracleMaxRbs - (has_em && lay.o_em > 0 ? 1 : 0)) : 0;
    inst.o_em = std::min(lay.o_em, kOracleMaxRbs - inst.o_ur);
  }
  const auto fixed = fixed_latency(s_, a1.route, a1.omega_ur);
  const double fixed_s = fixed.cu + fixed.midhaul + fixed.du + fixed.fronthaul;
  for (int o = 0; o < inst.subbands(); ++o) {
    const int full = o < inst.o_ur ? o : lay.o_ur + (o - inst.o_ur);
    for (int u : cand) inst.gains.push_back(ctx.gains->at(ru, full, u));
  }
  for (int u : cand) {
    inst.service.push_back(slot_service(q, u));
    inst.embb_backlog_bits.push_back(static_cast<double>(q.q(ru, u, Service::embb)) * 8.0);
    inst.urllc_load.push_back(inst.service.back() == Service::urllc ? load_of(u) : 0.0);
    inst.fixed_latency_s.push_back(fixed_s);
  }
  inst.levels = {s_.p_max_w / 3.0, 2.0 * s_.p_max_w / 3.0, s_.p_max_w};
  inst.lambda = s_.lambda;
  inst.r_max_bps = s_.r_max();
  return inst;
}

RuAllocation OracleScheduler::allocate_ru(int ru, const SlotContext& ctx) const {
  const auto& lay = (*ctx.layouts)[static_cast<std::size_t>(ru)];
  RuAllocation out(lay.o_ur, lay.o_em, s_.num_ues);
  std::vector<int> map;
  const auto inst = instance(ru, ctx, map);
  if (inst.ues == 0 || inst.subbands() == 0) return out;
  const auto res = oracle_allocate(inst, s_);
  for (int o = 0; o < inst.subbands(); ++o) {
    const int full = o < inst.o_ur ? o : lay.o_ur + (o - inst.o_ur);
    for (int i = 0; i < inst.ues; ++i) {
      const auto src = res.grid.idx(o, i);
      const auto dst = out.idx(full, map[static_cast<std::size_t>(i)]);
      out.psi_em[dst] = res.grid.psi_em[src];
      out.psi_ur[dst] = res.grid.psi_ur[src];
      out.p_em[dst] = res.grid.p_em[src];
      out.p_ur[dst] = res.grid.p_ur[src];
    }
  }
  return out;
}

std::string metrics_header(int rus) {
  std::string h = "frame,objective,embb_tput_bps,worst_ur_latency_s";
  for (int e = 0; e < rus; ++e) h += fmt::format(",phi_ru{}", e);
  h += ",q_total_bytes,drops_bytes,c10e_freq,c10h_freq";
  return h;
}

void write_metrics_csv(std::ostream& out, const MetricsLog& log) {
  out << metrics_header(log.rus) << '\n';
  for (const auto& r : log.rows) {
    if (static_cast<int>(r.phi.size()) != log.rus) {
      throw std::invalid_argument(fmt::format("metrics row {} has {} phi values", r.frame, r.phi.size()));
    }
    out << fmt::format("{},{},{},{}", r.frame, r.objective, r.embb_tput_bps, r.worst_ur_latency_s);
    for (double p : r.phi) out << fmt::format(",{}", p);
    out << fmt::format(",{},{},{},{}\n", r.q_total_bytes, r.drops_bytes, r.c10e_freq, r.c10h_freq);
  }
}

MetricsLog read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("metrics CSV: empty input");
  const auto cols = static_cast<int>(std::count(line.begin(), line.end(), ',')) + 1;
  MetricsLog log;
  log.rus = cols - 8;
  if (log.rus < 1 || line != metrics_header(log.rus)) {
    throw std::invalid_argument("metrics CSV: unexpected header");
  }
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> c;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) c.push_back(cell);
    if (static_cast<int>(c.size()) != cols) {
      throw std::invalid_argument(fmt::format("metrics CSV row {}: {} columns, expected {}", row, c.size(), cols));
    }
    try {
      MetricsRow r;
      r.frame = std::stoi(c[0]);
      r.objective = std::stod(c[1]);
      r.embb_tput_bps = std::stod(c[2]);
      r.worst_ur_latency_s = std::stod(c[3]);
      for (int e = 0; e < log.rus; ++e) r.phi.push_back(std::stod(c[static_cast<std::size_t>(4 + e)]));
      const auto k = static_cast<std::size_t>(4 + log.rus);
      r.q_total_bytes = std::stoll(c[k]);
      r.drops_bytes = std::stoll(c[k + 1]);
      r.c10e_freq = std::stod(c[k + 2]);
      r.c10h_freq = std::stod(c[k + 3]);
      log.rows.push_back(std::move(r));
    } catch (const std::logic_error& e) {
      throw std::invalid_argument(fmt::format("metrics CSV row {}: {}", row, e.what()));
    }
  }
  return log;
}

std::filesystem::path emit_report(const MetricsLog& log, const std::filesystem::path& dir) {
  if (log.rows.empty()) throw std::invalid_argument("emit_report: metrics log is empty");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error(fmt::format("cannot create {}: {}", dir.string(), ec.message()));
  const auto path = dir / "metrics.csv";
  const auto tmp = dir / "metrics.csv.part";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", tmp.string()));
    write_metrics_csv(out, log);
    out.flush();
    if (!out) {
      out.close();
      std::filesystem::remove(tmp, ec);
      throw std::runtime_error(fmt::format("write to {} failed", tmp.string()));
    }
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  }
  return path;
}

SimulationResult run_simulation(const Scenario& s, LongTermController& planner,
                                ShortTermController& scheduler, const SimulationConfig& cfg,
                                const SimulationHooks& hooks) {
  s.validate();
  if (cfg.frames < 1) throw std::invalid_argument("run_simulation: frames must be >= 1");
  if (cfg.threads < 1) throw std::invalid_argument("run_simulation: threads must be >= 1");
  const int E = s.num_rus;
  const int U = s.num_ues;
  const int S = s.slots_per_frame();
  const double dt = s.slot_s();
  const double frame_s = s.frame_len_s;
  const double zur_bits = s.pkt_size_ur_bytes * 8.0;
  const auto ur_pkt_bytes = static_cast<std::int64_t>(std::llround(s.pkt_size_ur_bytes));
  const auto em = s.embb();
  const auto ur = s.urllc();

  TrafficGenerator gen(s, cfg.seed);
  std::mt19937_64 channel_rng(cfg.seed ^ 0xd1b54a32d192ed03ULL);
  QueueState queues(E, U, static_cast<std::int64_t>(s.qmax_bytes));
  const tbb::global_control limit(tbb::global_control::max_allowed_parallelism,
                                 static_cast<std::size_t>(cfg.threads));
  tbb::task_arena arena(cfg.threads);
  auto per_ru = [&](auto&& fn) {
    if (cfg.threads == 1) {
      for (int e = 0; e < E; ++e) fn(e);
    } else {
      arena.execute([&] { tbb::parallel_for(0, E, [&](int e) { fn(e); }); });
    }
  };

  SimulationResult res;
  res.log.rus = E;
  std::vector<DemandFrame> history;
  std::vector<int> run_len(static_cast<std::size_t>(U), 0);

  for (int t = 1; t <= cfg.frames; ++t) {
    int slot = 0;
    try {
      const DemandFrame truth = gen.next_frame();
      A1Message a1 = planner.plan(t, history, truth);
      a1.t = t;
      a1.route.validate();
      if (static_cast<int>(a1.phi.size()) != E || static_cast<int>(a1.omega_em.size()) != U ||
          static_cast<int>(a1.omega_ur.size()) != U) {
        throw std::invalid_argument("A1 message has the wrong shape");
      }
      if (hooks.on_a1) hooks.on_a1(a1);
      std::vector<BwpLayout> layouts;
      for (double phi : a1.phi) layouts.push_back(s.layout(phi));
      const GainTable gains = draw_gains(s, gen.rus(), truth.positions, layouts, channel_rng);

      // frame bytes per (RU, UE)
      std::vector<std::int64_t> em_bytes(static_cast<std::size_t>(E * U), 0);
      std::vector<std::int64_t> ur_bytes(static_cast<std::size_t>(E * U), 0);
      const auto& pkts = gen.last_urllc_packets();
      for (int u = 0; u < U; ++u) {
        const auto ui = static_cast<std::size_t>(u);
        const auto em_total = static_cast<std::int64_t>(
            std::llround(truth.omega_em[ui] * s.pkt_size_em_bytes * frame_s));
        const auto ur_total = static_cast<std::int64_t>(pkts[ui]) * ur_pkt_bytes;
        const auto em_split = split_bytes(em_total, a1.route, u);
        const auto ur_split = split_bytes(ur_total, a1.route, u);
        for (int e = 0; e < E; ++e) {
          em_bytes[at(e, u, U)] = em_split[static_cast<std::size_t>(e)];
          ur_bytes[at(e, u, U)] = ur_split[static_cast<std::size_t>(e)];
        }
      }

      scheduler.begin_frame(a1);
      const auto fixed = fixed_latency(s, a1.route, truth.omega_ur);
      FrameObservation obs;
      obs.embb_avg_rate.assign(static_cast<std::size_t>(U), 0.0);
      obs.embb_active.assign(static_cast<std::size_t>(U), 0);
      obs.fh_peak_rate.assign(static_cast<std::size_t>(E), 0.0);
      obs.urllc_delivered_bits.assign(static_cast<std::size_t>(E * U), 0.0);
      obs.urllc_required_bits.assign(static_cast<std::size_t>(E * U), 0.0);
      obs.urllc_latency.assign(static_cast<std::size_t>(U), 0.0);
      obs.urllc_active.assign(static_cast<std::size_t>(U), 0);
      obs.queue_peak.assign(static_cast<std::size_t>(E * 2), 0);
      for (int e = 0; e < E; ++e) {
        const auto& l = layouts[static_cast<std::size_t>(e)];
        obs.bwp_used_hz.push_back(l.o_ur * ur.rb_bandwidth_hz + l.o_em * em.rb_bandwidth_hz);
        obs.bwp_avail_hz.push_back(l.b_ur_hz + l.b_em_hz);
        for (int u = 0; u < U; ++u) {
          obs.urllc_required_bits[at(e, u, U)] =
              a1.route.at(e, u) * truth.omega_ur[static_cast<std::size_t>(u)] * zur_bits * frame_s;
        }
      }
      for (int u = 0; u < U; ++u) {
        const auto ui = static_cast<std::size_t>(u);
        obs.embb_active[ui] = truth.omega_em[ui] > 0.0 ? 1 : 0;
        if (queues.ue_backlog(u, Service::urllc) > 0) obs.urllc_active[ui] = 1;
      }
      std::vector<int> worst_busy(static_cast<std::size_t>(U), 0);
      std::vector<double> served_em_bits(static_cast<std::size_t>(U), 0.0);
      SlotRates slot_rates(static_cast<std::size_t>(S), std::vector<double>(static_cast<std::size_t>(E * U), 0.0));
      const auto dropped_before = queues.dropped();

      for (slot = 1; slot <= S; ++slot) {
        for (int e = 0; e < E; ++e) {
          for (int u = 0; u < U; ++u) {
            const auto i = at(e, u, U);
            queues.admit(e, u, Service::embb, spread_bytes(em_bytes[i], slot - 1, S));
            queues.admit(e, u, Service::urllc, spread_bytes(ur_bytes[i], slot - 1, S));
          }
        }
        std::vector<std::int64_t> ur_backlog(static_cast<std::size_t>(U));
        for (int u = 0; u < U; ++u) ur_backlog[static_cast<std::size_t>(u)] = queues.ue_backlog(u, Service::urllc);

        const SlotContext ctx{t, slot, &a1, &queues, &gains, &layouts};
        scheduler.prepare(ctx);
        AllocationGrid grid;
        grid.rus.resize(static_cast<std::size_t>(E));
        std::vector<RuRates> rates(static_cast<std::size_t>(E));
        per_ru([&](int e) {
          grid.rus[static_cast<std::size_t>(e)] = scheduler.allocate_ru(e, ctx);
          rates[static_cast<std::size_t>(e)] = ru_rates(grid.rus[static_cast<std::size_t>(e)], gains, e, s);
        });
        const auto report = check_power_feasible(grid, gains, s);
        ++res.grids;
        if (report.feasible()) ++res.feasible_grids;
        if (hooks.on_e2) hooks.on_e2(E2Message{t, slot, grid}, report);

        for (int e = 0; e < E; ++e) {
          const auto& r = rates[static_cast<std::size_t>(e)];
          double fh = 0.0;
          for (int u = 0; u < U; ++u) {
            const auto ui = static_cast<std::size_t>(u);
            fh += r.embb[ui] + r.urllc[ui];
            const auto cap_em = static_cast<std::int64_t>(std::floor(r.embb[ui] * dt / 8.0));
            const auto cap_ur = static_cast<std::int64_t>(std::floor(r.urllc[ui] * dt / 8.0));
            served_em_bits[ui] += 8.0 * static_cast<double>(queues.serve(e, u, Service::embb, cap_em));
            queues.serve(e, u, Service::urllc, cap_ur);
            obs.embb_avg_rate[ui] += r.embb[ui] * dt / frame_s;
            obs.urllc_delivered_bits[at(e, u, U)] += r.urllc[ui] * dt;
            slot_rates[static_cast<std::size_t>(slot - 1)][at(e, u, U)] = r.urllc[ui];
          }
          auto& fpk = obs.fh_peak_rate[static_cast<std::size_t>(e)];
          fpk = std::max(fpk, fh);
          for (Service svc : {Service::embb, Service::urllc}) {
            auto& qp = obs.queue_peak[static_cast<std::size_t>(e * 2 + static_cast<int>(svc))];
            qp = std::max(qp, queues.ru_total(e, svc));
          }
        }
        for (int u = 0; u < U; ++u) {
          const auto ui = static_cast<std::size_t>(u);
          if (ur_backlog[ui] <= 0) continue;
          obs.urllc_active[ui] = 1;
          ++run_len[ui];
          if (queues.ue_backlog(u, Service::urllc) == 0) {
            worst_busy[ui] = std::max(worst_busy[ui], run_len[ui]);
            run_len[ui] = 0;
          }
        }
        scheduler.observe(ctx, grid);
      }
      slot = S;

      MetricsRow row;
      row.frame = t;
      row.phi = a1.phi;
      O1Report o1;
      o1.t = t;
      o1.omega_em = truth.omega_em;
      o1.omega_ur = truth.omega_ur;
      o1.true_route = truth.true_route;
      double worst = 0.0;
      bool unbounded = false;
      for (int u = 0; u < U; ++u) {
        const auto ui = static_cast<std::size_t>(u);
        worst_busy[ui] = std::max(worst_busy[ui], run_len[ui]);
        if (obs.urllc_active[ui] != 0) {
          obs.urllc_latency[ui] = first_drain_latency(fixed, worst_busy[ui], s);
          ++res.urllc_checks;
          if (obs.urllc_latency[ui] <= s.latency_budget_s) ++res.urllc_within_budget;
        }
        double lat = kInf;
        try {
          lat = e2e_latency(s, a1.route, truth.omega_ur, slot_rates, u).total();
        } catch (const UnboundedLatency&) {
          unbounded = true;
        }
        worst = std::max(worst, lat);
        o1.latency.push_back(lat);
        o1.embb_throughput.push_back(served_em_bits[ui] / frame_s);
        row.embb_tput_bps += served_em_bits[ui] / frame_s;
      }
      if (unbounded) ++res.unbounded_frames;
      row.worst_ur_latency_s = worst;
      row.objective = std::isinf(worst)
                          ? -kInf
                          : objective(row.embb_tput_bps, worst, s.lambda, s.r_max(), s.latency_budget_s);
      const auto cons = check_frame_constraints(obs, s);
      row.c10e_freq = cons.c10e_freq;
      row.c10h_freq = cons.c10h_freq;
      row.q_total_bytes = queues.total();
      row.drops_bytes = queues.dropped() - dropped_before;
      for (int e = 0; e < E; ++e) {
        for (int u = 0; u < U; ++u) {
          o1.queue_em.push_back(queues.q(e, u, Service::embb));
          o1.queue_ur.push_back(queues.q(e, u, Service::urllc));
        }
      }
      if (hooks.on_o1) hooks.on_o1(o1);
      res.log.rows.push_back(std::move(row));
      history.push_back(truth);
    } catch (const SimulationError&) {
      throw;
    } catch (const std::exception& ex) {
      throw SimulationError(t, slot, ex.what());
    }
  }
  res.arrived_bytes = queues.arrived();
  res.served_bytes = queues.served();
  res.queued_bytes = queues.total();
  res.dropped_bytes = queues.dropped();
  res.conserved = queues.conserved();
  return res;
}

ControllerPair make_controllers(ControllerKind kind, const Scenario& s, SlicePolicy policy,
                                const ForecasterModel* forecaster, const AllocatorModel* allocator) {
  ControllerPair c;
  switch (kind) {
    case ControllerKind::learned:
      if (forecaster == nullptr || allocator == nullptr) {
        throw std::invalid_argument("learned controller needs a forecaster and an allocator");
      }
      c.planner = std::make_unique<ForecastPlanner>(*forecaster, s, policy);
      c.scheduler = std::make_unique<LearnedScheduler>(*allocator, s);
      break;
    case ControllerKind::oracle:
      c.planner = std::make_unique<TruthPlanner>(s, policy);
      c.scheduler = std::make_unique<OracleScheduler>(s);
      break;
    case ControllerKind::heuristic:
      c.planner = std::make_unique<PersistencePlanner>(s, policy);
      c.scheduler = std::make_unique<ProportionalScheduler>(s);
      break;
  }
  return c;
}

}  // namespace msmu
