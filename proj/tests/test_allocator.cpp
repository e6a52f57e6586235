// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "msmu/allocator.hpp"

using namespace msmu;
using nn::Mat;

namespace {

AllocatorConfig tiny_config() {
  AllocatorConfig c;
  c.hidden = 3;
  c.layers = 2;
  c.dropout = 0.2;
  return c;
}

A1Message make_a1(const Scenario& s, int ues, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(0.0, 200.0);
  std::uniform_int_distribution<int> route(0, s.num_rus - 1);
  A1Message a;
  a.t = 3;
  std::vector<int> r;
  for (int u = 0; u < ues; ++u) {
    a.omega_em.push_back(d(rng));
    a.omega_ur.push_back(d(rng));
    r.push_back(route(rng));
  }
  a.route = RoutingDecision::one_hot(r, s.num_rus);
  for (int e = 0; e < s.num_rus; ++e) a.phi.push_back(0.1 * e);
  return a;
}

GainTable flat_gains(int rus, const BwpLayout& l, int ues, double g) {
  GainTable t{ues, {}};
  for (int e = 0; e < rus; ++e) {
    t.per_ru.emplace_back(static_cast<std::size_t>((l.o_ur + l.o_em) * ues), g);
  }
  return t;
}

BwpLayout layout_of(int o_ur, int o_em) {
  BwpLayout l;
  l.o_ur = o_ur;
  l.o_em = o_em;
  return l;
}

}  // namespace

TEST(AllocatorFeatures, HandValues) {
  Scenario s;  // 1 Mbit/s nominal, 1500 B packets, 10 ms frames
  const auto f = frame_features(1e6 / 12000.0, 300.0, 2.0, 0.25, s);
  EXPECT_DOUBLE_EQ(f[0], 1.0);
  EXPECT_DOUBLE_EQ(f[1], 3.0);
  EXPECT_DOUBLE_EQ(f[2], 0.5);
  EXPECT_DOUBLE_EQ(f[3], 0.25);
  const auto a = slot_features({Service::urllc, 0.5, 0.25}, s);
  EXPECT_EQ(a[0], 1.0);
  EXPECT_EQ(a[1], 0.5);
  EXPECT_EQ(a[2], 0.25);
  EXPECT_EQ(slot_features({Service::embb, 0.0, 0.0}, s)[0], -1.0);
}

TEST(SspInputTest, PaddingAfterCurrentSlot) {
  const Scenario s;
  const auto a1 = make_a1(s, 3, 1);
  std::vector<std::vector<SlotFeedback>> hist(5, std::vector<SlotFeedback>(3, {Service::urllc, 0.5, 0.5}));
  const auto first = build_ssp_input(a1, {}, 1, s);
  EXPECT_EQ(first.width(), 4 + 80 * 3);
  for (int u = 0; u < 3; ++u) {
    for (int j = 1; j <= 80; ++j) {
      for (int k = 0; k < 3; ++k) EXPECT_EQ(first.slot(u, j, k), 0.0);
    }
  }
  const auto in = build_ssp_input(a1, hist, 4, s);
  for (int u = 0; u < 3; ++u) {
    for (int j = 1; j <= 80; ++j) EXPECT_EQ(in.slot(u, j, 0), j < 4 ? 1.0 : 0.0);
    const auto ui = static_cast<std::size_t>(u);
    int e_u = 0;
    for (int e = 0; e < s.num_rus; ++e) {
      if (a1.route.at(e, u) == 1.0) e_u = e;
    }
    const auto f = frame_features(a1.omega_em[ui], a1.omega_ur[ui], e_u,
                                  a1.phi[static_cast<std::size_t>(e_u)], s);
    for (int k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(in.frame(u, k), f[static_cast<std::size_t>(k)]);
  }
  EXPECT_THROW(build_ssp_input(a1, hist, 0, s), std::invalid_argument);
  EXPECT_THROW(build_ssp_input(a1, hist, 81, s), std::invalid_argument);
  EXPECT_THROW(build_ssp_input(a1, hist, 7, s), std::invalid_argument);
}

TEST(AllocatorModelTest, ZeroHeadsPredictIdle) {
  const Scenario s;
  AllocatorModel m(tiny_config(), 2);
  for (const auto& [name, p] : m.params()) {
    if (name.rfind("head", 0) == 0) p->value.setZero();
  }
  const auto pred = predict_allocation(m, build_ssp_input(make_a1(s, 4, 2), {}, 1, s));
  for (std::size_t u = 0; u < 4; ++u) {
    EXPECT_EQ(pred.service[u], Service::embb);
    EXPECT_EQ(pred.prb_frac[u], 0.0);
    EXPECT_EQ(pred.power_w[u], 0.0);
  }
}

TEST(AllocatorModelTest, SessionMatchesReplay) {
  const Scenario s;
  AllocatorModel m(tiny_config(), 3);
  const auto a1 = make_a1(s, 3, 4);
  AllocatorSession session(m, s);
  session.begin_frame(a1);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  std::vector<std::vector<SlotFeedback>> hist;
  for (int j = 1; j <= 6; ++j) {
    const auto streamed = session.predict();
    const auto replay = predict_allocation(m, build_ssp_input(a1, hist, j, s));
    for (std::size_t u = 0; u < 3; ++u) {
      EXPECT_NEAR(streamed.prb_frac[u], replay.prb_frac[u], 1e-12);
      EXPECT_NEAR(streamed.power_w[u], replay.power_w[u], 1e-12);
      EXPECT_EQ(streamed.service[u], replay.service[u]);
      EXPECT_GE(streamed.prb_frac[u], 0.0);
      EXPECT_LE(streamed.prb_frac[u], 1.0);
      EXPECT_LE(streamed.power_w[u], s.p_max_w);
    }
    std::vector<SlotFeedback> fb;
    for (int u = 0; u < 3; ++u) {
      fb.push_back({d(rng) < 0.5 ? Service::embb : Service::urllc, d(rng), d(rng)});
    }
    session.observe(fb);
    hist.push_back(fb);
  }
}

TEST(RbCount, RoundHalfUp) {
  EXPECT_EQ(rb_count(0.5, 3), 2);
  EXPECT_EQ(rb_count(0.49, 3), 1);
  EXPECT_EQ(rb_count(1.5, 3), 3);
  EXPECT_EQ(rb_count(-0.2, 3), 0);
  EXPECT_EQ(rb_count(0.7, 0), 0);
}

TEST(Discretize, StaysInBwpAndLowestFree) {
  const auto l = layout_of(2, 5);
  std::vector<int> occ(7, -1);
  occ[3] = 9;
  const auto p = discretize_prbs(0, 0.6, Service::embb, l, occ);
  EXPECT_EQ(p.subbands, (std::vector<int>{2, 4, 5}));
  const auto q = discretize_prbs(1, 1.0, Service::urllc, l, occ);
  EXPECT_EQ(q.subbands, (std::vector<int>{0, 1}));
  std::vector<int> wrong(3, -1);
  EXPECT_THROW(discretize_prbs(0, 1.0, Service::embb, l, wrong), std::invalid_argument);
}

TEST(Discretize, RandomRequestsAreOrthogonal) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const auto l = layout_of(static_cast<int>(rng() % 4), 1 + static_cast<int>(rng() % 10));
    std::vector<RbRequest> req;
    const int ues = 1 + static_cast<int>(rng() % 6);
    for (int u = 0; u < ues; ++u) req.push_back({u, d(rng) < 0.5 ? Service::embb : Service::urllc, d(rng)});
    const auto placed = place_requests(req, l);
    std::set<int> seen;
    for (const auto& p : placed) {
      for (int o : p.subbands) {
        EXPECT_TRUE(seen.insert(o).second);
        if (p.service == Service::urllc) {
          EXPECT_LT(o, l.o_ur);
        } else {
          EXPECT_GE(o, l.o_ur);
          EXPECT_LT(o, l.o_ur + l.o_em);
        }
      }
    }
  }
}

TEST(PlaceRequests, UrllcFirst) {
  const auto l = layout_of(1, 2);
  const std::vector<RbRequest> req{{0, Service::urllc, 1.0}, {1, Service::urllc, 1.0},
                                   {2, Service::embb, 1.0}};
  const auto p = place_requests(req, l);
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(p[0].ue, 0);
  EXPECT_EQ(p[1].ue, 2);
  EXPECT_EQ(p[1].subbands, (std::vector<int>{1, 2}));
}

TEST(AssignPower, EvenSpreadAndRescale) {
  Scenario s;
  s.num_rus = 1;
  const auto l = layout_of(1, 3);
  const auto g = flat_gains(1, l, 2, 1e-6);
  {
    const std::vector<std::vector<Placement>> pl{{{0, Service::embb, {1, 2}}}};
    const std::vector<double> pw{0.4, 0.0};
    const auto grid = assign_power(pl, pw, g, {l}, s);
    EXPECT_DOUBLE_EQ(grid.rus[0].p_em[grid.rus[0].idx(1, 0)], 0.2);
    EXPECT_DOUBLE_EQ(grid.rus[0].p_em[grid.rus[0].idx(2, 0)], 0.2);
  }
  {
    const std::vector<std::vector<Placement>> pl{{{0, Service::embb, {1}}, {1, Service::embb, {2}}}};
    const std::vector<double> pw{1.0, 1.0};
    PowerReport rep;
    const auto grid = assign_power(pl, pw, g, {l}, s, &rep);
    EXPECT_NEAR(grid.rus[0].p_em[grid.rus[0].idx(1, 0)], 0.5, 1e-12);
    EXPECT_NEAR(grid.rus[0].p_em[grid.rus[0].idx(2, 1)], 0.5, 1e-12);
    EXPECT_LE(grid.rus[0].total_power(), s.p_max_w);
    EXPECT_EQ(rep.rescaled_rus, 1);
  }
}

TEST(AssignPower, UnaffordableUrllcRbIsShed) {
  Scenario s;
  s.num_rus = 1;
  const auto l = layout_of(2, 1);
  auto g = flat_gains(1, l, 1, 1e-6);
  g.per_ru[0][0] = 1e-20;  // floor of 1e7 W
  const std::vector<std::vector<Placement>> pl{{{0, Service::urllc, {0, 1}}}};
  const std::vector<double> pw{0.0};
  PowerReport rep;
  const auto grid = assign_power(pl, pw, g, {l}, s, &rep);
  EXPECT_EQ(rep.shed_rbs, 1);
  EXPECT_EQ(grid.rus[0].psi_ur[grid.rus[0].idx(0, 0)], 0);
  EXPECT_EQ(grid.rus[0].psi_ur[grid.rus[0].idx(1, 0)], 1);
  EXPECT_DOUBLE_EQ(grid.rus[0].p_ur[grid.rus[0].idx(1, 0)], s.noise_w * s.snr_floor / 1e-6);
  EXPECT_TRUE(check_power_feasible(grid, g, s).feasible());
}

TEST(AssignPower, RandomPlacementsAreAlwaysFeasible) {
  Scenario s;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const int ues = 1 + static_cast<int>(rng() % 5);
    std::vector<BwpLayout> layouts;
    std::vector<std::vector<Placement>> placements;
    GainTable g{ues, {}};
    std::vector<Service> svc;
    for (int u = 0; u < ues; ++u) svc.push_back(d(rng) < 0.5 ? Service::embb : Service::urllc);
    for (int e = 0; e < s.num_rus; ++e) {
      const auto l = layout_of(static_cast<int>(rng() % 4), 1 + static_cast<int>(rng() % 6));
      layouts.push_back(l);
      std::vector<double> ge;
      for (int i = 0; i < (l.o_ur + l.o_em) * ues; ++i) ge.push_back(std::pow(10.0, -14.0 + 8.0 * d(rng)));
      g.per_ru.push_back(ge);
      std::vector<RbRequest> req;
      for (int u = 0; u < ues; ++u) {
        if (d(rng) < 0.5) req.push_back({u, svc[static_cast<std::size_t>(u)], d(rng)});
      }
      placements.push_back(place_requests(req, l));
    }
    std::vector<double> pw;
    for (int u = 0; u < ues; ++u) pw.push_back(2.0 * d(rng));
    const auto grid = assign_power(placements, pw, g, layouts, s);
    const auto rep = check_power_feasible(grid, g, s);
    EXPECT_TRUE(rep.feasible()) << rep.describe();
  }
}

TEST(TeacherSchedule, AlternatesWhenBothPresent) {
  const Scenario s;
  const auto both = teacher_schedule(100.0, 50.0, 0.3, s);
  ASSERT_EQ(both.size(), 80u);
  const auto l = s.layout(0.3);
  for (int j = 1; j <= 80; ++j) {
    const auto& f = both[static_cast<std::size_t>(j - 1)];
    EXPECT_EQ(f.service, j % 2 == 1 ? Service::urllc : Service::embb);
    EXPECT_GE(f.prb_frac, 0.0);
    EXPECT_LE(f.prb_frac, 1.0);
    const int o = f.service == Service::urllc ? l.o_ur : l.o_em;
    EXPECT_DOUBLE_EQ(f.power_w, s.p_max_w * rb_count(f.prb_frac, o) / (l.o_ur + l.o_em));
  }
  for (const auto& f : teacher_schedule(100.0, 0.0, 0.3, s)) EXPECT_EQ(f.service, Service::embb);
  for (const auto& f : teacher_schedule(0.0, 0.0, 0.3, s)) {
    EXPECT_EQ(f.prb_frac, 0.0);
    EXPECT_EQ(f.power_w, 0.0);
  }
}

TEST(TeacherSchedule, EmbbFractionCoversDemand) {
  Scenario s;
  const double pps = 100.0;  // 1.2 Mbit/s
  const auto l = s.layout(0.0);
  const auto sched = teacher_schedule(pps, 0.0, 0.0, s);
  const double per_rb = s.embb().rb_bandwidth_hz * std::log2(1.0 + kTeacherSnr) * s.slot_s();
  const double need = std::ceil(pps * 1500 * 8 * s.frame_len_s / 80 / per_rb);
  EXPECT_DOUBLE_EQ(sched[0].prb_frac, std::min(1.0, need / l.o_em));
}

TEST(AllocatorTraining, DeterministicAndGradientsCheck) {
  const Scenario s;
  AllocatorDataParams dp;
  dp.samples = 12;
  dp.seed = 8;
  const auto data = make_allocator_dataset(s, dp);
  const auto again = make_allocator_dataset(s, dp);
  ASSERT_EQ(data.size(), 12u);
  EXPECT_EQ(data[5].frame, again[5].frame);

  AllocatorTrainParams tp;
  tp.epochs = 2;
  tp.batch_size = 4;
  tp.lr = 1e-3;
  AllocatorModel a(tiny_config(), 9);
  AllocatorModel b(tiny_config(), 9);
  train_allocator(a, data, s, tp);
  train_allocator(b, data, s, tp);
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    EXPECT_EQ(a.params()[i].second->value, b.params()[i].second->value);
  }

  const std::vector<const AllocatorSample*> batch{&data[0], &data[1]};
  const double err = nn::grad_check(
      [&] {
        std::mt19937_64 drop(3);
        return allocator_loss(a, batch, s, true, &drop).total;
      },
      a.params(), 1e-5);
  EXPECT_LT(err, 1e-4);
}
