// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "msmu/scenario.hpp"
#include "test_paths.hpp"

using namespace msmu;

TEST(Numerology, HandValues) {
  const auto n1 = numerology_params(1, 0.01);
  EXPECT_EQ(n1.scs_hz, 30e3);
  EXPECT_EQ(n1.rb_bandwidth_hz, 360e3);
  EXPECT_EQ(n1.tti_s, 0.25e-3);
  EXPECT_EQ(n1.ttis_per_frame, 40);

  const auto n2 = numerology_params(2, 0.01);
  EXPECT_EQ(n2.scs_hz, 60e3);
  EXPECT_EQ(n2.rb_bandwidth_hz, 720e3);
  EXPECT_EQ(n2.tti_s, 0.125e-3);
  EXPECT_EQ(n2.ttis_per_frame, 80);

  EXPECT_EQ(numerology_params(0, 0.01).scs_hz, 15e3);
}

TEST(Numerology, RejectsUnsupportedIndex) {
  EXPECT_THROW(numerology_params(4, 0.01), std::invalid_argument);
  EXPECT_THROW(numerology_params(-1, 0.01), std::invalid_argument);
}

TEST(Numerology, TtiCountTilesFrame) {
  for (int g = 0; g <= 3; ++g) {
    for (double frame : {0.01, 0.005, 0.02}) {
      const auto n = numerology_params(g, frame);
      EXPECT_DOUBLE_EQ(n.ttis_per_frame * n.tti_s, frame) << "gamma " << g;
      EXPECT_GT(n.rb_bandwidth_hz, 0.0);
    }
  }
}

TEST(Bwp, DefaultSplit) {
  const Scenario s;
  const auto half = s.layout(0.5);
  EXPECT_DOUBLE_EQ(half.b_ur_hz, 1.5e6);
  EXPECT_DOUBLE_EQ(half.b_em_hz, 1.32e6);
  EXPECT_EQ(half.o_ur, 2);
  EXPECT_EQ(half.o_em, 3);

  const auto zero = s.layout(0.0);
  EXPECT_EQ(zero.b_ur_hz, 0.0);
  EXPECT_EQ(zero.o_ur, 0);
  EXPECT_DOUBLE_EQ(zero.b_em_hz, 2.82e6);
  EXPECT_EQ(zero.o_em, 7);

  const auto one = s.layout(1.0);
  EXPECT_EQ(one.b_em_hz, 0.0);
  EXPECT_EQ(one.o_em, 0);
  EXPECT_EQ(one.o_ur, 4);
}

TEST(Bwp, RejectsPhiOutsideUnitInterval) {
  const Scenario s;
  EXPECT_THROW(s.layout(-0.01), std::invalid_argument);
  EXPECT_THROW(s.layout(1.01), std::invalid_argument);
}

TEST(Bwp, MonotoneInPhi) {
  const Scenario s;
  BwpLayout prev = s.layout(0.0);
  for (int i = 1; i <= 1000; ++i) {
    const auto cur = s.layout(i / 1000.0);
    EXPECT_GE(cur.o_ur, prev.o_ur);
    EXPECT_LE(cur.o_em, prev.o_em);
    if (cur.o_ur > 0 && cur.o_em > 0) {
      EXPECT_LE(cur.b_ur_hz + cur.b_em_hz + s.guard_band_hz, s.ru_bandwidth_hz + 1e-6);
    }
    prev = cur;
  }
}

TEST(Bwp, PhiMaxKeepsOneEmbbRb) {
  const Scenario s;
  EXPECT_EQ(s.layout(s.phi_max()).o_em, 1);
}

TEST(Scenario, DefaultsMatchTable) {
  const Scenario s;
  EXPECT_EQ(s.num_rus, 4);
  EXPECT_EQ(s.num_ues, 24);
  EXPECT_EQ(s.ru_bandwidth_hz, 3e6);
  EXPECT_EQ(s.frame_len_s, 0.01);
  EXPECT_EQ(s.pkt_size_ur_bytes, 125.0);
  EXPECT_EQ(s.slots_per_frame(), 80);
  EXPECT_NO_THROW(s.validate());
}

TEST(Scenario, OmittedDispersionDefaultsToOne) {
  const Scenario s = load_scenario("[phy]\nru_bandwidth = 3000000\n");
  EXPECT_EQ(s.dispersion, 1.0);
}

TEST(Scenario, ZeroBandwidthNamesKey) {
  try {
    load_scenario("[phy]\nru_bandwidth = 0\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "ru_bandwidth");
  }
}

TEST(Scenario, UnknownKeyRejected) {
  try {
    load_scenario("[phy]\nru_bandwith = 3000000\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "ru_bandwith");
  }
  EXPECT_THROW(load_scenario("[ran]\nnum_rus = 4\n"), ConfigError);
}

TEST(Scenario, MalformedValueRejected) {
  EXPECT_THROW(load_scenario("[network]\nnum_rus = four\n"), ConfigError);
  EXPECT_THROW(load_scenario("[network]\nnum_rus = 4x\n"), ConfigError);
  EXPECT_THROW(load_scenario("[model]\nrevin_affine = maybe\n"), ConfigError);
  EXPECT_THROW(load_scenario("[network\nnum_rus = 4\n"), ConfigError);
}

TEST(Scenario, InvariantViolationsNameKeys) {
  const std::pair<const char*, const char*> cases[] = {
      {"[network]\nnum_rus = 0\n", "num_rus"},
      {"[network]\nnum_ues = 0\n", "num_ues"},
      {"[phy]\nguard_band = 3000000\n", "ru_bandwidth"},
      {"[timing]\neps2 = 1\n", "eps2"},
      {"[phy]\nerror_prob = 0.5\n", "error_prob"},
      {"[model]\nlambda = -1\n", "lambda"},
      {"[network]\nfh_capacity = 0\n", "fh_capacity"},
  };
  for (const auto& [text, key] : cases) {
    try {
      load_scenario(text);
      ADD_FAILURE() << "accepted: " << text;
    } catch (const ConfigError& e) {
      EXPECT_EQ(e.key(), key) << text;
    }
  }
}

TEST(Scenario, SerializeRoundTripDefault) {
  const Scenario s;
  EXPECT_EQ(load_scenario(serialize(s)), s);
}

TEST(Scenario, SerializeRoundTripRandom) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    Scenario s;
    s.num_rus = 1 + static_cast<int>(rng() % 8);
    s.num_ues = 1 + static_cast<int>(rng() % 40);
    s.ru_bandwidth_hz = 1e6 + 1e7 * u(rng);
    s.guard_band_hz = 1e5 * u(rng);
    s.noise_w = 1e-14 * (1.0 + u(rng));
    s.lambda = 10.0 * u(rng);
    s.error_prob = 1e-6 + 0.1 * u(rng);
    s.sinusoid_amplitude = u(rng);
    s.revin_affine = (rng() & 1) != 0;
    s.seed = rng();
    s.p_max_w = 0.1 + u(rng) / 3.0;
    ASSERT_NO_THROW(s.validate());
    EXPECT_EQ(load_scenario(serialize(s)), s) << "case " << i;
  }
}

TEST(Scenario, ShippedFilesLoad) {
  for (const char* name : {"default.ini", "reliability_2ue.ini", "forecast_sinusoid.ini"}) {
    EXPECT_NO_THROW(load_scenario_file(test_paths::scenario(name))) << name;
  }
  EXPECT_EQ(load_scenario_file(test_paths::scenario("default.ini")), Scenario{});
}

TEST(Scenario, MissingFileIsConfigError) {
  EXPECT_THROW(load_scenario_file("/nonexistent/scenario.ini"), ConfigError);
}
