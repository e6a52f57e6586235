// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include <boost/crc.hpp>

#include "grad_cases.hpp"
#include "msmu/nn.hpp"

using namespace msmu;
using namespace msmu::nn;

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Plain softmax attention on raw matrices, row by row.
Mat attention_oracle(const Mat& q, const Mat& k, const Mat& v) {
  const auto t = q.rows();
  Mat out = Mat::Zero(t, v.cols());
  for (Eigen::Index i = 0; i < t; ++i) {
    std::vector<double> w(static_cast<std::size_t>(t));
    double mx = -1e300;
    for (Eigen::Index j = 0; j < t; ++j) {
      double dot = 0.0;
      for (Eigen::Index d = 0; d < q.cols(); ++d) dot += q(i, d) * k(j, d);
      w[static_cast<std::size_t>(j)] = dot / std::sqrt(static_cast<double>(q.cols()));
      mx = std::max(mx, w[static_cast<std::size_t>(j)]);
    }
    double z = 0.0;
    for (auto& x : w) z += (x = std::exp(x - mx));
    for (Eigen::Index j = 0; j < t; ++j) {
      for (Eigen::Index d = 0; d < v.cols(); ++d) out(i, d) += w[static_cast<std::size_t>(j)] / z * v(j, d);
    }
  }
  return out;
}

double sigmoid_d(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double max_abs(const Mat& a, const Mat& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST(Attention, SingleStepReturnsValue) {
  std::mt19937_64 rng(1);
  const Mat v = random_mat(1, 3, rng);
  const auto out = attention(constant(random_mat(1, 2, rng)), constant(random_mat(1, 2, rng)),
                             constant(v));
  EXPECT_LT(max_abs(out->value, v), 1e-15);
}

TEST(Attention, IdenticalKeysAverageValues) {
  std::mt19937_64 rng(2);
  Mat k(4, 3);
  for (int i = 0; i < 4; ++i) k.row(i) = Eigen::RowVector3d(0.3, -1.0, 2.0);
  const Mat v = random_mat(4, 2, rng);
  const auto out = attention(constant(random_mat(4, 3, rng)), constant(k), constant(v));
  const Mat mean = v.colwise().mean();
  for (int i = 0; i < 4; ++i) EXPECT_LT(max_abs(out->value.row(i), mean), 1e-12);
}

TEST(Attention, TwoByOneHandCase) {
  const Mat z = Mat::Zero(2, 1);
  Mat v(2, 1);
  v << 1.0, 3.0;
  const auto out = attention(constant(z), constant(z), constant(v));
  EXPECT_DOUBLE_EQ(out->value(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(out->value(1, 0), 2.0);
}

TEST(Attention, MatchesOracleAndIsConvex) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index t = 1 + static_cast<Eigen::Index>(rng() % 6);
    const Mat q = random_mat(t, 4, rng, 2.0);
    const Mat k = random_mat(t, 4, rng, 2.0);
    const Mat v = random_mat(t, 3, rng);
    const auto out = attention(constant(q), constant(k), constant(v));
    EXPECT_LT(max_abs(out->value, attention_oracle(q, k, v)), 1e-12);
    for (Eigen::Index c = 0; c < 3; ++c) {
      for (Eigen::Index r = 0; r < t; ++r) {
        EXPECT_GE(out->value(r, c), v.col(c).minCoeff() - 1e-12);
        EXPECT_LE(out->value(r, c), v.col(c).maxCoeff() + 1e-12);
      }
    }
  }
}

TEST(Attention, ShapeErrors) {
  std::mt19937_64 rng(3);
  EXPECT_THROW(attention(constant(random_mat(2, 3, rng)), constant(random_mat(2, 2, rng)),
                         constant(random_mat(2, 2, rng))),
               std::invalid_argument);
  EXPECT_THROW(blocked_multihead_attention(constant(random_mat(4, 6, rng)),
                                           constant(random_mat(4, 6, rng)),
                                           constant(random_mat(4, 6, rng)), 4, 2),
               std::invalid_argument);
  EXPECT_THROW(blocked_multihead_attention(constant(random_mat(5, 4, rng)),
                                           constant(random_mat(5, 4, rng)),
                                           constant(random_mat(5, 4, rng)), 2, 2),
               std::invalid_argument);
}

TEST(MultiHeadTest, SingleHeadIdentityOutputIsAttention) {
  std::mt19937_64 rng(4);
  MultiHead mh(4, 1, rng);
  mh.wo.w->value = Mat::Identity(4, 4);
  const Mat x = random_mat(3, 4, rng);
  const auto out = mh(constant(x), 3);
  const Mat q = x * mh.wq.w->value;
  const Mat k = x * mh.wk.w->value;
  const Mat v = x * mh.wv.w->value;
  EXPECT_LT(max_abs(out->value, attention_oracle(q, k, v)), 1e-12);
}

TEST(MultiHeadTest, ZeroProjectionsGiveOutputBias) {
  std::mt19937_64 rng(5);
  MultiHead mh(4, 2, rng);
  for (auto* l : {&mh.wq, &mh.wk, &mh.wv}) l->w->value.setZero();
  mh.wo.b->value << 0.1, -0.2, 0.3, 0.0;
  const auto out = mh(constant(random_mat(2, 4, rng)), 2);
  for (int r = 0; r < 2; ++r) EXPECT_LT(max_abs(out->value.row(r), mh.wo.b->value), 1e-15);
}

TEST(MultiHeadTest, TwoHeadsMatchHandUnrolled) {
  std::mt19937_64 rng(6);
  MultiHead mh(4, 2, rng);
  for (auto* l : {&mh.wq, &mh.wk, &mh.wv, &mh.wo}) l->b->value = random_mat(1, 4, rng, 0.1);
  const Mat x = random_mat(2, 4, rng);
  const Mat q = (x * mh.wq.w->value).rowwise() + mh.wq.b->value.row(0);
  const Mat k = (x * mh.wk.w->value).rowwise() + mh.wk.b->value.row(0);
  const Mat v = (x * mh.wv.w->value).rowwise() + mh.wv.b->value.row(0);
  Mat cat(2, 4);
  cat.leftCols(2) = attention_oracle(q.leftCols(2), k.leftCols(2), v.leftCols(2));
  cat.rightCols(2) = attention_oracle(q.rightCols(2), k.rightCols(2), v.rightCols(2));
  const Mat expect = (cat * mh.wo.w->value).rowwise() + mh.wo.b->value.row(0);
  EXPECT_LT(max_abs(mh(constant(x), 2)->value, expect), 1e-12);
}

TEST(MultiHeadTest, BlocksAreIndependent) {
  std::mt19937_64 rng(7);
  MultiHead mh(4, 2, rng);
  const Mat a = random_mat(3, 4, rng);
  const Mat b = random_mat(3, 4, rng);
  Mat both(6, 4);
  both << a, b;
  const auto joint = mh(constant(both), 3)->value;
  EXPECT_LT(max_abs(joint.topRows(3), mh(constant(a), 3)->value), 1e-12);
  EXPECT_LT(max_abs(joint.bottomRows(3), mh(constant(b), 3)->value), 1e-12);
  EXPECT_THROW(MultiHead(6, 4, rng), std::invalid_argument);
}

TEST(Ffn, ZeroAndKilledInputs) {
  std::mt19937_64 rng(8);
  Linear l1(3, 5, rng);
  Linear l2(5, 2, rng);
  EXPECT_LT(ffn(constant(Mat::Zero(2, 3)), l1, l2)->value.cwiseAbs().maxCoeff(), 1e-15);
  l1.b->value.setConstant(-100.0);
  l2.b->value << 0.5, -1.5;
  const auto out = ffn(constant(random_mat(4, 3, rng, 0.1)), l1, l2);
  for (int r = 0; r < 4; ++r) EXPECT_LT(max_abs(out->value.row(r), l2.b->value), 1e-15);
}

TEST(Ffn, MatchesStraightLineOracle) {
  std::mt19937_64 rng(9);
  Linear l1(4, 3, rng);
  Linear l2(3, 2, rng);
  l1.b->value = random_mat(1, 3, rng);
  l2.b->value = random_mat(1, 2, rng);
  const Mat z = random_mat(2, 4, rng);
  Mat expect(2, 2);
  for (int r = 0; r < 2; ++r) {
    double h[3];
    for (int j = 0; j < 3; ++j) {
      double a = l1.b->value(0, j);
      for (int i = 0; i < 4; ++i) a += z(r, i) * l1.w->value(i, j);
      h[j] = a > 0.0 ? a : 0.0;
    }
    for (int j = 0; j < 2; ++j) {
      double a = l2.b->value(0, j);
      for (int i = 0; i < 3; ++i) a += h[i] * l2.w->value(i, j);
      expect(r, j) = a;
    }
  }
  EXPECT_LT(max_abs(ffn(constant(z), l1, l2)->value, expect), 1e-12);
}

TEST(Lstm, ZeroWeightsZeroState) {
  std::mt19937_64 rng(10);
  LstmLayer layer(3, 4, rng);
  layer.wx->value.setZero();
  layer.wh->value.setZero();
  layer.b->value.setZero();
  const auto s = lstm_cell(constant(random_mat(2, 3, rng)), {}, layer);
  EXPECT_EQ(s.c->value.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(s.h->value.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Lstm, SaturatedForgetGateHoldsMemory) {
  std::mt19937_64 rng(11);
  LstmLayer layer(3, 2, rng);
  layer.wx->value.setZero();
  layer.wh->value.setZero();
  layer.b->value << -50, -50, 50, 50, 0.3, -0.2, 0, 0;  // i off, f on
  const Mat c0 = random_mat(1, 2, rng);
  const auto s = lstm_cell(constant(random_mat(1, 3, rng)),
                           {constant(random_mat(1, 2, rng)), constant(c0)}, layer);
  EXPECT_LT(max_abs(s.c->value, c0), 1e-12);
}

TEST(Lstm, ForgetBiasInitializedToOne) {
  std::mt19937_64 rng(12);
  LstmLayer layer(3, 4, rng);
  for (int j = 0; j < 16; ++j) EXPECT_EQ(layer.b->value(0, j), (j >= 4 && j < 8) ? 1.0 : 0.0);
}

TEST(Lstm, MatchesStraightLineOracle) {
  std::mt19937_64 rng(13);
  const int in = 3;
  const int hd = 2;
  LstmLayer layer(in, hd, rng);
  layer.b->value = random_mat(1, 4 * hd, rng);
  const Mat x = random_mat(2, in, rng);
  const Mat h0 = random_mat(2, hd, rng);
  const Mat c0 = random_mat(2, hd, rng);
  const auto s = lstm_cell(constant(x), {constant(h0), constant(c0)}, layer);
  for (int r = 0; r < 2; ++r) {
    for (int j = 0; j < hd; ++j) {
      double z[4];
      for (int gate = 0; gate < 4; ++gate) {
        const int col = gate * hd + j;
        double a = layer.b->value(0, col);
        for (int i = 0; i < in; ++i) a += x(r, i) * layer.wx->value(i, col);
        for (int i = 0; i < hd; ++i) a += h0(r, i) * layer.wh->value(i, col);
        z[gate] = a;
      }
      const double c = sigmoid_d(z[1]) * c0(r, j) + sigmoid_d(z[0]) * std::tanh(z[2]);
      const double h = sigmoid_d(z[3]) * std::tanh(c);
      EXPECT_NEAR(s.c->value(r, j), c, 1e-12);
      EXPECT_NEAR(s.h->value(r, j), h, 1e-12);
    }
  }
  EXPECT_THROW(lstm_cell(constant(random_mat(2, 4, rng)), {}, layer), std::invalid_argument);
}

TEST(AdamTest, ZeroGradientLeavesParameters) {
  std::mt19937_64 rng(14);
  NamedParams ps{{"w", parameter(random_mat(2, 3, rng))}};
  const Mat before = ps[0].second->value;
  ps[0].second->g().setZero();
  auto st = make_adam(ps, 1e-3);
  adam_step(ps, st);
  EXPECT_EQ(ps[0].second->value, before);
}

TEST(AdamTest, FirstStepIsSignStep) {
  std::mt19937_64 rng(15);
  NamedParams ps{{"w", parameter(random_mat(3, 3, rng))}};
  const Mat before = ps[0].second->value;
  const Mat g = random_mat(3, 3, rng);
  ps[0].second->g() = g;
  const double lr = 1e-3;
  auto st = make_adam(ps, lr);
  adam_step(ps, st);
  const Mat delta = ps[0].second->value - before;
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const double sign = g.data()[i] > 0 ? 1.0 : -1.0;
    EXPECT_NEAR(delta.data()[i], -lr * sign, lr * 1e-4);
  }
}

TEST(AdamTest, SecondEqualStepNoLarger) {
  std::mt19937_64 rng(16);
  NamedParams ps{{"w", parameter(random_mat(2, 2, rng))}};
  const Mat g = random_mat(2, 2, rng);
  auto st = make_adam(ps, 1e-2);
  Mat v0 = ps[0].second->value;
  ps[0].second->g() = g;
  adam_step(ps, st);
  const Mat d1 = ps[0].second->value - v0;
  v0 = ps[0].second->value;
  ps[0].second->g() = g;
  adam_step(ps, st);
  const Mat d2 = ps[0].second->value - v0;
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    EXPECT_LE(std::abs(d2.data()[i]), std::abs(d1.data()[i]) * (1 + 1e-3));
  }
  EXPECT_EQ(st.step, 2);
}

TEST(Losses, HandValues) {
  std::mt19937_64 rng(17);
  const Mat x = random_mat(3, 2, rng);
  EXPECT_EQ(mse(constant(x), x)->value(0, 0), 0.0);
  const std::vector<int> l0{0};
  const std::vector<int> l2{2};
  EXPECT_NEAR(cross_entropy(constant(Mat::Constant(1, 4, 0.7)), l2)->value(0, 0), std::log(4.0),
              1e-15);
  Mat big(1, 2);
  big << 1e6, 0.0;
  const double ce = cross_entropy(constant(big), l0)->value(0, 0);
  EXPECT_TRUE(std::isfinite(ce));
  EXPECT_LT(ce, 1e-6);
  const std::vector<int> bad{2};
  EXPECT_THROW(cross_entropy(constant(big), bad), std::out_of_range);
  Mat y(1, 2);
  y << 1.0, -1.0;
  EXPECT_DOUBLE_EQ(mse(constant(Mat::Zero(1, 2)), y)->value(0, 0), 1.0);
}

TEST(DropoutTest, IdentityCases) {
  std::mt19937_64 rng(18);
  const Mat x = random_mat(5, 5, rng);
  EXPECT_EQ(dropout(constant(x), 0.5, false, nullptr)->value, x);
  EXPECT_EQ(dropout(constant(x), 0.0, true, &rng)->value, x);
  const Mat d = dropout(constant(x), 0.5, true, &rng)->value;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    EXPECT_TRUE(d.data()[i] == 0.0 || std::abs(d.data()[i] - 2.0 * x.data()[i]) < 1e-15);
  }
  EXPECT_THROW(dropout(constant(x), 0.5, true, nullptr), std::invalid_argument);
}

TEST(PositionalEncodingTest, InterleavedSinCos) {
  const Mat pe = positional_encoding(10, 8);
  for (int t = 0; t < 10; ++t) {
    for (int i = 0; i < 8; ++i) {
      const double angle = t / std::pow(10000.0, (2.0 * (i / 2)) / 8.0);
      EXPECT_NEAR(pe(t, i), i % 2 == 0 ? std::sin(angle) : std::cos(angle), 1e-15);
    }
  }
}

TEST(Backward, RejectsNonScalarRoot) {
  EXPECT_THROW(backward(parameter(Mat::Zero(2, 1))), std::invalid_argument);
}

TEST(GradCheck, QuadraticIsExact) {
  std::mt19937_64 rng(19);
  NamedParams ps{{"x", parameter(random_mat(3, 4, rng))}};
  const double err = grad_check([&] { return sum(mul(ps[0].second, ps[0].second)); }, ps);
  EXPECT_LT(err, 1e-8);
}

TEST(GradCheck, EveryLayer) {
  for (const auto& [name, err] : grad_cases::layer_errors(20)) EXPECT_LT(err, 1e-4) << name;
}

TEST(Checkpoint, RoundTrip) {
  std::mt19937_64 rng(22);
  NamedParams a{{"w", parameter(random_mat(3, 2, rng))}, {"b", parameter(random_mat(1, 2, rng))}};
  NamedParams b{{"w", parameter(Mat::Zero(3, 2))}, {"b", parameter(Mat::Zero(1, 2))}};
  std::stringstream buf;
  save_checkpoint(buf, a);
  const std::string bytes = buf.str();
  EXPECT_EQ(bytes.substr(0, 4), "MSMU");
  load_checkpoint(buf, b);
  EXPECT_EQ(a[0].second->value, b[0].second->value);
  EXPECT_EQ(a[1].second->value, b[1].second->value);
  std::stringstream again;
  save_checkpoint(again, b);
  EXPECT_EQ(again.str(), bytes);
}

TEST(Checkpoint, RejectsDamage) {
  std::mt19937_64 rng(23);
  NamedParams a{{"w", parameter(random_mat(3, 2, rng))}};
  std::stringstream buf;
  save_checkpoint(buf, a);
  const std::string good = buf.str();

  auto load = [&](const std::string& data, const NamedParams& into) {
    std::istringstream in(data);
    load_checkpoint(in, into);
  };
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(load(bad_magic, a), CheckpointError);
  std::string flipped = good;
  flipped[30] ^= 0x40;
  EXPECT_THROW(load(flipped, a), CheckpointError);
  EXPECT_THROW(load(good.substr(0, good.size() - 3), a), CheckpointError);

  NamedParams wrong_shape{{"w", parameter(Mat::Zero(2, 3))}};
  EXPECT_THROW(load(good, wrong_shape), CheckpointError);
  NamedParams wrong_name{{"v", parameter(Mat::Zero(3, 2))}};
  EXPECT_THROW(load(good, wrong_name), CheckpointError);
  NamedParams extra{{"w", parameter(Mat::Zero(3, 2))}, {"b", parameter(Mat::Zero(1, 1))}};
  EXPECT_THROW(load(good, extra), CheckpointError);
}

TEST(Checkpoint, RejectsUnknownVersion) {
  NamedParams a{{"w", parameter(Mat::Ones(1, 1))}};
  std::stringstream buf;
  save_checkpoint(buf, a);
  std::string body = buf.str();
  body.resize(body.size() - 4);
  body[4] = 9;  // version field, little-endian u32 after the magic
  boost::crc_32_type crc;
  crc.process_bytes(body.data(), body.size());
  const std::uint32_t sum = crc.checksum();
  for (int i = 0; i < 4; ++i) body.push_back(static_cast<char>((sum >> (8 * i)) & 0xff));
  std::istringstream in(body);
  try {
    load_checkpoint(in, a);
    FAIL() << "accepted version 9";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos) << e.what();
  }
}
