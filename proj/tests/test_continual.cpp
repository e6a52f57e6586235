// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "msmu/continual.hpp"

using namespace msmu;

namespace {

std::vector<ClSample> tagged(int task, int n, int offset) {
  std::vector<ClSample> out;
  for (int i = 0; i < n; ++i) out.push_back({task, 0, Service::embb, {static_cast<double>(offset + i)}});
  return out;
}

TaskStreamParams small_stream(std::uint64_t seed) {
  TaskStreamParams p;
  p.tasks = 2;
  p.train_per_class = 120;
  p.test_per_class = 30;
  p.seed = seed;
  return p;
}

}  // namespace

TEST(Replay, KeepsEverythingUnderCapacity) {
  ReplayMemory m(1000);
  std::mt19937_64 rng(1);
  const auto a = tagged(0, 500, 0);
  m.update(0, a, rng);
  EXPECT_EQ(m.task(0).size(), 500u);
  EXPECT_EQ(m.size(), 500u);
}

TEST(Replay, DownsamplesTheUnionUniformly) {
  ReplayMemory m(1000);
  std::mt19937_64 rng(2);
  m.update(0, tagged(0, 1000, 0), rng);
  m.update(0, tagged(0, 1000, 1000), rng);
  ASSERT_EQ(m.task(0).size(), 1000u);
  std::set<double> ids;
  int old = 0;
  for (const auto& s : m.task(0)) {
    ids.insert(s.x[0]);
    old += s.x[0] < 1000 ? 1 : 0;
  }
  EXPECT_EQ(ids.size(), 1000u);
  // Hypergeometric: sd of the old count is about 11.2.
  EXPECT_NEAR(old, 500, 60);
  ReplayMemory again(1000);
  std::mt19937_64 rng2(2);
  again.update(0, tagged(0, 1000, 0), rng2);
  again.update(0, tagged(0, 1000, 1000), rng2);
  for (std::size_t i = 0; i < 1000; ++i) EXPECT_EQ(again.task(0)[i].x, m.task(0)[i].x);
}

TEST(Replay, TasksAreSeparate) {
  ReplayMemory m(10);
  std::mt19937_64 rng(3);
  m.update(0, tagged(0, 30, 0), rng);
  m.update(2, tagged(2, 4, 0), rng);
  EXPECT_EQ(m.tasks(), 3);
  EXPECT_EQ(m.task(1).size(), 0u);
  EXPECT_EQ(m.size(), 14u);
  EXPECT_EQ(m.all().size(), 14u);
  EXPECT_THROW(m.update(-1, tagged(0, 1, 0), rng), std::invalid_argument);
}

TEST(ClMetricsTest, HandCase) {
  AccuracyMatrix r(2);
  r.set(0, 0, 0.9);
  r.set(0, 1, 0.3);
  r.set(1, 0, 0.8);
  r.set(1, 1, 0.95);
  const std::vector<double> baseline{0.5, 0.25};
  const auto m = cl_metrics(r, baseline);
  EXPECT_NEAR(m.tsf[0], 0.1, 1e-15);
  EXPECT_EQ(m.tsf[1], 0.0);
  EXPECT_NEAR(m.aa, 0.875, 1e-15);
  EXPECT_NEAR(m.af, 0.05, 1e-15);
  EXPECT_NEAR(m.bwt, -0.1, 1e-15);
  EXPECT_NEAR(m.fwt, 0.05, 1e-15);
  EXPECT_NEAR(m.cf, 0.1, 1e-15);
  const auto first = cl_metrics(r, baseline, 0);
  EXPECT_DOUBLE_EQ(first.aa, 0.9);
  EXPECT_EQ(first.af, 0.0);
  EXPECT_THROW(cl_metrics(r, baseline, 2), std::out_of_range);
  AccuracyMatrix partial(2);
  partial.set(0, 0, 1.0);
  EXPECT_FALSE(partial.filled(1, 0));
  EXPECT_TRUE(std::isnan(partial.at(1, 0)));
  EXPECT_THROW(cl_metrics(partial, baseline), std::invalid_argument);
}

TEST(ClMetricsTest, LossForgettingAndObjective) {
  const std::vector<double> l0{0.5, 1.0, 2.0};
  std::vector<double> lt = l0;
  for (auto& v : lt) v += 0.3;
  const auto f = compute_af_ap(l0, lt);
  EXPECT_NEAR(f.af, -0.3, 1e-15);
  EXPECT_NEAR(f.ap, 3.5 / 3 + 0.3, 1e-15);
  EXPECT_NEAR(cl_objective(0.1, 0.9), 0.2, 1e-15);
  const std::vector<double> empty;
  EXPECT_THROW(compute_af_ap(empty, empty), std::invalid_argument);
}

TEST(ContinualModelTest, GrowKeepsExistingWeights) {
  ContinualModel m({8, 4, 6}, 4);
  m.grow(2);
  std::vector<nn::Mat> before;
  for (const auto& [_, p] : m.params()) before.push_back(p->value);
  m.grow(4);
  EXPECT_EQ(m.classes(), 4);
  const auto& params = m.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& v = params[i].second->value;
    const auto& b = before[i];
    EXPECT_EQ(v.leftCols(b.cols()).topRows(b.rows()), b) << params[i].first;
  }
}

TEST(ContinualModelTest, SuperclassBindingIsFixed) {
  ContinualModel m({8, 4, 6}, 5);
  m.grow(2);
  m.bind_superclass(1, Service::urllc);
  m.bind_superclass(1, Service::urllc);
  EXPECT_EQ(m.superclass_of(1), Service::urllc);
  EXPECT_FALSE(m.superclass_of(0).has_value());
  EXPECT_THROW(m.bind_superclass(1, Service::embb), ClassificationError);
}

TEST(TaskStreamTest, LayoutAndValidation) {
  const auto s = make_task_stream(small_stream(6));
  ASSERT_EQ(s.tasks.size(), 2u);
  EXPECT_EQ(s.num_subclasses(), 4);
  EXPECT_EQ(s.tasks[1].train.size(), 240u);
  EXPECT_EQ(s.tasks[1].test.size(), 60u);
  for (const auto& x : s.tasks[1].train) {
    EXPECT_TRUE(x.subclass == 2 || x.subclass == 3);
    EXPECT_EQ(x.superclass, x.subclass % 2 == 0 ? Service::embb : Service::urllc);
    EXPECT_EQ(x.x.size(), static_cast<std::size_t>(s.seq_len * s.features));
  }
  auto bad = s;
  bad.tasks[1].train[0].subclass = 0;
  EXPECT_THROW(bad.validate(), ClassificationError);
}

TEST(TaskStreamTest, CsvRoundTrip) {
  auto p = small_stream(7);
  p.train_per_class = 40;
  p.test_per_class = 10;
  const auto s = make_task_stream(p);
  std::stringstream buf;
  write_task_stream_csv(buf, s);
  const auto back = read_task_stream_csv(buf, s.seq_len);
  ASSERT_EQ(back.tasks.size(), s.tasks.size());
  for (std::size_t t = 0; t < s.tasks.size(); ++t) {
    ASSERT_EQ(back.tasks[t].train.size(), s.tasks[t].train.size());
    ASSERT_EQ(back.tasks[t].test.size(), s.tasks[t].test.size());
    for (std::size_t i = 0; i < s.tasks[t].train.size(); ++i) {
      EXPECT_EQ(back.tasks[t].train[i].subclass, s.tasks[t].train[i].subclass);
      EXPECT_EQ(back.tasks[t].train[i].x, s.tasks[t].train[i].x);
    }
  }
  std::istringstream junk("task,subclass\n1,2,3\n");
  EXPECT_ANY_THROW(read_task_stream_csv(junk, 8));
}

TEST(RunContinual, ReplayForgetsLess) {
  const auto stream = make_task_stream(small_stream(8));
  ClRunParams with;
  with.model.hidden = 16;
  with.train.epochs = 8;
  with.train.batch_size = 32;
  with.memory_per_task = 200;
  auto without = with;
  without.replay = false;
  std::vector<ClStage> stages;
  const auto a = run_continual(stream, with, [&](const ClStage& st) { stages.push_back(st); });
  const auto b = run_continual(stream, without);
  ASSERT_EQ(stages.size(), 2u);
  EXPECT_TRUE(a.acc.filled(1, 0));
  EXPECT_GE(a.final_metrics.aa, 0.0);
  EXPECT_LE(a.final_metrics.aa, 1.0);
  EXPECT_LT(a.final_metrics.af, b.final_metrics.af);
  const auto again = run_continual(stream, with);
  EXPECT_EQ(again.final_metrics.aa, a.final_metrics.aa);

  std::ostringstream csv;
  write_cl_metrics_csv(csv, a);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "task,TSA,TSF,AA,AF,BWT,FWT,CF");
}
