// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "msmu/nn.hpp"
#include "msmu/traffic.hpp"

namespace msmu {

struct ClSample {
  int task = 0;
  int subclass = 0;
  Service superclass = Service::embb;
  std::vector<double> x;  // seq_len * features, step-major
};

struct ClTask {
  std::vector<ClSample> train;
  std::vector<ClSample> test;
};

struct TaskStream {
  int seq_len = 8;
  int features = 4;
  std::vector<ClTask> tasks;

  int num_subclasses() const;
  /// Throws ClassificationError if a subclass is introduced twice or changes superclass.
  void validate() const;
};

struct TaskStreamParams {
  int tasks = 7;
  int seq_len = 8;
  int features = 4;
  int train_per_class = 600;
  int test_per_class = 150;
  double margin = 6.0;  // expected distance between subclass means, in noise units
  double noise = 1.0;   // per-coordinate standard deviation
  std::uint64_t seed = 1;
};

/// Task k introduces subclass 2k (eMBB) and 2k + 1 (uRLLC), each an isotropic Gaussian around
/// its own mean plus a component shared by its superclass.
TaskStream make_task_stream(const TaskStreamParams& p);

/// Rows grouped by (task, subclass), training rows before test rows.
void write_task_stream_csv(std::ostream& out, const TaskStream& stream);
/// The last fifth of each (task, subclass) group becomes the test split.
TaskStream read_task_stream_csv(std::istream& in, int seq_len);

/// Exemplars kept per task.
class ReplayMemory {
 public:
  explicit ReplayMemory(std::size_t capacity_per_task);

  /// Merges `fresh` into task `task`'s exemplars and uniformly down-samples to capacity.
  void update(int task, std::span<const ClSample> fresh, std::mt19937_64& rng);

  std::size_t capacity() const { return capacity_; }
  const std::vector<ClSample>& task(int t) const;
  int tasks() const { return static_cast<int>(per_task_.size()); }
  std::size_t size() const;
  std::vector<const ClSample*> all() const;

 private:
  std::size_t capacity_;
  std::vector<std::vector<ClSample>> per_task_;
};

struct ContinualConfig {
  int seq_len = 8;
  int features = 4;
  int hidden = 32;
};

/// LSTM over the feature sequence, last hidden state into a subclass head that grows.
class ContinualModel {
 public:
  ContinualModel(const ContinualConfig& cfg, std::uint64_t seed);

  const ContinualConfig& config() const { return cfg_; }
  const nn::NamedParams& params() const { return params_; }
  int classes() const { return static_cast<int>(head_.w->cols()); }

  /// Adds output units up to `classes`; existing weights are kept.
  void grow(int classes);

  /// Records the superclass of `subclass`; throws ClassificationError if it contradicts an
  /// earlier binding.
  void bind_superclass(int subclass, Service superclass);
  /// Superclass bound to `subclass`, or nullopt.
  std::optional<Service> superclass_of(int subclass) const;

  nn::Var logits(std::span<const ClSample* const> batch) const;

 private:
  ContinualConfig cfg_;
  std::mt19937_64 rng_;
  nn::LstmLayer lstm_;
  nn::Linear head_;
  nn::NamedParams params_;
  std::vector<std::optional<Service>> superclass_;
};

struct ClTrainParams {
  int epochs = 20;
  int batch_size = 64;
  double lr = 1e-3;
  std::uint64_t seed = 1;
};

/// Cross-entropy over the replayed exemplars and the new task's data.
void train_task(ContinualModel& model, const ReplayMemory* memory, std::span<const ClSample> data,
                const ClTrainParams& params);

double accuracy(const ContinualModel& model, std::span<const ClSample> data);
/// Per-sample cross-entropy.
std::vector<double> sample_losses(const ContinualModel& model, std::span<const ClSample> data);
/// Fraction of samples whose predicted subclass belongs to the true superclass.
double superclass_accuracy(const ContinualModel& model, std::span<const ClSample> data);

/// acc[t][i]: accuracy on task i after training task t. Unfilled entries are NaN.
class AccuracyMatrix {
 public:
  explicit AccuracyMatrix(int tasks);
  int tasks() const { return n_; }
  double at(int trained, int task) const;
  void set(int trained, int task, double acc);
  bool filled(int trained, int task) const;

 private:
  int n_;
  std::vector<double> v_;
};

struct ClMetrics {
  std::vector<double> tsa;
  std::vector<double> tsf;
  double aa = 0.0;
  double af = 0.0;
  double bwt = 0.0;
  double fwt = 0.0;
  double cf = 0.0;
};

/// Metrics after training task `last` (default: the final task). `baseline[i]` is the accuracy
/// of an untrained model on task i.
ClMetrics cl_metrics(const AccuracyMatrix& r, std::span<const double> baseline, int last = -1);

struct LossForgetting {
  double af = 0.0;  // mean(loss_0 - loss_t)
  double ap = 0.0;  // mean(loss_t)
};

LossForgetting compute_af_ap(std::span<const double> loss_theta0, std::span<const double> loss_theta_t);

/// AF + (1 - AP) with AP as an accuracy.
double cl_objective(double af, double ap_acc);

struct ClStage {
  int task = 0;
  double loss_af = 0.0;
  double loss_ap = 0.0;
  double acc_af = 0.0;  // accuracy drop on task 0 since it was learned
  double acc_ap = 0.0;  // accuracy on the task just learned
  double objective = 0.0;
  double superclass_acc = 0.0;  // on every test set seen so far
};

struct ClRunResult {
  AccuracyMatrix acc{1};
  std::vector<double> baseline;
  std::vector<ClStage> stages;
  ClMetrics final_metrics;
};

struct ClRunParams {
  bool replay = true;
  std::size_t memory_per_task = 1000;
  ContinualConfig model;
  ClTrainParams train;
};

ClRunResult run_continual(const TaskStream& stream, const ClRunParams& params,
                          const std::function<void(const ClStage&)>& on_stage = {});

/// task,TSA,TSF,AA,AF,BWT,FWT,CF with row k computed through task k.
void write_cl_metrics_csv(std::ostream& out, const ClRunResult& r);
void write_accuracy_matrix_csv(std::ostream& out, const AccuracyMatrix& m);
void write_cl_stages_csv(std::ostream& out, const std::vector<ClStage>& stages);

}  // namespace msmu
