// SPDX-License-Identifier: Apache-2.0
#include "msmu/continual.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace msmu {

using nn::Mat;
using nn::Var;

int TaskStream::num_subclasses() const {
  int n = 0;
  for (const auto& t : tasks) {
    for (const auto& s : t.train) n = std::max(n, s.subclass + 1);
  }
  return n;
}

void TaskStream::validate() const {
  // subclass -> (introducing task, superclass)
  std::map<int, std::pair<int, Service>> intro;
  for (int k = 0; k < static_cast<int>(tasks.size()); ++k) {
    const auto& task = tasks[static_cast<std::size_t>(k)];
    for (const auto* set : {&task.train, &task.test}) {
      for (const auto& s : *set) {
        if (static_cast<int>(s.x.size()) != seq_len * features) {
          throw std::invalid_argument(fmt::format("task {}: sample has {} values, expected {}", k,
                                                  s.x.size(), seq_len * features));
        }
        if (s.subclass < 0) throw ClassificationError("negative subclass label");
        const auto [it, fresh] = intro.try_emplace(s.subclass, k, s.superclass);
        if (fresh) continue;
        if (it->second.second != s.superclass) {
          throw ClassificationError(
              fmt::format("subclass {} appears under both superclasses", s.subclass));
        }
        if (it->second.first != k) {
          throw ClassificationError(fmt::format("subclass {} introduced in task {} reappears in task {}",
                                                s.subclass, it->second.first, k));
        }
      }
    }
  }
}

TaskStream make_task_stream(const TaskStreamParams& p) {
  if (p.tasks < 1 || p.seq_len < 1 || p.features < 1 || p.train_per_class < 1 ||
      p.test_per_class < 1) {
    throw std::invalid_argument("make_task_stream: sizes must be positive");
  }
  std::mt19937_64 rng(p.seed);
  const int k = p.seq_len * p.features;
  std::normal_distribution<double> unit(0.0, 1.0);
  const double sd = p.margin / std::sqrt(2.0 * k);
  auto direction = [&] {
    std::vector<double> v(static_cast<std::size_t>(k));
    for (auto& x : v) x = sd * unit(rng);
    return v;
  };
  const std::vector<double> shared[2] = {direction(), direction()};
  TaskStream ts;
  ts.seq_len = p.seq_len;
  ts.features = p.features;
  for (int t = 0; t < p.tasks; ++t) {
    ClTask task;
    for (int sup = 0; sup < 2; ++sup) {
      const int sub = 2 * t + sup;
      auto mean = direction();
      for (int i = 0; i < k; ++i) {
        mean[static_cast<std::size_t>(i)] += 0.5 * shared[sup][static_cast<std::size_t>(i)];
      }
      auto draw = [&](int n, std::vector<ClSample>& out) {
        for (int j = 0; j < n; ++j) {
          ClSample s{t, sub, sup == 0 ? Service::embb : Service::urllc, mean};
          for (auto& x : s.x) x += p.noise * unit(rng);
          out.push_back(std::move(s));
        }
      };
      draw(p.train_per_class, task.train);
      draw(p.test_per_class, task.test);
    }
    ts.tasks.push_back(std::move(task));
  }
  return ts;
}

void write_task_stream_csv(std::ostream& out, const TaskStream& stream) {
  out << "task,subclass,superclass";
  for (int i = 1; i <= stream.seq_len * stream.features; ++i) out << ",f" << i;
  out << '\n';
  auto row = [&](const ClSample& s) {
    out << fmt::format("{},{},{}", s.task, s.subclass, to_string(s.superclass));
    for (double v : s.x) out << fmt::format(",{}", v);
    out << '\n';
  };
  for (const auto& t : stream.tasks) {
    std::vector<int> subs;
    for (const auto* set : {&t.train, &t.test}) {
      for (const auto& s : *set) {
        if (std::find(subs.begin(), subs.end(), s.subclass) == subs.end()) subs.push_back(s.subclass);
      }
    }
    for (int sub : subs) {
      for (const auto& s : t.train) {
        if (s.subclass == sub) row(s);
      }
      for (const auto& s : t.test) {
        if (s.subclass == sub) row(s);
      }
    }
  }
}

TaskStream read_task_stream_csv(std::istream& in, int seq_len) {
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("task stream CSV: empty input");
  constexpr int fixed = 3;
  const int k = static_cast<int>(std::count(line.begin(), line.end(), ',')) + 1 - fixed;
  if (line.rfind("task,subclass,superclass", 0) != 0) {
    throw std::invalid_argument("task stream CSV: header must start with task,subclass,superclass");
  }
  if (seq_len < 1 || k < 1 || k % seq_len != 0) {
    throw std::invalid_argument(
        fmt::format("task stream CSV: {} feature columns do not split into {} steps", k, seq_len));
  }
  // (task, subclass) -> rows in file order
  std::map<std::pair<int, int>, std::vector<ClSample>> groups;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (static_cast<int>(cells.size()) != fixed + k) {
      throw std::invalid_argument(fmt::format("task stream CSV row {}: {} columns, expected {}",
                                              row, cells.size(), fixed + k));
    }
    ClSample s;
    try {
      s.task = std::stoi(cells[0]);
      s.subclass = std::stoi(cells[1]);
      for (int i = 0; i < k; ++i) {
        s.x.push_back(std::stod(cells[static_cast<std::size_t>(fixed + i)]));
      }
    } catch (const std::logic_error& e) {
      throw std::invalid_argument(fmt::format("task stream CSV row {}: {}", row, e.what()));
    }
    if (cells[2] == "EMBB") {
      s.superclass = Service::embb;
    } else if (cells[2] == "URLLC") {
      s.superclass = Service::urllc;
    } else {
      throw ClassificationError(
          fmt::format("task stream CSV row {}: unknown superclass '{}'", row, cells[2]));
    }
    if (s.task < 0) throw std::invalid_argument(fmt::format("task stream CSV row {}: negative task", row));
    groups[{s.task, s.subclass}].push_back(std::move(s));
  }
  TaskStream ts;
  ts.seq_len = seq_len;
  ts.features = k / seq_len;
  for (auto& [key, rows] : groups) {
    if (static_cast<int>(ts.tasks.size()) <= key.first) {
      ts.tasks.resize(static_cast<std::size_t>(key.first) + 1);
    }
    auto& task = ts.tasks[static_cast<std::size_t>(key.first)];
    const std::size_t cut = rows.size() - rows.size() / 5;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      (i < cut ? task.train : task.test).push_back(std::move(rows[i]));
    }
  }
  ts.validate();
  return ts;
}

ReplayMemory::ReplayMemory(std::size_t capacity_per_task) : capacity_(capacity_per_task) {
  if (capacity_per_task == 0) throw std::invalid_argument("ReplayMemory: capacity must be > 0");
}

void ReplayMemory::update(int task, std::span<const ClSample> fresh, std::mt19937_64& rng) {
  if (task < 0) throw std::invalid_argument("ReplayMemory: negative task");
  if (static_cast<int>(per_task_.size()) <= task) per_task_.resize(static_cast<std::size_t>(task) + 1);
  auto& m = per_task_[static_cast<std::size_t>(task)];
  m.insert(m.end(), fresh.begin(), fresh.end());
  if (m.size() <= capacity_) return;
  std::vector<std::size_t> idx(m.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(capacity_);
  std::sort(idx.begin(), idx.end());
  std::vector<ClSample> kept;
  kept.reserve(capacity_);
  for (auto i : idx) kept.push_back(std::move(m[i]));
  m = std::move(kept);
}

const std::vector<ClSample>& ReplayMemory::task(int t) const {
  return per_task_.at(static_cast<std::size_t>(t));
}

std::size_t ReplayMemory::size() const {
  std::size_t n = 0;
  for (const auto& t : per_task_) n += t.size();
  return n;
}

std::vector<const ClSample*> ReplayMemory::all() const {
  std::vector<const ClSample*> out;
  for (const auto& t : per_task_) {
    for (const auto& s : t) out.push_back(&s);
  }
  return out;
}

ContinualModel::ContinualModel(const ContinualConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), rng_(seed) {
  if (cfg.seq_len < 1 || cfg.features < 1 || cfg.hidden < 1) {
    throw std::invalid_argument("ContinualModel: sizes must be positive");
  }
  lstm_ = nn::LstmLayer(cfg.features, cfg.hidden, rng_);
  head_.w = nn::parameter(Mat::Zero(cfg.hidden, 0));
  head_.b = nn::parameter(Mat::Zero(1, 0));
  params_ = {{"lstm.wx", lstm_.wx}, {"lstm.wh", lstm_.wh}, {"lstm.b", lstm_.b},
             {"head.w", head_.w},   {"head.b", head_.b}};
}

void ContinualModel::grow(int classes) {
  const auto old = head_.w->cols();
  if (classes <= old) return;
  const Mat fresh = nn::xavier_uniform(cfg_.hidden, classes, rng_);
  Mat w(cfg_.hidden, classes);
  w.leftCols(old) = head_.w->value;
  w.rightCols(classes - old) = fresh.rightCols(classes - old);
  Mat b = Mat::Zero(1, classes);
  b.leftCols(old) = head_.b->value;
  head_.w->value = std::move(w);
  head_.b->value = std::move(b);
  head_.w->grad.resize(0, 0);
  head_.b->grad.resize(0, 0);
}

void ContinualModel::bind_superclass(int subclass, Service superclass) {
  if (subclass < 0) throw ClassificationError("negative subclass label");
  if (static_cast<int>(superclass_.size()) <= subclass) {
    superclass_.resize(static_cast<std::size_t>(subclass) + 1);
  }
  auto& slot = superclass_[static_cast<std::size_t>(subclass)];
  if (slot && *slot != superclass) {
    throw ClassificationError(fmt::format("subclass {} was {} and is now labelled {}", subclass,
                                          to_string(*slot), to_string(superclass)));
  }
  slot = superclass;
}

std::optional<Service> ContinualModel::superclass_of(int subclass) const {
  if (subclass < 0 || subclass >= static_cast<int>(superclass_.size())) return std::nullopt;
  return superclass_[static_cast<std::size_t>(subclass)];
}

Var ContinualModel::logits(std::span<const ClSample* const> batch) const {
  if (classes() == 0) throw std::logic_error("ContinualModel: no classes yet");
  const auto n = static_cast<Eigen::Index>(batch.size());
  nn::LstmState st;
  for (int t = 0; t < cfg_.seq_len; ++t) {
    Mat x(n, cfg_.features);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& v = batch[static_cast<std::size_t>(i)]->x;
      if (static_cast<int>(v.size()) != cfg_.seq_len * cfg_.features) {
        throw std::invalid_argument("ContinualModel: sample length does not match the model");
      }
      for (int f = 0; f < cfg_.features; ++f) {
        x(i, f) = v[static_cast<std::size_t>(t * cfg_.features + f)];
      }
    }
    st = nn::lstm_cell(nn::constant(std::move(x)), st, lstm_);
  }
  return head_(st.h);
}

namespace {

std::vector<const ClSample*> pointers(std::span<const ClSample> data) {
  std::vector<const ClSample*> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(&s);
  return out;
}

template <typename Fn>
void in_chunks(const ContinualModel& model, std::span<const ClSample> data, Fn&& fn) {
  const auto ptrs = pointers(data);
  const std::size_t chunk = 512;
  for (std::size_t start = 0; start < ptrs.size(); start += chunk) {
    const std::size_t end = std::min(start + chunk, ptrs.size());
    std::span<const ClSample* const> part(ptrs.data() + start, end - start);
    fn(part, model.logits(part)->value);
  }
}

int argmax_row(const Mat& m, Eigen::Index r) {
  Eigen::Index best = 0;
  m.row(r).maxCoeff(&best);
  return static_cast<int>(best);
}

}  // namespace

void train_task(ContinualModel& model, const ReplayMemory* memory, std::span<const ClSample> data,
                const ClTrainParams& params) {
  if (data.empty()) throw std::invalid_argument("train_task: empty task");
  int classes = model.classes();
  for (const auto& s : data) {
    model.bind_superclass(s.subclass, s.superclass);
    classes = std::max(classes, s.subclass + 1);
  }
  model.grow(classes);
  auto pool = memory != nullptr ? memory->all() : std::vector<const ClSample*>{};
  for (const auto& s : data) pool.push_back(&s);
  for (const auto* s : pool) {
    if (s->subclass >= model.classes()) {
      throw ClassificationError(fmt::format("subclass {} outside the model's {} classes",
                                            s->subclass, model.classes()));
    }
  }
  auto adam = nn::make_adam(model.params(), params.lr);
  std::mt19937_64 rng(params.seed);
  const auto batch = static_cast<std::size_t>(params.batch_size);
  for (int epoch = 0; epoch < params.epochs; ++epoch) {
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t start = 0; start < pool.size(); start += batch) {
      const std::size_t end = std::min(start + batch, pool.size());
      std::span<const ClSample* const> mb(pool.data() + start, end - start);
      std::vector<int> labels;
      labels.reserve(mb.size());
      for (const auto* s : mb) labels.push_back(s->subclass);
      nn::zero_grad(model.params());
      Var loss = nn::cross_entropy(model.logits(mb), labels);
      if (!std::isfinite(loss->value(0, 0))) {
        throw std::runtime_error(fmt::format("continual training diverged in epoch {}", epoch));
      }
      nn::backward(loss);
      nn::adam_step(model.params(), adam);
    }
  }
}

double accuracy(const ContinualModel& model, std::span<const ClSample> data) {
  if (data.empty()) return 0.0;
  long correct = 0;
  in_chunks(model, data, [&](std::span<const ClSample* const> part, const Mat& logits) {
    for (std::size_t i = 0; i < part.size(); ++i) {
      correct += argmax_row(logits, static_cast<Eigen::Index>(i)) == part[i]->subclass ? 1 : 0;
    }
  });
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::vector<double> sample_losses(const ContinualModel& model, std::span<const ClSample> data) {
  std::vector<double> out;
  out.reserve(data.size());
  in_chunks(model, data, [&](std::span<const ClSample* const> part, const Mat& logits) {
    for (std::size_t i = 0; i < part.size(); ++i) {
      const auto row = logits.row(static_cast<Eigen::Index>(i));
      const int y = part[i]->subclass;
      if (y >= row.cols()) {
        out.push_back(std::numeric_limits<double>::infinity());
        continue;
      }
      const double mx = row.maxCoeff();
      out.push_back(mx + std::log((row.array() - mx).exp().sum()) - row(y));
    }
  });
  return out;
}

double superclass_accuracy(const ContinualModel& model, std::span<const ClSample> data) {
  if (data.empty()) return 0.0;
  long correct = 0;
  in_chunks(model, data, [&](std::span<const ClSample* const> part, const Mat& logits) {
    for (std::size_t i = 0; i < part.size(); ++i) {
      const auto ps = model.superclass_of(argmax_row(logits, static_cast<Eigen::Index>(i)));
      correct += ps && *ps == part[i]->superclass ? 1 : 0;
    }
  });
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

AccuracyMatrix::AccuracyMatrix(int tasks) : n_(tasks) {
  if (tasks < 1) throw std::invalid_argument("AccuracyMatrix: needs at least one task");
  v_.assign(static_cast<std::size_t>(tasks) * static_cast<std::size_t>(tasks),
            std::numeric_limits<double>::quiet_NaN());
}

double AccuracyMatrix::at(int trained, int task) const {
  if (trained < 0 || trained >= n_ || task < 0 || task >= n_) {
    throw std::out_of_range("AccuracyMatrix: index out of range");
  }
  return v_[static_cast<std::size_t>(trained) * static_cast<std::size_t>(n_) +
            static_cast<std::size_t>(task)];
}

void AccuracyMatrix::set(int trained, int task, double acc) {
  if (trained < 0 || trained >= n_ || task < 0 || task >= n_) {
    throw std::out_of_range("AccuracyMatrix: index out of range");
  }
  if (!(acc >= 0.0 && acc <= 1.0)) throw std::invalid_argument("AccuracyMatrix: value outside [0,1]");
  v_[static_cast<std::size_t>(trained) * static_cast<std::size_t>(n_) +
     static_cast<std::size_t>(task)] = acc;
}

bool AccuracyMatrix::filled(int trained, int task) const { return !std::isnan(at(trained, task)); }

ClMetrics cl_metrics(const AccuracyMatrix& r, std::span<const double> baseline, int last) {
  const int t_end = last < 0 ? r.tasks() - 1 : last;
  if (t_end >= r.tasks()) throw std::out_of_range("cl_metrics: task beyond the matrix");
  for (int i = 0; i <= t_end; ++i) {
    if (!r.filled(t_end, i) || !r.filled(i, i)) {
      throw std::invalid_argument(fmt::format("cl_metrics: matrix not filled through task {}", t_end));
    }
  }
  ClMetrics m;
  for (int i = 0; i <= t_end; ++i) {
    const double final_acc = r.at(t_end, i);
    double best = final_acc;
    for (int t = i; t < t_end; ++t) best = std::max(best, r.at(t, i));
    m.tsa.push_back(final_acc);
    m.tsf.push_back(best - final_acc);
    m.aa += final_acc / (t_end + 1);
    m.af += m.tsf.back() / (t_end + 1);
    m.cf = std::max(m.cf, m.tsf.back());
  }
  if (t_end > 0) {
    for (int i = 0; i < t_end; ++i) {
      m.bwt += (r.at(t_end, i) - r.at(i, i)) / t_end;
    }
    if (static_cast<int>(baseline.size()) <= t_end) {
      throw std::invalid_argument("cl_metrics: missing forward-transfer baselines");
    }
    for (int i = 1; i <= t_end; ++i) {
      if (!r.filled(i - 1, i)) throw std::invalid_argument("cl_metrics: missing pre-training accuracy");
      m.fwt += (r.at(i - 1, i) - baseline[static_cast<std::size_t>(i)]) / t_end;
    }
  }
  return m;
}

LossForgetting compute_af_ap(std::span<const double> loss_theta0,
                             std::span<const double> loss_theta_t) {
  if (loss_theta0.size() != loss_theta_t.size() || loss_theta0.empty()) {
    throw std::invalid_argument("compute_af_ap: loss vectors must be non-empty and equal length");
  }
  LossForgetting r;
  const double n = static_cast<double>(loss_theta0.size());
  for (std::size_t i = 0; i < loss_theta0.size(); ++i) {
    r.af += (loss_theta0[i] - loss_theta_t[i]) / n;
    r.ap += loss_theta_t[i] / n;
  }
  return r;
}

double cl_objective(double af, double ap_acc) { return af + (1.0 - ap_acc); }

ClRunResult run_continual(const TaskStream& stream, const ClRunParams& params,
                          const std::function<void(const ClStage&)>& on_stage) {
  stream.validate();
  const int n = static_cast<int>(stream.tasks.size());
  if (n < 1) throw std::invalid_argument("run_continual: empty task stream");
  auto cfg = params.model;
  cfg.seq_len = stream.seq_len;
  cfg.features = stream.features;
  ClRunResult res;
  res.acc = AccuracyMatrix(n);

  auto classes_through = [&](int k) {
    int c = 0;
    for (int t = 0; t <= k; ++t) {
      for (const auto& s : stream.tasks[static_cast<std::size_t>(t)].train) c = std::max(c, s.subclass + 1);
    }
    return c;
  };
  for (int i = 0; i < n; ++i) {
    ContinualModel fresh(cfg, params.train.seed + 1000003ULL * static_cast<std::uint64_t>(i + 1));
    fresh.grow(classes_through(i));
    res.baseline.push_back(accuracy(fresh, stream.tasks[static_cast<std::size_t>(i)].test));
  }

  ContinualModel model(cfg, params.train.seed);
  ReplayMemory memory(params.memory_per_task);
  std::vector<double> loss0;
  std::vector<ClSample> seen_test;
  for (int k = 0; k < n; ++k) {
    const auto& task = stream.tasks[static_cast<std::size_t>(k)];
    model.grow(classes_through(k));
    if (k > 0) res.acc.set(k - 1, k, accuracy(model, task.test));
    auto tp = params.train;
    tp.seed = params.train.seed + static_cast<std::uint64_t>(k);
    train_task(model, params.replay ? &memory : nullptr, task.train, tp);
    if (params.replay) {
      std::mt19937_64 mem_rng((params.train.seed ^ 0x2545f4914f6cdd1dULL) + static_cast<std::uint64_t>(k));
      memory.update(k, task.train, mem_rng);
    }
    for (int i = 0; i <= k; ++i) {
      res.acc.set(k, i, accuracy(model, stream.tasks[static_cast<std::size_t>(i)].test));
    }
    const auto& t0 = stream.tasks.front().test;
    const auto losses = sample_losses(model, t0);
    if (k == 0) loss0 = losses;
    const auto lf = compute_af_ap(loss0, losses);
    seen_test.insert(seen_test.end(), task.test.begin(), task.test.end());
    ClStage st;
    st.task = k;
    st.loss_af = lf.af;
    st.loss_ap = lf.ap;
    st.acc_af = res.acc.at(0, 0) - res.acc.at(k, 0);
    st.acc_ap = res.acc.at(k, k);
    st.objective = cl_objective(st.acc_af, st.acc_ap);
    st.superclass_acc = superclass_accuracy(model, seen_test);
    res.stages.push_back(st);
    if (on_stage) on_stage(st);
  }
  res.final_metrics = cl_metrics(res.acc, res.baseline);
  return res;
}

void write_cl_metrics_csv(std::ostream& out, const ClRunResult& r) {
  out << "task,TSA,TSF,AA,AF,BWT,FWT,CF\n";
  const auto& fin = r.final_metrics;
  for (int k = 0; k < r.acc.tasks(); ++k) {
    const auto m = cl_metrics(r.acc, r.baseline, k);
    out << fmt::format("{},{},{},{},{},{},{},{}\n", k, fin.tsa[static_cast<std::size_t>(k)],
                       fin.tsf[static_cast<std::size_t>(k)], m.aa, m.af, m.bwt, m.fwt, m.cf);
  }
}

void write_accuracy_matrix_csv(std::ostream& out, const AccuracyMatrix& m) {
  out << "trained";
  for (int i = 0; i < m.tasks(); ++i) out << ",task" << i;
  out << '\n';
  for (int t = 0; t < m.tasks(); ++t) {
    out << t;
    for (int i = 0; i < m.tasks(); ++i) {
      if (m.filled(t, i)) {
        out << fmt::format(",{}", m.at(t, i));
      } else {
        out << ',';
      }
    }
    out << '\n';
  }
}

void write_cl_stages_csv(std::ostream& out, const std::vector<ClStage>& stages) {
  out << "task,loss_af,loss_ap,acc_af,acc_ap,objective,superclass_acc\n";
  for (const auto& s : stages) {
    out << fmt::format("{},{},{},{},{},{},{}\n", s.task, s.loss_af, s.loss_ap, s.acc_af, s.acc_ap,
                       s.objective, s.superclass_acc);
  }
}

}  // namespace msmu
