// SPDX-License-Identifier: Apache-2.0
#include "msmu/allocator.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace msmu {

using nn::Mat;
using nn::Var;

namespace {

double nominal_embb_pps(const Scenario& s) {
  const double rate = s.embb_rate_bps > 0.0 ? s.embb_rate_bps : 1e6;
  return rate / (s.pkt_size_em_bytes * 8.0);
}

Mat a1_frame_block(const A1Message& a1, const Scenario& s) {
  const int ues = a1.route.ues;
  if (static_cast<int>(a1.omega_em.size()) != ues || static_cast<int>(a1.omega_ur.size()) != ues ||
      static_cast<int>(a1.phi.size()) != a1.route.rus) {
    throw std::invalid_argument("A1 message fields disagree on UE or RU count");
  }
  Mat f(ues, kFrameFeatures);
  for (int u = 0; u < ues; ++u) {
    double pos = 0.0;
    double phi = 0.0;
    for (int e = 0; e < a1.route.rus; ++e) {
      pos += e * a1.route.at(e, u);
      phi += a1.route.at(e, u) * a1.phi[static_cast<std::size_t>(e)];
    }
    const auto row = frame_features(a1.omega_em[static_cast<std::size_t>(u)],
                                    a1.omega_ur[static_cast<std::size_t>(u)], pos, phi, s);
    for (int k = 0; k < kFrameFeatures; ++k) f(u, k) = row[static_cast<std::size_t>(k)];
  }
  return f;
}

Mat step_input(const Mat& frame, const Mat* slot) {
  Mat x = Mat::Zero(frame.rows(), kFrameFeatures + kSlotFeatures);
  x.leftCols(kFrameFeatures) = frame;
  if (slot != nullptr) x.rightCols(kSlotFeatures) = *slot;
  return x;
}

int service_label(Service s) { return s == Service::urllc ? 1 : 0; }

}  // namespace

std::array<double, kFrameFeatures> frame_features(double omega_em_pps, double omega_ur_pps,
                                                  double route_pos, double phi,
                                                  const Scenario& s) {
  return {omega_em_pps / nominal_embb_pps(s), omega_ur_pps * s.frame_len_s,
          route_pos / s.num_rus, phi};
}

std::array<double, kSlotFeatures> slot_features(const SlotFeedback& f, const Scenario& s) {
  return {f.service == Service::urllc ? 1.0 : -1.0, f.prb_frac, f.power_w / s.p_max_w};
}

SspInput build_ssp_input(const A1Message& a1, const std::vector<std::vector<SlotFeedback>>& history,
                         int t_s, const Scenario& s) {
  const int slots = s.slots_per_frame();
  if (t_s < 1 || t_s > slots) {
    throw std::invalid_argument(fmt::format("build_ssp_input: slot {} outside [1, {}]", t_s, slots));
  }
  if (static_cast<int>(history.size()) < t_s - 1) {
    throw std::invalid_argument("build_ssp_input: history shorter than t_s - 1 slots");
  }
  const Mat frame = a1_frame_block(a1, s);
  SspInput in{static_cast<int>(frame.rows()), slots, t_s, {}};
  in.x.assign(static_cast<std::size_t>(in.ues) * static_cast<std::size_t>(in.width()), 0.0);
  for (int u = 0; u < in.ues; ++u) {
    const auto base = static_cast<std::size_t>(u) * static_cast<std::size_t>(in.width());
    for (int k = 0; k < kFrameFeatures; ++k) in.x[base + static_cast<std::size_t>(k)] = frame(u, k);
    for (int j = 1; j < t_s; ++j) {
      const auto& slot = history[static_cast<std::size_t>(j - 1)];
      if (static_cast<int>(slot.size()) != in.ues) {
        throw std::invalid_argument("build_ssp_input: history slot has wrong UE count");
      }
      const auto f = slot_features(slot[static_cast<std::size_t>(u)], s);
      for (int k = 0; k < kSlotFeatures; ++k) {
        in.x[base + kFrameFeatures + static_cast<std::size_t>(j - 1) * kSlotFeatures +
             static_cast<std::size_t>(k)] = f[static_cast<std::size_t>(k)];
      }
    }
  }
  return in;
}

AllocatorConfig AllocatorConfig::from_scenario(const Scenario& s) {
  return {s.lstm_hidden, s.lstm_layers, s.lstm_dropout, s.p_max_w};
}

AllocatorModel::AllocatorModel(const AllocatorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.hidden < 1 || cfg.layers < 1) throw std::invalid_argument("allocator: empty LSTM");
  std::mt19937_64 rng(seed);
  for (int l = 0; l < cfg.layers; ++l) {
    const Eigen::Index in = l == 0 ? kFrameFeatures + kSlotFeatures : cfg.hidden;
    lstm_.emplace_back(in, cfg.hidden, rng);
    const std::string p = fmt::format("lstm{}.", l);
    params_.emplace_back(p + "wx", lstm_.back().wx);
    params_.emplace_back(p + "wh", lstm_.back().wh);
    params_.emplace_back(p + "b", lstm_.back().b);
  }
  head_service_ = nn::Linear(cfg.hidden, 2, rng);
  head_prb_ = nn::Linear(cfg.hidden, 1, rng);
  head_power_ = nn::Linear(cfg.hidden, 1, rng);
  params_.emplace_back("head_service.w", head_service_.w);
  params_.emplace_back("head_service.b", head_service_.b);
  params_.emplace_back("head_prb.w", head_prb_.w);
  params_.emplace_back("head_prb.b", head_prb_.b);
  params_.emplace_back("head_power.w", head_power_.w);
  params_.emplace_back("head_power.b", head_power_.b);
}

AllocatorHeads AllocatorModel::heads(const Var& h, bool training, std::mt19937_64* rng) const {
  Var z = nn::dropout(h, cfg_.dropout, training, rng);
  return {head_service_(z), nn::relu(head_prb_(z)), nn::relu(head_power_(z))};
}

std::vector<AllocatorHeads> AllocatorModel::forward(const std::vector<Mat>& steps, bool training,
                                                    std::mt19937_64* dropout_rng) const {
  std::vector<nn::LstmState> state(lstm_.size());
  std::vector<AllocatorHeads> out;
  out.reserve(steps.size());
  for (const auto& x : steps) {
    if (x.cols() != kFrameFeatures + kSlotFeatures) {
      throw std::invalid_argument(fmt::format("allocator: step width {} but expected {}", x.cols(),
                                              kFrameFeatures + kSlotFeatures));
    }
    Var in = nn::constant(x);
    for (std::size_t l = 0; l < lstm_.size(); ++l) {
      if (l > 0) in = nn::dropout(in, cfg_.dropout, training, dropout_rng);
      state[l] = nn::lstm_cell(in, state[l], lstm_[l]);
      in = state[l].h;
    }
    out.push_back(heads(in, training, dropout_rng));
  }
  return out;
}

AllocatorHeads AllocatorModel::step(Stream& stream, const Mat& x) const {
  if (stream.layers.size() != lstm_.size()) stream.layers.assign(lstm_.size(), {});
  Var in = nn::constant(x);
  for (std::size_t l = 0; l < lstm_.size(); ++l) {
    const auto next = nn::lstm_cell(in, stream.layers[l], lstm_[l]);
    stream.layers[l] = {nn::constant(next.h->value), nn::constant(next.c->value)};
    in = stream.layers[l].h;
  }
  return heads(in, false, nullptr);
}

SspPrediction to_prediction(const AllocatorHeads& h, double p_max_w) {
  const auto n = static_cast<std::size_t>(h.service->rows());
  SspPrediction p;
  p.service.resize(n);
  p.service_logits.resize(2 * n);
  p.prb_frac.resize(n);
  p.power_w.resize(n);
  for (std::size_t u = 0; u < n; ++u) {
    const auto r = static_cast<Eigen::Index>(u);
    const double em = h.service->value(r, 0);
    const double ur = h.service->value(r, 1);
    p.service_logits[2 * u] = em;
    p.service_logits[2 * u + 1] = ur;
    p.service[u] = ur > em ? Service::urllc : Service::embb;
    p.prb_frac[u] = std::clamp(h.prb->value(r, 0), 0.0, 1.0);
    p.power_w[u] = std::clamp(h.power->value(r, 0) * p_max_w, 0.0, p_max_w);
  }
  return p;
}

SspPrediction predict_allocation(const AllocatorModel& model, const SspInput& input) {
  if (input.ues < 1 || static_cast<int>(input.x.size()) != input.ues * input.width()) {
    throw std::invalid_argument("predict_allocation: malformed input");
  }
  Mat frame(input.ues, kFrameFeatures);
  for (int u = 0; u < input.ues; ++u) {
    for (int k = 0; k < kFrameFeatures; ++k) frame(u, k) = input.frame(u, k);
  }
  AllocatorModel::Stream stream;
  AllocatorHeads h = model.step(stream, step_input(frame, nullptr));
  Mat slot(input.ues, kSlotFeatures);
  for (int j = 1; j < input.t_s; ++j) {
    for (int u = 0; u < input.ues; ++u) {
      for (int k = 0; k < kSlotFeatures; ++k) slot(u, k) = input.slot(u, j, k);
    }
    h = model.step(stream, step_input(frame, &slot));
  }
  return to_prediction(h, model.config().p_max_w);
}

AllocatorSession::AllocatorSession(const AllocatorModel& model, const Scenario& s)
    : model_(&model), s_(s) {}

void AllocatorSession::begin_frame(const A1Message& a1) {
  frame_ = a1_frame_block(a1, s_);
  pending_ = step_input(frame_, nullptr);
  stream_ = {};
  slot_ = 1;
  predicted_ = false;
}

const SspPrediction& AllocatorSession::predict() {
  if (frame_.rows() == 0) throw std::logic_error("AllocatorSession: predict before begin_frame");
  if (!predicted_) {
    last_ = to_prediction(model_->step(stream_, pending_), model_->config().p_max_w);
    predicted_ = true;
  }
  return last_;
}

void AllocatorSession::observe(std::span<const SlotFeedback> fb) {
  if (static_cast<Eigen::Index>(fb.size()) != frame_.rows()) {
    throw std::invalid_argument("AllocatorSession: feedback has wrong UE count");
  }
  if (!predicted_) predict();
  Mat slot(frame_.rows(), kSlotFeatures);
  for (std::size_t u = 0; u < fb.size(); ++u) {
    const auto f = slot_features(fb[u], s_);
    for (int k = 0; k < kSlotFeatures; ++k) {
      slot(static_cast<Eigen::Index>(u), k) = f[static_cast<std::size_t>(k)];
    }
  }
  pending_ = step_input(frame_, &slot);
  ++slot_;
  predicted_ = false;
}

int rb_count(double prb_frac, int o) {
  if (o <= 0) return 0;
  const double n = std::floor(std::clamp(prb_frac, 0.0, 1.0) * o + 0.5);
  return std::clamp(static_cast<int>(n), 0, o);
}

std::vector<SlotFeedback> teacher_schedule(double omega_em_pps, double omega_ur_pps, double phi,
                                           const Scenario& s) {
  const int slots = s.slots_per_frame();
  const auto layout = s.layout(phi);
  const bool em = omega_em_pps > 0.0;
  const bool ur = omega_ur_pps > 0.0;
  const int ur_slots = em ? (slots + 1) / 2 : slots;
  const int em_slots = ur ? slots / 2 : slots;
  const auto emn = s.embb();
  const auto urn = s.urllc();
  const double delta = s.slot_s();
  const double em_rb_bits = emn.rb_bandwidth_hz * std::log2(1.0 + kTeacherSnr) * delta;
  const UrllcRateParams up{urn.rb_bandwidth_hz, urn.tti_s, s.error_prob, 1.0, s.dispersion, 0.0};
  const double ur_rb_bits = urllc_rb_rate(kTeacherSnr, 1.0, up) * delta;
  const int total_rbs = layout.o_ur + layout.o_em;

  auto label = [&](Service svc) {
    const bool urllc = svc == Service::urllc;
    const double bits = (urllc ? omega_ur_pps * s.pkt_size_ur_bytes
                               : omega_em_pps * s.pkt_size_em_bytes) *
                        8.0 * s.frame_len_s / (urllc ? ur_slots : em_slots);
    const double per_rb = urllc ? ur_rb_bits : em_rb_bits;
    const int o = urllc ? layout.o_ur : layout.o_em;
    const double need = per_rb > 0.0 ? std::ceil(bits / per_rb) : static_cast<double>(o);
    const double frac = std::min(1.0, need / std::max(o, 1));
    const int n = rb_count(frac, o);
    const double power = total_rbs > 0 ? s.p_max_w * n / total_rbs : 0.0;
    return SlotFeedback{svc, frac, power};
  };

  std::vector<SlotFeedback> out;
  out.reserve(static_cast<std::size_t>(slots));
  for (int j = 1; j <= slots; ++j) {
    if (ur && (!em || j % 2 == 1)) {
      out.push_back(label(Service::urllc));
    } else if (em) {
      out.push_back(label(Service::embb));
    } else {
      out.push_back({Service::embb, 0.0, 0.0});
    }
  }
  return out;
}

std::vector<AllocatorSample> make_allocator_dataset(const Scenario& s,
                                                    const AllocatorDataParams& p) {
  if (p.samples < 1) throw std::invalid_argument("make_allocator_dataset: no samples requested");
  std::mt19937_64 rng(p.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> route(0, s.num_rus - 1);
  const double em_nominal = nominal_embb_pps(s);
  const double phi_max = s.phi_max();
  std::vector<AllocatorSample> out;
  out.reserve(static_cast<std::size_t>(p.samples));
  for (int i = 0; i < p.samples; ++i) {
    const double em = unit(rng) < p.p_zero
                          ? 0.0
                          : em_nominal * (p.embb_min_rel + unit(rng) * (p.embb_max_rel - p.embb_min_rel));
    const double ur = unit(rng) < p.p_zero
                          ? 0.0
                          : p.urllc_min_pps + unit(rng) * (p.urllc_max_pps - p.urllc_min_pps);
    const int e = route(rng);
    const double phi = unit(rng) * phi_max;
    out.push_back({frame_features(em, ur, e, phi, s), teacher_schedule(em, ur, phi, s)});
  }
  return out;
}

AllocatorLoss allocator_loss(const AllocatorModel& model,
                             const std::vector<const AllocatorSample*>& batch, const Scenario& s,
                             bool training, std::mt19937_64* dropout_rng) {
  if (batch.empty()) throw std::invalid_argument("allocator_loss: empty batch");
  const auto n = static_cast<Eigen::Index>(batch.size());
  const std::size_t slots = batch.front()->labels.size();
  Mat frame(n, kFrameFeatures);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto* smp = batch[static_cast<std::size_t>(i)];
    if (smp->labels.size() != slots) throw std::invalid_argument("allocator_loss: ragged batch");
    for (int k = 0; k < kFrameFeatures; ++k) frame(i, k) = smp->frame[static_cast<std::size_t>(k)];
  }
  std::vector<Mat> steps;
  steps.reserve(slots);
  steps.push_back(step_input(frame, nullptr));
  Mat slot(n, kSlotFeatures);
  for (std::size_t j = 1; j < slots; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto f = slot_features(batch[static_cast<std::size_t>(i)]->labels[j - 1], s);
      for (int k = 0; k < kSlotFeatures; ++k) slot(i, k) = f[static_cast<std::size_t>(k)];
    }
    steps.push_back(step_input(frame, &slot));
  }
  const auto out = model.forward(steps, training, dropout_rng);
  AllocatorLoss loss;
  Var total;
  std::vector<int> labels(static_cast<std::size_t>(n));
  Mat prb(n, 1);
  Mat pw(n, 1);
  for (std::size_t j = 0; j < slots; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& l = batch[static_cast<std::size_t>(i)]->labels[j];
      labels[static_cast<std::size_t>(i)] = service_label(l.service);
      prb(i, 0) = l.prb_frac;
      pw(i, 0) = l.power_w / s.p_max_w;
      const auto& logits = out[j].service->value;
      const int pred = logits(i, 1) > logits(i, 0) ? 1 : 0;
      loss.correct += pred == labels[static_cast<std::size_t>(i)] ? 1 : 0;
    }
    Var ce = nn::cross_entropy(out[j].service, labels);
    Var mp = nn::mse(out[j].prb, prb);
    Var mw = nn::mse(out[j].power, pw);
    loss.service += ce->value(0, 0);
    loss.prb += mp->value(0, 0);
    loss.power += mw->value(0, 0);
    Var step = nn::add(nn::add(ce, mp), mw);
    total = total ? nn::add(total, step) : step;
  }
  const double inv = 1.0 / static_cast<double>(slots);
  loss.total = nn::scale(total, inv);
  loss.service *= inv;
  loss.prb *= inv;
  loss.power *= inv;
  loss.rows = static_cast<long>(slots) * n;
  return loss;
}

std::vector<AllocatorEpoch> train_allocator(
    AllocatorModel& model, const std::vector<AllocatorSample>& samples, const Scenario& s,
    const AllocatorTrainParams& params, const std::function<void(const AllocatorEpoch&)>& on_epoch) {
  if (samples.empty()) throw std::invalid_argument("train_allocator: empty dataset");
  if (params.batch_size < 1 || params.epochs < 1) {
    throw std::invalid_argument("train_allocator: epochs and batch size must be positive");
  }
  auto adam = nn::make_adam(model.params(), params.lr);
  std::mt19937_64 order_rng(params.seed);
  std::mt19937_64 dropout_rng(params.seed ^ 0x5851f42d4c957f2dULL);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(params.batch_size);
  std::vector<AllocatorEpoch> log;
  for (int epoch = 1; epoch <= params.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    AllocatorEpoch rec{epoch, 0.0, 0.0, 0.0, 0.0};
    long correct = 0;
    long rows = 0;
    int steps = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      std::vector<const AllocatorSample*> mb;
      for (std::size_t i = start; i < std::min(start + batch, order.size()); ++i) {
        mb.push_back(&samples[order[i]]);
      }
      nn::zero_grad(model.params());
      auto loss = allocator_loss(model, mb, s, true, &dropout_rng);
      if (!std::isfinite(loss.total->value(0, 0))) {
        throw std::runtime_error(fmt::format(
            "allocator training diverged at epoch {}: service={} prb={} power={}", epoch,
            loss.service, loss.prb, loss.power));
      }
      nn::backward(loss.total);
      nn::adam_step(model.params(), adam);
      rec.loss_service += loss.service;
      rec.loss_prb += loss.prb;
      rec.loss_power += loss.power;
      correct += loss.correct;
      rows += loss.rows;
      ++steps;
    }
    rec.loss_service /= steps;
    rec.loss_prb /= steps;
    rec.loss_power /= steps;
    rec.acc_service = static_cast<double>(correct) / static_cast<double>(rows);
    log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return log;
}

void write_allocator_log(std::ostream& out, const std::vector<AllocatorEpoch>& log) {
  out << "epoch,loss_service,loss_prb,loss_power,acc_service\n";
  for (const auto& r : log) {
    out << fmt::format("{},{},{},{},{}\n", r.epoch, r.loss_service, r.loss_prb, r.loss_power,
                       r.acc_service);
  }
}

AllocatorSkill evaluate_allocator(const AllocatorModel& model,
                                  const std::vector<AllocatorSample>& samples, const Scenario& s) {
  if (samples.empty()) throw std::invalid_argument("evaluate_allocator: empty dataset");
  const std::size_t chunk = 256;
  long correct = 0;
  long rows = 0;
  std::vector<double> prb_err, pw_err, prb_y, pw_y;
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    const std::size_t end = std::min(start + chunk, samples.size());
    const auto n = static_cast<Eigen::Index>(end - start);
    Mat frame(n, kFrameFeatures);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int k = 0; k < kFrameFeatures; ++k) {
        frame(i, k) = samples[start + static_cast<std::size_t>(i)].frame[static_cast<std::size_t>(k)];
      }
    }
    AllocatorModel::Stream stream;
    Mat x = step_input(frame, nullptr);
    Mat slot(n, kSlotFeatures);
    const std::size_t slots = samples[start].labels.size();
    for (std::size_t j = 0; j < slots; ++j) {
      const auto p = to_prediction(model.step(stream, x), s.p_max_w);
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto& l = samples[start + static_cast<std::size_t>(i)].labels[j];
        const auto ui = static_cast<std::size_t>(i);
        correct += p.service[ui] == l.service ? 1 : 0;
        ++rows;
        prb_err.push_back(p.prb_frac[ui] - l.prb_frac);
        pw_err.push_back((p.power_w[ui] - l.power_w) / s.p_max_w);
        prb_y.push_back(l.prb_frac);
        pw_y.push_back(l.power_w / s.p_max_w);
        const auto f = slot_features(l, s);
        for (int k = 0; k < kSlotFeatures; ++k) slot(i, k) = f[static_cast<std::size_t>(k)];
      }
      x = step_input(frame, &slot);
    }
  }
  auto mean_sq = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x * x;
    return m / static_cast<double>(v.size());
  };
  auto variance = [](const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    return var / static_cast<double>(v.size());
  };
  return {static_cast<double>(correct) / static_cast<double>(rows), mean_sq(prb_err),
          variance(prb_y), mean_sq(pw_err), variance(pw_y)};
}

Placement discretize_prbs(int ue, double prb_frac, Service service, const BwpLayout& layout,
                          std::vector<int>& occupancy) {
  if (static_cast<int>(occupancy.size()) != layout.o_ur + layout.o_em) {
    throw std::invalid_argument("discretize_prbs: occupancy does not match the layout");
  }
  const bool urllc = service == Service::urllc;
  const int lo = urllc ? 0 : layout.o_ur;
  const int o = urllc ? layout.o_ur : layout.o_em;
  int want = rb_count(prb_frac, o);
  Placement p{ue, service, {}};
  for (int k = lo; k < lo + o && want > 0; ++k) {
    if (occupancy[static_cast<std::size_t>(k)] != -1) continue;
    occupancy[static_cast<std::size_t>(k)] = ue;
    p.subbands.push_back(k);
    --want;
  }
  return p;
}

std::vector<Placement> place_requests(std::vector<RbRequest> requests, const BwpLayout& layout) {
  std::stable_sort(requests.begin(), requests.end(), [](const RbRequest& a, const RbRequest& b) {
    const int pa = a.service == Service::urllc ? 0 : 1;
    const int pb = b.service == Service::urllc ? 0 : 1;
    return pa != pb ? pa < pb : a.ue < b.ue;
  });
  std::vector<int> occupancy(static_cast<std::size_t>(layout.o_ur + layout.o_em), -1);
  std::vector<Placement> out;
  for (const auto& r : requests) {
    auto p = discretize_prbs(r.ue, r.prb_frac, r.service, layout, occupancy);
    if (!p.subbands.empty()) out.push_back(std::move(p));
  }
  return out;
}

AllocationGrid assign_power(const std::vector<std::vector<Placement>>& placements,
                            std::span<const double> power_w, const GainTable& gains,
                            const std::vector<BwpLayout>& layouts, const Scenario& s,
                            PowerReport* report) {
  if (placements.size() != layouts.size()) {
    throw std::invalid_argument("assign_power: placements and layouts disagree on RU count");
  }
  const int ues = static_cast<int>(power_w.size());
  const double pmax = s.p_max_w;
  std::vector<int> rbs(static_cast<std::size_t>(ues), 0);
  for (const auto& ru : placements) {
    for (const auto& p : ru) {
      if (p.ue < 0 || p.ue >= ues) throw std::out_of_range("assign_power: placement UE out of range");
      rbs[static_cast<std::size_t>(p.ue)] += static_cast<int>(p.subbands.size());
    }
  }
  PowerReport rep;
  AllocationGrid grid;
  for (std::size_t e = 0; e < placements.size(); ++e) {
    const auto& lay = layouts[e];
    RuAllocation a(lay.o_ur, lay.o_em, ues);
    const int ru = static_cast<int>(e);
    std::vector<double> floor_of(static_cast<std::size_t>(a.subbands()), 0.0);
    for (const auto& p : placements[e]) {
      const auto ui = static_cast<std::size_t>(p.ue);
      const double share = std::clamp(power_w[ui], 0.0, pmax) / std::max(rbs[ui], 1);
      for (int o : p.subbands) {
        if (o < 0 || o >= a.subbands()) throw std::out_of_range("assign_power: sub-band out of range");
        const auto i = a.idx(o, p.ue);
        if (p.service == Service::urllc) {
          const double fl = urllc_power_floor(gains.at(ru, o, p.ue), s.noise_w, s.snr_floor);
          if (!(fl <= pmax)) {
            ++rep.shed_rbs;
            continue;
          }
          a.psi_ur[i] = 1;
          a.p_ur[i] = std::max(share, fl);
          floor_of[static_cast<std::size_t>(o)] = fl;
        } else {
          a.psi_em[i] = 1;
          a.p_em[i] = std::min(share, pmax);
        }
      }
    }
    auto floors = [&] {
      double f = 0.0;
      for (int o = 0; o < a.o_ur; ++o) {
        if (a.owner(o) >= 0) f += floor_of[static_cast<std::size_t>(o)];
      }
      return f;
    };
    for (int o = a.o_ur - 1; o >= 0 && floors() > pmax; --o) {
      const int u = a.owner(o);
      if (u < 0) continue;
      a.psi_ur[a.idx(o, u)] = 0;
      a.p_ur[a.idx(o, u)] = 0.0;
      ++rep.shed_rbs;
    }
    if (a.total_power() > pmax) {
      ++rep.rescaled_rus;
      const double base = floors();
      const std::vector<double> p_em0 = a.p_em;
      const std::vector<double> p_ur0 = a.p_ur;
      double extra = 0.0;
      for (int o = 0; o < a.subbands(); ++o) {
        for (int u = 0; u < ues; ++u) {
          const auto i = a.idx(o, u);
          extra += p_em0[i];
          if (a.psi_ur[i] != 0) extra += p_ur0[i] - floor_of[static_cast<std::size_t>(o)];
        }
      }
      double k = extra > 0.0 ? std::max(pmax - base, 0.0) / extra : 0.0;
      for (int attempt = 0; attempt < 64; ++attempt) {
        for (int o = 0; o < a.subbands(); ++o) {
          for (int u = 0; u < ues; ++u) {
            const auto i = a.idx(o, u);
            a.p_em[i] = p_em0[i] * k;
            if (a.psi_ur[i] != 0) {
              const double fl = floor_of[static_cast<std::size_t>(o)];
              a.p_ur[i] = fl + (p_ur0[i] - fl) * k;
            }
          }
        }
        if (a.total_power() <= pmax) break;
        k = std::nextafter(k, 0.0) * (1.0 - 1e-15);
      }
    }
    grid.rus.push_back(std::move(a));
  }
  if (report != nullptr) *report = rep;
  return grid;
}

}  // namespace msmu
