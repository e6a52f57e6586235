// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "msmu/messages.hpp"
#include "msmu/nn.hpp"
#include "msmu/phy.hpp"
#include "msmu/scenario.hpp"
#include "msmu/traffic.hpp"

namespace msmu {

inline constexpr int kFrameFeatures = 4;  // eMBB demand, uRLLC demand, route, phi
inline constexpr int kSlotFeatures = 3;   // service, PRB fraction, power

/// What one UE received in one mini-slot.
struct SlotFeedback {
  Service service = Service::embb;
  double prb_frac = 0.0;
  double power_w = 0.0;
};

/// Frame block for one UE: eMBB demand relative to the nominal source rate, uRLLC packets per
/// frame, mean route index over E and the phi of the serving RU(s).
std::array<double, kFrameFeatures> frame_features(double omega_em_pps, double omega_ur_pps,
                                                  double route_pos, double phi,
                                                  const Scenario& s);

/// Slot block: service as -1 (eMBB) / +1 (uRLLC), PRB fraction, power over P_max. Zero means
/// "no slot yet".
std::array<double, kSlotFeatures> slot_features(const SlotFeedback& f, const Scenario& s);

/// U x (F + S * f), zero beyond slot t_s - 1.
struct SspInput {
  int ues = 0;
  int slots = 0;
  int t_s = 1;  // slot being predicted, 1-based
  std::vector<double> x;

  int width() const { return kFrameFeatures + slots * kSlotFeatures; }
  double frame(int u, int k) const {
    return x[static_cast<std::size_t>(u) * static_cast<std::size_t>(width()) +
             static_cast<std::size_t>(k)];
  }
  /// Feature k of history slot j (1-based).
  double slot(int u, int j, int k) const {
    return x[static_cast<std::size_t>(u) * static_cast<std::size_t>(width()) + kFrameFeatures +
             static_cast<std::size_t>(j - 1) * kSlotFeatures + static_cast<std::size_t>(k)];
  }
};

/// `history[j][u]` is slot j + 1 of the current frame; only slots before t_s are read.
SspInput build_ssp_input(const A1Message& a1, const std::vector<std::vector<SlotFeedback>>& history,
                         int t_s, const Scenario& s);

struct AllocatorConfig {
  int hidden = 32;
  int layers = 2;
  double dropout = 0.2;
  double p_max_w = 1.0;

  static AllocatorConfig from_scenario(const Scenario& s);
};

struct AllocatorHeads {
  nn::Var service;  // N x 2 logits, class 0 = eMBB
  nn::Var prb;      // N x 1, relu
  nn::Var power;    // N x 1, relu, in units of P_max
};

struct SspPrediction {
  std::vector<Service> service;
  std::vector<double> service_logits;  // u * 2 + class
  std::vector<double> prb_frac;        // [0, 1]
  std::vector<double> power_w;         // [0, P_max]
};

/// One LSTM stack shared by every UE. Step 0 sees [F, 0]; step j sees [F, f_j] and its output
/// predicts slot j + 1.
class AllocatorModel {
 public:
  AllocatorModel(const AllocatorConfig& cfg, std::uint64_t seed);

  const AllocatorConfig& config() const { return cfg_; }
  const nn::NamedParams& params() const { return params_; }

  struct Stream {
    std::vector<nn::LstmState> layers;
  };

  /// Runs all steps; `steps[j]` is N x (F + f). Returns heads for every step.
  std::vector<AllocatorHeads> forward(const std::vector<nn::Mat>& steps, bool training,
                                      std::mt19937_64* dropout_rng) const;

  /// Inference on one step, carrying recurrent state in `stream`.
  AllocatorHeads step(Stream& stream, const nn::Mat& x) const;

 private:
  AllocatorHeads heads(const nn::Var& h, bool training, std::mt19937_64* rng) const;

  AllocatorConfig cfg_;
  std::vector<nn::LstmLayer> lstm_;
  nn::Linear head_service_, head_prb_, head_power_;
  nn::NamedParams params_;
};

SspPrediction to_prediction(const AllocatorHeads& h, double p_max_w);

/// Replays the populated prefix of `input` and predicts slot t_s.
SspPrediction predict_allocation(const AllocatorModel& model, const SspInput& input);

/// Slot-by-slot inference for one frame.
class AllocatorSession {
 public:
  AllocatorSession(const AllocatorModel& model, const Scenario& s);
  void begin_frame(const A1Message& a1);
  /// Prediction for the next slot.
  const SspPrediction& predict();
  /// Feeds back what each UE actually received in the slot just predicted.
  void observe(std::span<const SlotFeedback> fb);
  int next_slot() const { return slot_; }

 private:
  const AllocatorModel* model_;
  Scenario s_;
  nn::Mat frame_;
  nn::Mat pending_;
  AllocatorModel::Stream stream_;
  SspPrediction last_;
  int slot_ = 1;
  bool predicted_ = false;
};

/// Nominal SNR used to size RB requests in the teacher schedule.
inline constexpr double kTeacherSnr = 1e3;

/// Labels for one UE over one frame: uRLLC on odd slots and eMBB on even slots when both are
/// present, otherwise the present service every slot. PRB fraction covers the frame's demand at
/// the nominal SNR; power is P_max times the UE's share of all RBs.
std::vector<SlotFeedback> teacher_schedule(double omega_em_pps, double omega_ur_pps, double phi,
                                           const Scenario& s);

/// round-half-up(frac * o), clamped to [0, o].
int rb_count(double prb_frac, int o);

struct AllocatorSample {
  std::array<double, kFrameFeatures> frame{};
  std::vector<SlotFeedback> labels;  // S slots
};

struct AllocatorDataParams {
  int samples = 4000;
  std::uint64_t seed = 1;
  double embb_min_rel = 0.25;  // eMBB demand range relative to the nominal rate
  double embb_max_rel = 2.0;
  double urllc_min_pps = 5.0;  // nonzero uRLLC demand never falls below this
  double urllc_max_pps = 300.0;
  double p_zero = 0.25;  // chance each service is absent
};

std::vector<AllocatorSample> make_allocator_dataset(const Scenario& s,
                                                    const AllocatorDataParams& p);

struct AllocatorTrainParams {
  int epochs = 20;
  int batch_size = 32;
  double lr = 1e-4;
  std::uint64_t seed = 1;
};

struct AllocatorEpoch {
  int epoch = 0;
  double loss_service = 0.0;
  double loss_prb = 0.0;
  double loss_power = 0.0;
  double acc_service = 0.0;
};

struct AllocatorLoss {
  nn::Var total;
  double service = 0.0;
  double prb = 0.0;
  double power = 0.0;
  long correct = 0;
  long rows = 0;
};

/// ce_service + mse_prb + mse_power over every slot of the batch, teacher-forced.
AllocatorLoss allocator_loss(const AllocatorModel& model,
                             const std::vector<const AllocatorSample*>& batch, const Scenario& s,
                             bool training, std::mt19937_64* dropout_rng);

std::vector<AllocatorEpoch> train_allocator(
    AllocatorModel& model, const std::vector<AllocatorSample>& samples, const Scenario& s,
    const AllocatorTrainParams& params,
    const std::function<void(const AllocatorEpoch&)>& on_epoch = {});

void write_allocator_log(std::ostream& out, const std::vector<AllocatorEpoch>& log);

struct AllocatorSkill {
  double service_acc = 0.0;
  double prb_mse = 0.0;
  double prb_var = 0.0;
  double power_mse = 0.0;  // in units of P_max squared
  double power_var = 0.0;
};

AllocatorSkill evaluate_allocator(const AllocatorModel& model,
                                  const std::vector<AllocatorSample>& samples, const Scenario& s);

/// RBs granted to one UE on one RU.
struct Placement {
  int ue = -1;
  Service service = Service::embb;
  std::vector<int> subbands;
};

/// Places round-half-up(prb_frac * O) RBs on the lowest free sub-bands of the service's BWP.
/// `occupancy` holds the owner of each sub-band (-1 free) and is updated.
Placement discretize_prbs(int ue, double prb_frac, Service service, const BwpLayout& layout,
                          std::vector<int>& occupancy);

struct RbRequest {
  int ue = -1;
  Service service = Service::embb;
  double prb_frac = 0.0;
};

/// uRLLC requests first, then by UE index.
std::vector<Placement> place_requests(std::vector<RbRequest> requests, const BwpLayout& layout);

struct PowerReport {
  int shed_rbs = 0;
  int rescaled_rus = 0;
};

/// Spreads each UE's power evenly over all its RBs, lifts uRLLC RBs to their SNR floor, sheds
/// the highest-index uRLLC RBs an RU cannot afford and scales the remainder into the budget.
AllocationGrid assign_power(const std::vector<std::vector<Placement>>& placements,
                            std::span<const double> power_w, const GainTable& gains,
                            const std::vector<BwpLayout>& layouts, const Scenario& s,
                            PowerReport* report = nullptr);

}  // namespace msmu
