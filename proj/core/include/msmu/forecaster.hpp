// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "msmu/nn.hpp"
#include "msmu/scenario.hpp"
#include "msmu/traffic.hpp"

namespace msmu {

/// U x T x (2 + E) window: eMBB demand, uRLLC demand, one-hot route per frame.
struct LspInput {
  int ues = 0;
  int steps = 0;
  int features = 0;
  std::vector<double> x;  // (u * T + t) * F + f

  double& at(int u, int t, int f) { return x[offset(u, t, f)]; }
  double at(int u, int t, int f) const { return x[offset(u, t, f)]; }
  std::size_t offset(int u, int t, int f) const {
    return (static_cast<std::size_t>(u) * static_cast<std::size_t>(steps) +
            static_cast<std::size_t>(t)) * static_cast<std::size_t>(features) +
           static_cast<std::size_t>(f);
  }
  /// Rows ordered u * T + t.
  nn::Mat as_rows() const;
};

/// `history[i]` holds frame i + 1. Window covers frames t-T .. t-1.
LspInput build_lsp_input(const std::vector<DemandFrame>& history, int steps, int t, int rus);

struct RevinStats {
  std::vector<double> mu;
  std::vector<double> sigma;
  std::vector<double> gamma;
  std::vector<double> beta;
  double eps = 1e-10;
  bool affine = false;
};

struct RevinResult {
  nn::Mat normalized;
  RevinStats stats;
};

/// Per-column statistics over all rows of `x` (population variance).
RevinResult revin_normalize(const nn::Mat& x, double eps, bool affine = false,
                            std::vector<double> gamma = {}, std::vector<double> beta = {});

/// Inverts the normalization of column `feature` for every entry of `y`.
nn::Mat revin_denormalize(const nn::Mat& y, const RevinStats& stats, int feature);

struct ForecasterConfig {
  int ues = 24;
  int rus = 4;
  int steps = 10;
  int d_model = 64;
  int layers = 6;
  int heads = 8;
  int ffn = 512;
  double dropout = 0.3;
  double revin_eps = 1e-10;

  int features() const { return 2 + rus; }
  static ForecasterConfig from_scenario(const Scenario& s);
};

struct ForecasterOutputs {
  nn::Var em;      // rows x 1, standardized window units
  nn::Var ur;      // rows x 1
  nn::Var route;   // rows x E logits
};

class ForecasterModel {
 public:
  ForecasterModel(const ForecasterConfig& cfg, std::uint64_t seed);

  const ForecasterConfig& config() const { return cfg_; }
  const nn::NamedParams& params() const { return params_; }

  /// `x` holds `windows` stacked normalized windows, rows ordered (w * U + u) * T + t. Returns
  /// head outputs for the final step of every (window, UE).
  ForecasterOutputs forward(const nn::Mat& x, int windows, bool training,
                            std::mt19937_64* dropout_rng) const;

 private:
  struct Block {
    nn::MultiHead attn;
    nn::Var ln1_g, ln1_b;
    nn::Linear ff1, ff2;
    nn::Var ln2_g, ln2_b;
  };
  ForecasterConfig cfg_;
  nn::Linear embed_;
  std::vector<Block> blocks_;
  nn::Linear head_em_, head_ur_, head_route_;
  nn::Mat pe_;
  nn::NamedParams params_;
};

struct LspForecast {
  std::vector<double> omega_em;
  std::vector<double> omega_ur;
  std::vector<double> route_logits;  // u * E + e
  std::vector<int> route;
};

LspForecast forecast(const ForecasterModel& model, const LspInput& input);

struct ForecastSample {
  LspInput input;
  std::vector<double> em;
  std::vector<double> ur;
  std::vector<int> route;
};

/// Windows predicting frames [first, last] (1-based) of `frames`.
std::vector<ForecastSample> make_forecast_samples(const std::vector<DemandFrame>& frames,
                                                  int steps, int rus, int first, int last);

struct ForecasterTrainParams {
  int epochs = 100;
  int batch_size = 32;
  int steps_per_epoch = 0;  // 0 runs a full pass over the samples
  double lr = 1e-4;
  std::uint64_t seed = 1;
};

struct ForecasterEpoch {
  int epoch = 0;
  double loss_em = 0.0;
  double loss_ur = 0.0;
  double loss_route = 0.0;
  double acc_route = 0.0;
};

struct ForecasterScales {
  double em = 1.0;
  double ur = 1.0;
};

/// Target standard deviations used to put the demand losses on a common scale.
ForecasterScales target_scales(const std::vector<ForecastSample>& samples);

/// Joint loss mse_em + mse_ur + ce_route on a batch; demand errors are measured after
/// denormalization, divided by `scales`.
struct ForecasterLoss {
  nn::Var total;
  double em = 0.0;
  double ur = 0.0;
  double route = 0.0;
  int correct_routes = 0;
  int rows = 0;
};

ForecasterLoss forecaster_loss(const ForecasterModel& model,
                               const std::vector<const ForecastSample*>& batch,
                               const ForecasterScales& scales, bool training,
                               std::mt19937_64* dropout_rng);

std::vector<ForecasterEpoch> train_forecaster(
    ForecasterModel& model, const std::vector<ForecastSample>& samples,
    const ForecasterTrainParams& params,
    const std::function<void(const ForecasterEpoch&)>& on_epoch = {});

struct ForecastSkill {
  double mse_em = 0.0;  // MSE / Var(target)
  double mse_ur = 0.0;
  double route_acc = 0.0;
  double demand_mse() const { return 0.5 * (mse_em + mse_ur); }
};

/// Held-out skill of the model in original units.
ForecastSkill evaluate_forecaster(const ForecasterModel& model,
                                  const std::vector<ForecastSample>& samples);

/// Skill of repeating the last observed frame.
ForecastSkill persistence_skill(const std::vector<ForecastSample>& samples);

void write_forecaster_log(std::ostream& out, const std::vector<ForecasterEpoch>& log);

}  // namespace msmu
