// SPDX-License-Identifier: Apache-2.0
#include "msmu/forecaster.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace msmu {

using nn::Mat;
using nn::Var;

nn::Mat LspInput::as_rows() const {
  Mat m(static_cast<Eigen::Index>(ues) * steps, features);
  std::copy(x.begin(), x.end(), m.data());
  return m;
}

LspInput build_lsp_input(const std::vector<DemandFrame>& history, int steps, int t, int rus) {
  if (t < 1) throw std::invalid_argument("build_lsp_input: t must be >= 1");
  if (steps < 1) throw std::invalid_argument("build_lsp_input: window must be >= 1");
  if (history.empty() && t > 1) throw std::invalid_argument("build_lsp_input: empty history");
  const int ues = history.empty() ? 0 : static_cast<int>(history.front().omega_em.size());
  LspInput in{ues, steps, 2 + rus, {}};
  in.x.assign(static_cast<std::size_t>(ues) * static_cast<std::size_t>(steps) *
                  static_cast<std::size_t>(in.features),
              0.0);
  if (t == 1) {
    for (int u = 0; u < ues; ++u) {
      for (int k = 0; k < steps; ++k) {
        for (int e = 0; e < rus; ++e) in.at(u, k, 2 + e) = 1.0 / rus;
      }
    }
    return in;
  }
  if (static_cast<int>(history.size()) < t - 1) {
    throw std::invalid_argument(
        fmt::format("build_lsp_input: frame {} needs {} past frames, have {}", t, t - 1,
                    history.size()));
  }
  for (int k = 0; k < steps; ++k) {
    const int frame = t - steps + k;
    if (frame < 1) continue;
    const auto& f = history[static_cast<std::size_t>(frame - 1)];
    for (int u = 0; u < ues; ++u) {
      const auto ui = static_cast<std::size_t>(u);
      in.at(u, k, 0) = f.omega_em[ui];
      in.at(u, k, 1) = f.omega_ur[ui];
      in.at(u, k, 2 + f.true_route[ui]) = 1.0;
    }
  }
  return in;
}

RevinResult revin_normalize(const nn::Mat& x, double eps, bool affine, std::vector<double> gamma,
                            std::vector<double> beta) {
  if (!(eps > 0.0)) throw std::invalid_argument("revin: eps must be positive");
  if (x.rows() == 0) throw std::invalid_argument("revin: empty input");
  if (!x.allFinite()) throw std::invalid_argument("revin: non-finite input");
  const auto f = static_cast<std::size_t>(x.cols());
  RevinResult r;
  auto& st = r.stats;
  st.eps = eps;
  st.affine = affine;
  st.gamma = gamma.empty() ? std::vector<double>(f, 1.0) : std::move(gamma);
  st.beta = beta.empty() ? std::vector<double>(f, 0.0) : std::move(beta);
  if (st.gamma.size() != f || st.beta.size() != f) {
    throw std::invalid_argument("revin: affine parameters do not match feature count");
  }
  if (!affine) {
    std::fill(st.gamma.begin(), st.gamma.end(), 1.0);
    std::fill(st.beta.begin(), st.beta.end(), 0.0);
  }
  st.mu.resize(f);
  st.sigma.resize(f);
  r.normalized.resize(x.rows(), x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const auto col = x.col(c);
    const double shift = col(0);
    const double mu = shift + (col.array() - shift).mean();
    const double var = (col.array() - mu).square().mean();
    const auto ci = static_cast<std::size_t>(c);
    st.mu[ci] = mu;
    st.sigma[ci] = std::sqrt(var) + eps;
    r.normalized.col(c) = st.gamma[ci] * (col.array() - mu) / st.sigma[ci] + st.beta[ci];
  }
  return r;
}

nn::Mat revin_denormalize(const nn::Mat& y, const RevinStats& stats, int feature) {
  if (feature < 0 || static_cast<std::size_t>(feature) >= stats.mu.size()) {
    throw std::invalid_argument("revin_denormalize: no statistics for feature");
  }
  const auto f = static_cast<std::size_t>(feature);
  Mat out = y;
  if (stats.affine) out = (out.array() - stats.beta[f]) / (stats.gamma[f] + stats.eps);
  return out.array() * stats.sigma[f] + stats.mu[f];
}

ForecasterConfig ForecasterConfig::from_scenario(const Scenario& s) {
  ForecasterConfig c;
  c.ues = s.num_ues;
  c.rus = s.num_rus;
  c.steps = s.history_frames;
  c.d_model = s.d_model;
  c.layers = s.encoder_layers;
  c.heads = s.heads;
  c.ffn = s.ffn_dim;
  c.dropout = s.dropout;
  c.revin_eps = s.revin_eps;
  return c;
}

ForecasterModel::ForecasterModel(const ForecasterConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.d_model % cfg.heads != 0) {
    throw std::invalid_argument(
        fmt::format("forecaster: d_model {} not divisible by {} heads", cfg.d_model, cfg.heads));
  }
  std::mt19937_64 rng(seed);
  embed_ = nn::Linear(cfg.features(), cfg.d_model, rng);
  params_.emplace_back("embed.w", embed_.w);
  params_.emplace_back("embed.b", embed_.b);
  for (int l = 0; l < cfg.layers; ++l) {
    Block b;
    b.attn = nn::MultiHead(cfg.d_model, cfg.heads, rng);
    b.ln1_g = nn::parameter(Mat::Ones(1, cfg.d_model));
    b.ln1_b = nn::parameter(Mat::Zero(1, cfg.d_model));
    b.ff1 = nn::Linear(cfg.d_model, cfg.ffn, rng);
    b.ff2 = nn::Linear(cfg.ffn, cfg.d_model, rng);
    b.ln2_g = nn::parameter(Mat::Ones(1, cfg.d_model));
    b.ln2_b = nn::parameter(Mat::Zero(1, cfg.d_model));
    const std::string p = fmt::format("enc{}.", l);
    params_.emplace_back(p + "attn.wq.w", b.attn.wq.w);
    params_.emplace_back(p + "attn.wq.b", b.attn.wq.b);
    params_.emplace_back(p + "attn.wk.w", b.attn.wk.w);
    params_.emplace_back(p + "attn.wk.b", b.attn.wk.b);
    params_.emplace_back(p + "attn.wv.w", b.attn.wv.w);
    params_.emplace_back(p + "attn.wv.b", b.attn.wv.b);
    params_.emplace_back(p + "attn.wo.w", b.attn.wo.w);
    params_.emplace_back(p + "attn.wo.b", b.attn.wo.b);
    params_.emplace_back(p + "ln1.g", b.ln1_g);
    params_.emplace_back(p + "ln1.b", b.ln1_b);
    params_.emplace_back(p + "ff1.w", b.ff1.w);
    params_.emplace_back(p + "ff1.b", b.ff1.b);
    params_.emplace_back(p + "ff2.w", b.ff2.w);
    params_.emplace_back(p + "ff2.b", b.ff2.b);
    params_.emplace_back(p + "ln2.g", b.ln2_g);
    params_.emplace_back(p + "ln2.b", b.ln2_b);
    blocks_.push_back(std::move(b));
  }
  head_em_ = nn::Linear(cfg.d_model, 1, rng);
  head_ur_ = nn::Linear(cfg.d_model, 1, rng);
  head_route_ = nn::Linear(cfg.d_model, cfg.rus, rng);
  params_.emplace_back("head_em.w", head_em_.w);
  params_.emplace_back("head_em.b", head_em_.b);
  params_.emplace_back("head_ur.w", head_ur_.w);
  params_.emplace_back("head_ur.b", head_ur_.b);
  params_.emplace_back("head_route.w", head_route_.w);
  params_.emplace_back("head_route.b", head_route_.b);
  pe_ = nn::positional_encoding(cfg.steps, cfg.d_model);
}

ForecasterOutputs ForecasterModel::forward(const nn::Mat& x, int windows, bool training,
                                           std::mt19937_64* dropout_rng) const {
  const Eigen::Index t = cfg_.steps;
  const Eigen::Index seqs = static_cast<Eigen::Index>(windows) * cfg_.ues;
  if (x.rows() != seqs * t || x.cols() != cfg_.features()) {
    throw std::invalid_argument(fmt::format(
        "forecaster: input is {}x{}, expected {}x{} for {} windows of {} UEs", x.rows(), x.cols(),
        seqs * t, cfg_.features(), windows, cfg_.ues));
  }
  Mat pe(x.rows(), cfg_.d_model);
  for (Eigen::Index s = 0; s < seqs; ++s) pe.middleRows(s * t, t) = pe_;
  Var h = nn::add_const(embed_(nn::constant(x)), pe);
  h = nn::dropout(h, cfg_.dropout, training, dropout_rng);
  for (const auto& b : blocks_) {
    h = nn::layer_norm(nn::add(h, b.attn(h, t)), b.ln1_g, b.ln1_b);
    h = nn::layer_norm(nn::add(h, nn::ffn(h, b.ff1, b.ff2, nn::Activation::gelu)), b.ln2_g,
                       b.ln2_b);
  }
  std::vector<Eigen::Index> last(static_cast<std::size_t>(seqs));
  for (Eigen::Index s = 0; s < seqs; ++s) last[static_cast<std::size_t>(s)] = s * t + t - 1;
  Var z = nn::dropout(nn::select_rows(h, std::move(last)), cfg_.dropout, training, dropout_rng);
  return {head_em_(z), head_ur_(z), head_route_(z)};
}

LspForecast forecast(const ForecasterModel& model, const LspInput& input) {
  const auto& cfg = model.config();
  if (input.ues != cfg.ues || input.steps != cfg.steps || input.features != cfg.features()) {
    throw std::invalid_argument(fmt::format(
        "forecast: input {}x{}x{} does not match model {}x{}x{}", input.ues, input.steps,
        input.features, cfg.ues, cfg.steps, cfg.features()));
  }
  const auto norm = revin_normalize(input.as_rows(), cfg.revin_eps);
  const auto out = model.forward(norm.normalized, 1, false, nullptr);
  const Mat em = revin_denormalize(out.em->value, norm.stats, 0);
  const Mat ur = revin_denormalize(out.ur->value, norm.stats, 1);
  LspForecast f;
  const auto u_count = static_cast<std::size_t>(cfg.ues);
  f.omega_em.resize(u_count);
  f.omega_ur.resize(u_count);
  f.route.resize(u_count);
  f.route_logits.resize(u_count * static_cast<std::size_t>(cfg.rus));
  for (int u = 0; u < cfg.ues; ++u) {
    const auto ui = static_cast<std::size_t>(u);
    f.omega_em[ui] = std::max(em(u, 0), 0.0);
    f.omega_ur[ui] = std::max(ur(u, 0), 0.0);
    int best = 0;
    for (int e = 0; e < cfg.rus; ++e) {
      const double v = out.route->value(u, e);
      f.route_logits[ui * static_cast<std::size_t>(cfg.rus) + static_cast<std::size_t>(e)] = v;
      if (v > out.route->value(u, best)) best = e;
    }
    f.route[ui] = best;
  }
  return f;
}

std::vector<ForecastSample> make_forecast_samples(const std::vector<DemandFrame>& frames,
                                                  int steps, int rus, int first, int last) {
  if (first < 1 || last > static_cast<int>(frames.size()) || first > last) {
    throw std::invalid_argument("make_forecast_samples: frame range outside the trace");
  }
  std::vector<ForecastSample> out;
  out.reserve(static_cast<std::size_t>(last - first + 1));
  for (int t = first; t <= last; ++t) {
    const auto& target = frames[static_cast<std::size_t>(t - 1)];
    out.push_back({build_lsp_input(frames, steps, t, rus), target.omega_em, target.omega_ur,
                   target.true_route});
  }
  return out;
}

ForecasterScales target_scales(const std::vector<ForecastSample>& samples) {
  auto stdev = [&](auto pick) {
    double n = 0.0, mean = 0.0, m2 = 0.0;
    for (const auto& s : samples) {
      for (double v : pick(s)) {
        n += 1.0;
        const double d = v - mean;
        mean += d / n;
        m2 += d * (v - mean);
      }
    }
    const double sd = n > 0.0 ? std::sqrt(m2 / n) : 0.0;
    return sd > 0.0 ? sd : 1.0;
  };
  return {stdev([](const ForecastSample& s) -> const std::vector<double>& { return s.em; }),
          stdev([](const ForecastSample& s) -> const std::vector<double>& { return s.ur; })};
}

ForecasterLoss forecaster_loss(const ForecasterModel& model,
                               const std::vector<const ForecastSample*>& batch,
                               const ForecasterScales& scales, bool training,
                               std::mt19937_64* dropout_rng) {
  const auto& cfg = model.config();
  const Eigen::Index per = static_cast<Eigen::Index>(cfg.ues) * cfg.steps;
  const auto windows = static_cast<Eigen::Index>(batch.size());
  const Eigen::Index rows = windows * cfg.ues;
  Mat x(windows * per, cfg.features());
  Mat sig_em(rows, 1), mu_em(rows, 1), sig_ur(rows, 1), mu_ur(rows, 1);
  Mat y_em(rows, 1), y_ur(rows, 1);
  std::vector<int> labels(static_cast<std::size_t>(rows));
  for (Eigen::Index w = 0; w < windows; ++w) {
    const auto& s = *batch[static_cast<std::size_t>(w)];
    const auto norm = revin_normalize(s.input.as_rows(), cfg.revin_eps);
    x.middleRows(w * per, per) = norm.normalized;
    for (int u = 0; u < cfg.ues; ++u) {
      const Eigen::Index r = w * cfg.ues + u;
      const auto ui = static_cast<std::size_t>(u);
      sig_em(r, 0) = norm.stats.sigma[0] / scales.em;
      mu_em(r, 0) = norm.stats.mu[0] / scales.em;
      sig_ur(r, 0) = norm.stats.sigma[1] / scales.ur;
      mu_ur(r, 0) = norm.stats.mu[1] / scales.ur;
      y_em(r, 0) = s.em[ui] / scales.em;
      y_ur(r, 0) = s.ur[ui] / scales.ur;
      labels[static_cast<std::size_t>(r)] = s.route[ui];
    }
  }
  const auto out = model.forward(x, static_cast<int>(windows), training, dropout_rng);
  Var em = nn::mse(nn::add_const(nn::mul_const(out.em, sig_em), mu_em), y_em);
  Var ur = nn::mse(nn::add_const(nn::mul_const(out.ur, sig_ur), mu_ur), y_ur);
  Var ce = nn::cross_entropy(out.route, labels);
  ForecasterLoss l;
  l.total = nn::add(nn::add(em, ur), ce);
  l.em = em->value(0, 0);
  l.ur = ur->value(0, 0);
  l.route = ce->value(0, 0);
  l.rows = static_cast<int>(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    Eigen::Index best = 0;
    out.route->value.row(r).maxCoeff(&best);
    if (best == labels[static_cast<std::size_t>(r)]) ++l.correct_routes;
  }
  return l;
}

std::vector<ForecasterEpoch> train_forecaster(
    ForecasterModel& model, const std::vector<ForecastSample>& samples,
    const ForecasterTrainParams& params,
    const std::function<void(const ForecasterEpoch&)>& on_epoch) {
  if (samples.empty()) throw std::invalid_argument("train_forecaster: empty dataset");
  if (params.batch_size < 1 || params.epochs < 1) {
    throw std::invalid_argument("train_forecaster: epochs and batch size must be positive");
  }
  const auto scales = target_scales(samples);
  auto adam = nn::make_adam(model.params(), params.lr);
  std::mt19937_64 order_rng(params.seed);
  std::mt19937_64 dropout_rng(params.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const auto batch = static_cast<std::size_t>(params.batch_size);
  const int steps = params.steps_per_epoch > 0
                        ? params.steps_per_epoch
                        : static_cast<int>((samples.size() + batch - 1) / batch);
  std::vector<ForecasterEpoch> log;
  for (int epoch = 1; epoch <= params.epochs; ++epoch) {
    ForecasterEpoch rec{epoch, 0.0, 0.0, 0.0, 0.0};
    long correct = 0;
    long rows = 0;
    for (int step = 0; step < steps; ++step) {
      std::vector<const ForecastSample*> mb;
      while (mb.size() < batch && mb.size() < samples.size()) {
        if (cursor == order.size()) {
          std::shuffle(order.begin(), order.end(), order_rng);
          cursor = 0;
        }
        mb.push_back(&samples[order[cursor++]]);
      }
      nn::zero_grad(model.params());
      auto loss = forecaster_loss(model, mb, scales, true, &dropout_rng);
      if (!std::isfinite(loss.total->value(0, 0))) {
        throw std::runtime_error(fmt::format(
            "forecaster training diverged at epoch {} step {}: em={} ur={} route={}", epoch, step,
            loss.em, loss.ur, loss.route));
      }
      nn::backward(loss.total);
      nn::adam_step(model.params(), adam);
      rec.loss_em += loss.em;
      rec.loss_ur += loss.ur;
      rec.loss_route += loss.route;
      correct += loss.correct_routes;
      rows += loss.rows;
    }
    rec.loss_em /= steps;
    rec.loss_ur /= steps;
    rec.loss_route /= steps;
    rec.acc_route = rows > 0 ? static_cast<double>(correct) / static_cast<double>(rows) : 0.0;
    log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return log;
}

namespace {

struct SkillAccumulator {
  std::vector<double> pred_em, pred_ur, true_em, true_ur;
  long correct = 0;
  long total = 0;

  ForecastSkill finish() const {
    auto nmse = [](const std::vector<double>& p, const std::vector<double>& y) {
      const double n = static_cast<double>(y.size());
      double mean = 0.0;
      for (double v : y) mean += v / n;
      double var = 0.0, err = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) {
        var += (y[i] - mean) * (y[i] - mean) / n;
        err += (p[i] - y[i]) * (p[i] - y[i]) / n;
      }
      return var > 0.0 ? err / var : err;
    };
    return {nmse(pred_em, true_em), nmse(pred_ur, true_ur),
            total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0};
  }
};

}  // namespace

ForecastSkill evaluate_forecaster(const ForecasterModel& model,
                                  const std::vector<ForecastSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("evaluate_forecaster: empty dataset");
  SkillAccumulator acc;
  for (const auto& s : samples) {
    const auto f = forecast(model, s.input);
    for (std::size_t u = 0; u < s.em.size(); ++u) {
      acc.pred_em.push_back(f.omega_em[u]);
      acc.pred_ur.push_back(f.omega_ur[u]);
      acc.true_em.push_back(s.em[u]);
      acc.true_ur.push_back(s.ur[u]);
      acc.correct += f.route[u] == s.route[u] ? 1 : 0;
      ++acc.total;
    }
  }
  return acc.finish();
}

ForecastSkill persistence_skill(const std::vector<ForecastSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("persistence_skill: empty dataset");
  SkillAccumulator acc;
  for (const auto& s : samples) {
    const auto& in = s.input;
    const int last = in.steps - 1;
    for (int u = 0; u < in.ues; ++u) {
      const auto ui = static_cast<std::size_t>(u);
      int best = 0;
      for (int e = 1; e + 2 < in.features; ++e) {
        if (in.at(u, last, 2 + e) > in.at(u, last, 2 + best)) best = e;
      }
      acc.pred_em.push_back(in.at(u, last, 0));
      acc.pred_ur.push_back(in.at(u, last, 1));
      acc.true_em.push_back(s.em[ui]);
      acc.true_ur.push_back(s.ur[ui]);
      acc.correct += best == s.route[ui] ? 1 : 0;
      ++acc.total;
    }
  }
  return acc.finish();
}

void write_forecaster_log(std::ostream& out, const std::vector<ForecasterEpoch>& log) {
  out << "epoch,loss_em,loss_ur,loss_route,acc_route\n";
  for (const auto& r : log) {
    out << fmt::format("{},{},{},{},{}\n", r.epoch, r.loss_em, r.loss_ur, r.loss_route,
                       r.acc_route);
  }
}

}  // namespace msmu
