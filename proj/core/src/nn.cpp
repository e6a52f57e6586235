// SPDX-License-Identifier: Apache-2.0
#include "msmu/nn.hpp"

#include <boost/crc.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace msmu::nn {

Mat& ValueGrid::g() {
  if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
    grad = Mat::Zero(value.rows(), value.cols());
  }
  return grad;
}

namespace {

Var make(Mat value, std::vector<Var> parents, std::function<void(ValueGrid&)> fn) {
  auto n = std::make_shared<ValueGrid>();
  n->value = std::move(value);
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(fn);
  }
  return n;
}

void same_shape(const Var& a, const Var& b, const char* op) {
  if (a->rows() != b->rows() || a->cols() != b->cols()) {
    throw std::invalid_argument(fmt::format("{}: shape mismatch {}x{} vs {}x{}", op, a->rows(),
                                            a->cols(), b->rows(), b->cols()));
  }
}

std::uint64_t next_mark() {
  static std::uint64_t counter = 0;
  return ++counter;
}

}  // namespace

Var constant(Mat value) {
  auto n = std::make_shared<ValueGrid>();
  n->value = std::move(value);
  return n;
}

Var parameter(Mat value) {
  auto n = constant(std::move(value));
  n->requires_grad = true;
  return n;
}

void backward(const Var& root) {
  if (root->rows() != 1 || root->cols() != 1) {
    throw std::invalid_argument("backward: root must be a scalar");
  }
  const std::uint64_t mark = next_mark();
  std::vector<ValueGrid*> order;
  std::vector<std::pair<ValueGrid*, std::size_t>> stack;
  root->mark = mark;
  stack.emplace_back(root.get(), 0);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      ValueGrid* p = node->parents[next++].get();
      if (p->mark != mark && p->requires_grad) {
        p->mark = mark;
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->g().setOnes();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    ValueGrid* n = *it;
    if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
  }
}

Var matmul(const Var& a, const Var& b) {
  if (a->cols() != b->rows()) {
    throw std::invalid_argument(fmt::format("matmul: inner dimensions {} and {} differ",
                                            a->cols(), b->rows()));
  }
  Mat out = a->value * b->value;
  return make(std::move(out), {a, b}, [](ValueGrid& self) {
    auto& a = *self.parents[0];
    auto& b = *self.parents[1];
    if (a.requires_grad) a.g().noalias() += self.grad * b.value.transpose();
    if (b.requires_grad) b.g().noalias() += a.value.transpose() * self.grad;
  });
}

Var add(const Var& a, const Var& b) {
  same_shape(a, b, "add");
  return make(a->value + b->value, {a, b}, [](ValueGrid& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) p->g() += self.grad;
    }
  });
}

Var sub(const Var& a, const Var& b) {
  same_shape(a, b, "sub");
  return make(a->value - b->value, {a, b}, [](ValueGrid& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->g() += self.grad;
    if (self.parents[1]->requires_grad) self.parents[1]->g() -= self.grad;
  });
}

Var mul(const Var& a, const Var& b) {
  same_shape(a, b, "mul");
  return make(a->value.cwiseProduct(b->value), {a, b}, [](ValueGrid& self) {
    auto& a = *self.parents[0];
    auto& b = *self.parents[1];
    if (a.requires_grad) a.g() += self.grad.cwiseProduct(b.value);
    if (b.requires_grad) b.g() += self.grad.cwiseProduct(a.value);
  });
}

Var scale(const Var& a, double c) {
  return make(a->value * c, {a}, [c](ValueGrid& self) { self.parents[0]->g() += c * self.grad; });
}

Var add_row(const Var& a, const Var& row) {
  if (row->rows() != 1 || row->cols() != a->cols()) {
    throw std::invalid_argument(fmt::format("add_row: bias {}x{} does not fit {} columns",
                                            row->rows(), row->cols(), a->cols()));
  }
  Mat out = a->value.rowwise() + row->value.row(0);
  return make(std::move(out), {a, row}, [](ValueGrid& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->g() += self.grad;
    if (self.parents[1]->requires_grad) self.parents[1]->g() += self.grad.colwise().sum();
  });
}

Var add_const(const Var& a, const Mat& c) {
  if (a->rows() != c.rows() || a->cols() != c.cols()) {
    throw std::invalid_argument("add_const: shape mismatch");
  }
  return make(a->value + c, {a}, [](ValueGrid& self) { self.parents[0]->g() += self.grad; });
}

Var mul_const(const Var& a, const Mat& c) {
  if (a->rows() != c.rows() || a->cols() != c.cols()) {
    throw std::invalid_argument("mul_const: shape mismatch");
  }
  return make(a->value.cwiseProduct(c), {a}, [c](ValueGrid& self) {
    self.parents[0]->g() += self.grad.cwiseProduct(c);
  });
}

Var relu(const Var& a) {
  Mat out = a->value.cwiseMax(0.0);
  return make(std::move(out), {a}, [](ValueGrid& self) {
    auto& a = *self.parents[0];
    a.g() += (a.value.array() > 0.0).select(self.grad, 0.0);
  });
}

Var gelu(const Var& a) {
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  Mat out = a->value.unaryExpr(
      [inv_sqrt2](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
  return make(std::move(out), {a}, [inv_sqrt2](ValueGrid& self) {
    auto& a = *self.parents[0];
    const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    Mat d = a.value.unaryExpr([&](double x) {
      return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
    });
    a.g() += self.grad.cwiseProduct(d);
  });
}

Var sigmoid(const Var& a) {
  Mat out = a->value.unaryExpr([](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double z = std::exp(x);
    return z / (1.0 + z);
  });
  return make(std::move(out), {a}, [](ValueGrid& self) {
    const auto& s = self.value.array();
    self.parents[0]->g().array() += self.grad.array() * s * (1.0 - s);
  });
}

Var tanh(const Var& a) {
  Mat out = a->value.array().tanh().matrix();
  return make(std::move(out), {a}, [](ValueGrid& self) {
    const auto& t = self.value.array();
    self.parents[0]->g().array() += self.grad.array() * (1.0 - t * t);
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Eigen::Index n = x->rows();
  const Eigen::Index m = x->cols();
  if (gamma->rows() != 1 || gamma->cols() != m || beta->rows() != 1 || beta->cols() != m) {
    throw std::invalid_argument("layer_norm: gain/bias shape mismatch");
  }
  auto xhat = std::make_shared<Mat>(n, m);
  auto rstd = std::make_shared<Eigen::VectorXd>(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto row = x->value.row(r);
    const double mu = row.mean();
    const double var = (row.array() - mu).square().mean();
    (*rstd)(r) = 1.0 / std::sqrt(var + eps);
    xhat->row(r) = (row.array() - mu) * (*rstd)(r);
  }
  Mat out = (xhat->array().rowwise() * gamma->value.row(0).array()).rowwise() +
            beta->value.row(0).array();
  return make(std::move(out), {x, gamma, beta}, [xhat, rstd](ValueGrid& self) {
    auto& x = *self.parents[0];
    auto& gamma = *self.parents[1];
    auto& beta = *self.parents[2];
    if (beta.requires_grad) beta.g() += self.grad.colwise().sum();
    if (gamma.requires_grad) gamma.g() += self.grad.cwiseProduct(*xhat).colwise().sum();
    if (x.requires_grad) {
      Mat dxhat = self.grad.array().rowwise() * gamma.value.row(0).array();
      const double inv_m = 1.0 / static_cast<double>(dxhat.cols());
      auto& gx = x.g();
      for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
        const double mean_d = dxhat.row(r).sum() * inv_m;
        const double mean_dx = dxhat.row(r).dot(xhat->row(r)) * inv_m;
        gx.row(r).array() +=
            (*rstd)(r) * (dxhat.row(r).array() - mean_d - xhat->row(r).array() * mean_dx);
      }
    }
  });
}

Var dropout(const Var& x, double p, bool training, std::mt19937_64* rng) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
  if (rng == nullptr) throw std::invalid_argument("dropout: training mode needs an rng");
  const double keep = 1.0 - p;
  std::bernoulli_distribution coin(keep);
  auto mask = std::make_shared<Mat>(x->rows(), x->cols());
  for (Eigen::Index i = 0; i < mask->size(); ++i) mask->data()[i] = coin(*rng) ? 1.0 / keep : 0.0;
  return make(x->value.cwiseProduct(*mask), {x}, [mask](ValueGrid& self) {
    self.parents[0]->g() += self.grad.cwiseProduct(*mask);
  });
}

Var select_rows(const Var& x, std::vector<Eigen::Index> rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), x->cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= x->rows()) throw std::out_of_range("select_rows: bad index");
    out.row(static_cast<Eigen::Index>(i)) = x->value.row(rows[i]);
  }
  return make(std::move(out), {x}, [rows = std::move(rows)](ValueGrid& self) {
    auto& g = self.parents[0]->g();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      g.row(rows[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    }
  });
}

Var slice_cols(const Var& x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x->cols()) {
    throw std::out_of_range("slice_cols: range outside matrix");
  }
  Mat out = x->value.middleCols(start, count);
  return make(std::move(out), {x}, [start, count](ValueGrid& self) {
    self.parents[0]->g().middleCols(start, count) += self.grad;
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p->rows() != parts.front()->rows()) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p->cols();
  }
  Mat out(parts.front()->rows(), cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p->cols()) = p->value;
    at += p->cols();
  }
  return make(std::move(out), parts, [](ValueGrid& self) {
    Eigen::Index at = 0;
    for (auto& p : self.parents) {
      if (p->requires_grad) p->g() += self.grad.middleCols(at, p->cols());
      at += p->cols();
    }
  });
}

Var blocked_multihead_attention(const Var& q, const Var& k, const Var& v, int heads,
                                Eigen::Index seq_len) {
  same_shape(q, k, "attention");
  if (v->rows() != q->rows()) throw std::invalid_argument("attention: value rows differ");
  if (heads < 1 || q->cols() % heads != 0 || v->cols() % heads != 0) {
    throw std::invalid_argument(
        fmt::format("attention: model width {} not divisible by {} heads", q->cols(), heads));
  }
  if (seq_len < 1 || q->rows() % seq_len != 0) {
    throw std::invalid_argument("attention: rows not a multiple of the sequence length");
  }
  const Eigen::Index dk = q->cols() / heads;
  const Eigen::Index dv = v->cols() / heads;
  const Eigen::Index blocks = q->rows() / seq_len;
  const double scale_qk = 1.0 / std::sqrt(static_cast<double>(dk));
  auto probs = std::make_shared<std::vector<Mat>>(static_cast<std::size_t>(blocks * heads));
  Mat out(q->rows(), v->cols());
  for (Eigen::Index b = 0; b < blocks; ++b) {
    for (int h = 0; h < heads; ++h) {
      const auto qh = q->value.block(b * seq_len, h * dk, seq_len, dk);
      const auto kh = k->value.block(b * seq_len, h * dk, seq_len, dk);
      const auto vh = v->value.block(b * seq_len, h * dv, seq_len, dv);
      Mat s = (qh * kh.transpose()) * scale_qk;
      for (Eigen::Index r = 0; r < seq_len; ++r) {
        const double mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp();
        s.row(r) /= s.row(r).sum();
      }
      out.block(b * seq_len, h * dv, seq_len, dv).noalias() = s * vh;
      (*probs)[static_cast<std::size_t>(b * heads + h)] = std::move(s);
    }
  }
  return make(std::move(out), {q, k, v},
              [probs, heads, seq_len, dk, dv, blocks, scale_qk](ValueGrid& self) {
                auto& q = *self.parents[0];
                auto& k = *self.parents[1];
                auto& v = *self.parents[2];
                Mat* gq = q.requires_grad ? &q.g() : nullptr;
                Mat* gk = k.requires_grad ? &k.g() : nullptr;
                Mat* gv = v.requires_grad ? &v.g() : nullptr;
                for (Eigen::Index b = 0; b < blocks; ++b) {
                  for (int h = 0; h < heads; ++h) {
                    const Mat& p = (*probs)[static_cast<std::size_t>(b * heads + h)];
                    const auto go = self.grad.block(b * seq_len, h * dv, seq_len, dv);
                    const auto qh = q.value.block(b * seq_len, h * dk, seq_len, dk);
                    const auto kh = k.value.block(b * seq_len, h * dk, seq_len, dk);
                    const auto vh = v.value.block(b * seq_len, h * dv, seq_len, dv);
                    if (gv) gv->block(b * seq_len, h * dv, seq_len, dv).noalias() += p.transpose() * go;
                    Mat dp = go * vh.transpose();
                    Eigen::VectorXd rs = dp.cwiseProduct(p).rowwise().sum();
                    Mat ds = p.cwiseProduct(dp.colwise() - rs) * scale_qk;
                    if (gq) gq->block(b * seq_len, h * dk, seq_len, dk).noalias() += ds * kh;
                    if (gk) gk->block(b * seq_len, h * dk, seq_len, dk).noalias() += ds.transpose() * qh;
                  }
                }
              });
}

Var attention(const Var& q, const Var& k, const Var& v) {
  return blocked_multihead_attention(q, k, v, 1, q->rows());
}

Var mse(const Var& pred, const Mat& target) {
  if (pred->rows() != target.rows() || pred->cols() != target.cols()) {
    throw std::invalid_argument("mse: shape mismatch");
  }
  auto diff = std::make_shared<Mat>(pred->value - target);
  const double n = static_cast<double>(diff->size());
  Mat out(1, 1);
  out(0, 0) = diff->squaredNorm() / n;
  return make(std::move(out), {pred}, [diff, n](ValueGrid& self) {
    self.parents[0]->g() += (2.0 * self.grad(0, 0) / n) * *diff;
  });
}

Var cross_entropy(const Var& logits, std::span<const int> labels) {
  const Eigen::Index n = logits->rows();
  const Eigen::Index c = logits->cols();
  if (static_cast<Eigen::Index>(labels.size()) != n) {
    throw std::invalid_argument("cross_entropy: label count differs from rows");
  }
  auto soft = std::make_shared<Mat>(n, c);
  std::vector<int> lab(labels.begin(), labels.end());
  double total = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const int y = lab[static_cast<std::size_t>(r)];
    if (y < 0 || y >= c) {
      throw std::out_of_range(fmt::format("cross_entropy: label {} outside [0,{})", y, c));
    }
    const auto row = logits->value.row(r);
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    total += lse - row(y);
    soft->row(r) = (row.array() - lse).exp();
  }
  Mat out(1, 1);
  out(0, 0) = total / static_cast<double>(n);
  return make(std::move(out), {logits}, [soft, lab = std::move(lab)](ValueGrid& self) {
    Mat d = *soft;
    for (std::size_t r = 0; r < lab.size(); ++r) d(static_cast<Eigen::Index>(r), lab[r]) -= 1.0;
    self.parents[0]->g() += (self.grad(0, 0) / static_cast<double>(d.rows())) * d;
  });
}

Var sum(const Var& a) {
  Mat out(1, 1);
  out(0, 0) = a->value.sum();
  return make(std::move(out), {a}, [](ValueGrid& self) {
    self.parents[0]->g().array() += self.grad(0, 0);
  });
}

Mat xavier_uniform(Eigen::Index fan_in, Eigen::Index fan_out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  Mat w(fan_in, fan_out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  return w;
}

Linear::Linear(Eigen::Index in, Eigen::Index out, std::mt19937_64& rng)
    : w(parameter(xavier_uniform(in, out, rng))), b(parameter(Mat::Zero(1, out))) {}

Var ffn(const Var& z, const Linear& first, const Linear& second, Activation act) {
  Var hidden = first(z);
  hidden = act == Activation::relu ? relu(hidden) : gelu(hidden);
  return second(hidden);
}

MultiHead::MultiHead(Eigen::Index d_model, int heads_, std::mt19937_64& rng)
    : wq(d_model, d_model, rng),
      wk(d_model, d_model, rng),
      wv(d_model, d_model, rng),
      wo(d_model, d_model, rng),
      heads(heads_) {
  if (heads < 1 || d_model % heads != 0) {
    throw std::invalid_argument(
        fmt::format("multi-head: d_model {} not divisible by {} heads", d_model, heads));
  }
}

Var MultiHead::operator()(const Var& x, Eigen::Index seq_len) const {
  return wo(blocked_multihead_attention(wq(x), wk(x), wv(x), heads, seq_len));
}

LstmLayer::LstmLayer(Eigen::Index in, Eigen::Index hidden_, std::mt19937_64& rng)
    : hidden(hidden_) {
  Mat x(in, 4 * hidden);
  Mat h(hidden, 4 * hidden);
  for (int gate = 0; gate < 4; ++gate) {
    x.middleCols(gate * hidden, hidden) = xavier_uniform(in, hidden, rng);
    h.middleCols(gate * hidden, hidden) = xavier_uniform(hidden, hidden, rng);
  }
  Mat bias = Mat::Zero(1, 4 * hidden);
  bias.middleCols(hidden, hidden).setOnes();
  wx = parameter(std::move(x));
  wh = parameter(std::move(h));
  b = parameter(std::move(bias));
}

LstmState lstm_cell(const Var& x, const LstmState& prev, const LstmLayer& layer) {
  const Eigen::Index hd = layer.hidden;
  if (x->cols() != layer.wx->rows()) {
    throw std::invalid_argument(fmt::format("lstm_cell: input width {} but layer expects {}",
                                            x->cols(), layer.wx->rows()));
  }
  Var h = prev.h ? prev.h : constant(Mat::Zero(x->rows(), hd));
  Var c = prev.c ? prev.c : constant(Mat::Zero(x->rows(), hd));
  if (h->rows() != x->rows() || h->cols() != hd || c->rows() != x->rows() || c->cols() != hd) {
    throw std::invalid_argument("lstm_cell: state shape mismatch");
  }
  Var z = add_row(add(matmul(x, layer.wx), matmul(h, layer.wh)), layer.b);
  Var i = sigmoid(slice_cols(z, 0, hd));
  Var f = sigmoid(slice_cols(z, hd, hd));
  Var g = tanh(slice_cols(z, 2 * hd, hd));
  Var o = sigmoid(slice_cols(z, 3 * hd, hd));
  Var c_next = add(mul(f, c), mul(i, g));
  Var h_next = mul(o, tanh(c_next));
  return {h_next, c_next};
}

Mat positional_encoding(Eigen::Index steps, Eigen::Index d_model) {
  Mat pe(steps, d_model);
  for (Eigen::Index t = 0; t < steps; ++t) {
    for (Eigen::Index i = 0; i < d_model; ++i) {
      const double expo = static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model);
      const double angle = static_cast<double>(t) / std::pow(10000.0, expo);
      pe(t, i) = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

void zero_grad(const NamedParams& params) {
  for (const auto& [name, p] : params) {
    if (p->grad.size() != 0) p->grad.setZero();
  }
}

std::size_t count_parameters(const NamedParams& params) {
  std::size_t n = 0;
  for (const auto& [name, p] : params) n += static_cast<std::size_t>(p->value.size());
  return n;
}

AdamState make_adam(const NamedParams& params, double lr) {
  AdamState s;
  s.lr = lr;
  for (const auto& [name, p] : params) {
    s.m.push_back(Mat::Zero(p->rows(), p->cols()));
    s.v.push_back(Mat::Zero(p->rows(), p->cols()));
  }
  return s;
}

void adam_step(const NamedParams& params, AdamState& state) {
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state mismatch");
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i].second;
    if (p.grad.size() == 0) continue;
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.rows() != p.rows() || m.cols() != p.cols()) {
      throw std::invalid_argument(fmt::format("adam_step: moment shape differs for {}", params[i].first));
    }
    m = state.beta1 * m + (1.0 - state.beta1) * p.grad;
    v = state.beta2 * v + (1.0 - state.beta2) * p.grad.cwiseAbs2();
    p.value.array() -=
        state.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
  }
}

double grad_check(const std::function<Var()>& f, const NamedParams& params, double h,
                  std::size_t max_coords, std::uint64_t seed, double floor) {
  zero_grad(params);
  Var root = f();
  backward(root);
  std::vector<Mat> analytic;
  analytic.reserve(params.size());
  for (const auto& [name, p] : params) {
    analytic.push_back(p->grad.size() == 0 ? Mat::Zero(p->rows(), p->cols()) : p->grad);
  }
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& value = params[i].second->value;
    const auto n = static_cast<std::size_t>(value.size());
    std::vector<std::size_t> coords(n);
    for (std::size_t c = 0; c < n; ++c) coords[c] = c;
    if (max_coords > 0 && n > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords);
    }
    for (std::size_t c : coords) {
      const double saved = value.data()[c];
      value.data()[c] = saved + h;
      const double fp = f()->value(0, 0);
      value.data()[c] = saved - h;
      const double fm = f()->value(0, 0);
      value.data()[c] = saved;
      const double central = (fp - fm) / (2.0 * h);
      const double a = analytic[i].data()[c];
      const double err = std::abs(a - central) / std::max({std::abs(a), std::abs(central), floor});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

namespace {

constexpr char kMagic[4] = {'M', 'S', 'M', 'U'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw CheckpointError("checkpoint truncated");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::string_view data) {
  boost::crc_32_type crc;
  crc.process_bytes(data.data(), data.size());
  return crc.checksum();
}

}  // namespace

void save_checkpoint(std::ostream& out, const NamedParams& params) {
  std::string buf(kMagic, 4);
  put_u32(buf, kCheckpointVersion);
  put_u32(buf, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, p] : params) {
    put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    put_u32(buf, 2);
    put_u64(buf, static_cast<std::uint64_t>(p->rows()));
    put_u64(buf, static_cast<std::uint64_t>(p->cols()));
    for (Eigen::Index i = 0; i < p->value.size(); ++i) put_u64(buf, std::bit_cast<std::uint64_t>(p->value.data()[i]));
  }
  put_u32(buf, crc_of(buf));
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw CheckpointError("checkpoint write failed");
}

void save_checkpoint(const std::string& path, const NamedParams& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(fmt::format("cannot open '{}' for writing", path));
  save_checkpoint(out, params);
}

void load_checkpoint(std::istream& in, const NamedParams& params) {
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string data = ss.str();
  if (data.size() < 16 || data.compare(0, 4, kMagic, 4) != 0) {
    throw CheckpointError("not a checkpoint (bad magic)");
  }
  const std::string_view body(data.data(), data.size() - 4);
  Reader tail(std::string_view(data).substr(data.size() - 4));
  if (tail.u32() != crc_of(body)) throw CheckpointError("checkpoint checksum mismatch");
  Reader r(body);
  r.bytes(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(fmt::format("unsupported checkpoint version {}", version));
  }
  std::unordered_map<std::string, Mat> table;
  const std::uint32_t count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name = r.bytes(r.u32());
    if (r.u32() != 2) throw CheckpointError(fmt::format("{}: unsupported rank", name));
    const auto rows = static_cast<Eigen::Index>(r.u64());
    const auto cols = static_cast<Eigen::Index>(r.u64());
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std::bit_cast<double>(r.u64());
    table.emplace(std::move(name), std::move(m));
  }
  if (!r.done()) throw CheckpointError("trailing bytes in checkpoint");
  if (table.size() != params.size()) {
    throw CheckpointError(fmt::format("checkpoint holds {} tensors, model expects {}",
                                      table.size(), params.size()));
  }
  for (const auto& [name, p] : params) {
    auto it = table.find(name);
    if (it == table.end()) throw CheckpointError(fmt::format("checkpoint lacks '{}'", name));
    if (it->second.rows() != p->rows() || it->second.cols() != p->cols()) {
      throw CheckpointError(fmt::format("'{}': shape {}x{} but model has {}x{}", name,
                                        it->second.rows(), it->second.cols(), p->rows(), p->cols()));
    }
  }
  for (const auto& [name, p] : params) p->value = table.at(name);
}

void load_checkpoint(const std::string& path, const NamedParams& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(fmt::format("cannot open checkpoint '{}'", path));
  load_checkpoint(in, params);
}

}  // namespace msmu::nn
