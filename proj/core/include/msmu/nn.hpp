// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace msmu::nn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

/// A node of the reverse-mode graph: value, accumulated gradient and the op that made it.
struct ValueGrid {
  Mat value;
  Mat grad;
  std::vector<std::shared_ptr<ValueGrid>> parents;
  std::function<void(ValueGrid&)> backward_fn;
  bool requires_grad = false;
  std::uint64_t mark = 0;

  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
  /// Lazily sized gradient buffer.
  Mat& g();
};

using Var = std::shared_ptr<ValueGrid>;

Var constant(Mat value);
Var parameter(Mat value);

/// Runs reverse accumulation from a 1x1 root.
void backward(const Var& root);

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
/// a (n x m) plus a 1 x m row broadcast over rows.
Var add_row(const Var& a, const Var& row);
/// a (n x m) plus a constant n x m matrix.
Var add_const(const Var& a, const Mat& c);
/// Elementwise product with a constant of the same shape.
Var mul_const(const Var& a, const Mat& c);

Var relu(const Var& a);
Var gelu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);

/// Row-wise normalization with learnable 1 x m gain and bias.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

/// Inverted dropout; identity when !training or p == 0.
Var dropout(const Var& x, double p, bool training, std::mt19937_64* rng);

Var select_rows(const Var& x, std::vector<Eigen::Index> rows);
Var slice_cols(const Var& x, Eigen::Index start, Eigen::Index count);
Var concat_cols(const std::vector<Var>& parts);

/// softmax(Q K^T / sqrt(d_k)) V on a single sequence.
Var attention(const Var& q, const Var& k, const Var& v);

/// Head-split attention over independent row blocks of `seq_len` rows. q, k, v are N x d with
/// N a multiple of seq_len; head h uses columns [h*d/H, (h+1)*d/H).
Var blocked_multihead_attention(const Var& q, const Var& k, const Var& v, int heads,
                                Eigen::Index seq_len);

Var mse(const Var& pred, const Mat& target);
/// Mean over rows of -log softmax(logits)[label].
Var cross_entropy(const Var& logits, std::span<const int> labels);
Var sum(const Var& a);

struct Linear {
  Var w;  // in x out
  Var b;  // 1 x out
  Linear() = default;
  Linear(Eigen::Index in, Eigen::Index out, std::mt19937_64& rng);
  Var operator()(const Var& x) const { return add_row(matmul(x, w), b); }
};

Mat xavier_uniform(Eigen::Index fan_in, Eigen::Index fan_out, std::mt19937_64& rng);

enum class Activation { relu, gelu };

/// act(z W1 + b1) W2 + b2
Var ffn(const Var& z, const Linear& first, const Linear& second,
        Activation act = Activation::relu);

struct MultiHead {
  Linear wq, wk, wv, wo;
  int heads = 1;
  MultiHead() = default;
  MultiHead(Eigen::Index d_model, int heads, std::mt19937_64& rng);
  Var operator()(const Var& x, Eigen::Index seq_len) const;
};

struct LstmLayer {
  Var wx;  // in x 4H, gate order i, f, g, o
  Var wh;  // H x 4H
  Var b;   // 1 x 4H
  Eigen::Index hidden = 0;
  LstmLayer() = default;
  LstmLayer(Eigen::Index in, Eigen::Index hidden, std::mt19937_64& rng);
};

struct LstmState {
  Var h;
  Var c;
};

LstmState lstm_cell(const Var& x, const LstmState& prev, const LstmLayer& layer);

/// Fixed sinusoidal table (T x d), interleaved sin/cos at base 1e4.
Mat positional_encoding(Eigen::Index steps, Eigen::Index d_model);

using NamedParams = std::vector<std::pair<std::string, Var>>;

void zero_grad(const NamedParams& params);
std::size_t count_parameters(const NamedParams& params);

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<Mat> m;
  std::vector<Mat> v;
};

AdamState make_adam(const NamedParams& params, double lr);
void adam_step(const NamedParams& params, AdamState& state);

/// max over checked coordinates of |autodiff - central| / max(|autodiff|, |central|, floor).
/// The floor keeps gradients below finite-difference resolution (exact zeros included) from
/// reporting pure round-off as relative error. `f` must build a fresh graph from the current
/// parameter values on each call. `max_coords` > 0 samples that many coordinates per tensor
/// (deterministically).
double grad_check(const std::function<Var()>& f, const NamedParams& params, double h = 1e-5,
                  std::size_t max_coords = 0, std::uint64_t seed = 1, double floor = 1e-5);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(std::ostream& out, const NamedParams& params);
void save_checkpoint(const std::string& path, const NamedParams& params);
/// Loads values into `params` by name; shapes must match.
void load_checkpoint(std::istream& in, const NamedParams& params);
void load_checkpoint(const std::string& path, const NamedParams& params);

}  // namespace msmu::nn
