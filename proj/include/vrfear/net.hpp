#pragma once

// Bidirectional LSTM + additive attention + fully connected fear-level
// classifier, with hand-written backpropagation and an Adam training loop.
//
//   O_t  = [h_t ; h^_t]                    forward and backward LSTM states
//   u_t  = tanh(O_t W)                     W: S x A
//   s_t  = u_t p                           p: A x 1
//   a    = softmax(s_1..s_l)
//   ctx  = sum_t a_t O_t
//   y    = softmax(FC2(dropout(tanh(FC1(ctx)))))
//
// Batches are processed as matrices with one row per sequence.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vrfear/core.hpp"
#include "vrfear/error.hpp"
#include "vrfear/random.hpp"

namespace vrfear {

using Mat = Eigen::MatrixXd;

struct NetConfig {
  int input_dim = 61;
  int hidden = 128;
  int attention_dim = 0;  // 0 selects the state width (2H when bidirectional)
  int fc_width = 64;
  int sequence_length = 16;
  int classes = 6;
  double dropout = 0.5;
  double learning_rate = 1e-4;
  int batch_size = 256;
  int epochs = 50;
  std::uint64_t seed = 0;
  bool bidirectional = true;
  bool attention = true;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double forget_bias = 1.0;

  int state_dim() const { return hidden * (bidirectional ? 2 : 1); }
  int attn_dim() const { return attention_dim > 0 ? attention_dim : state_dim(); }

  void validate() const {
    const auto bad = [](const std::string& what) { return Error("net", "invalid_config", what); };
    if (input_dim <= 0 || hidden <= 0 || fc_width <= 0 || sequence_length <= 0 || batch_size <= 0 || epochs < 0) {
      throw bad("dimensions, batch size and epochs must be positive");
    }
    if (attention_dim < 0) throw bad("attention_dim must be nonnegative");
    if (classes < 2) throw bad("need at least two classes");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw bad("dropout must lie in [0, 1)");
    if (!(learning_rate >= 0.0)) throw bad("learning rate must be nonnegative");
  }
};

inline void to_json(nlohmann::json& j, const NetConfig& c) {
  j = {{"input_dim", c.input_dim},         {"hidden", c.hidden},
       {"attention_dim", c.attention_dim}, {"fc_width", c.fc_width},
       {"sequence_length", c.sequence_length}, {"classes", c.classes},
       {"dropout", c.dropout},             {"learning_rate", c.learning_rate},
       {"batch_size", c.batch_size},       {"epochs", c.epochs},
       {"seed", c.seed},                   {"bidirectional", c.bidirectional},
       {"attention", c.attention},         {"adam_beta1", c.adam_beta1},
       {"adam_beta2", c.adam_beta2},       {"adam_epsilon", c.adam_epsilon},
       {"forget_bias", c.forget_bias}};
}

inline void from_json(const nlohmann::json& j, NetConfig& c) {
  c.input_dim = j.value("input_dim", c.input_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.attention_dim = j.value("attention_dim", c.attention_dim);
  c.fc_width = j.value("fc_width", c.fc_width);
  c.sequence_length = j.value("sequence_length", c.sequence_length);
  c.classes = j.value("classes", c.classes);
  c.dropout = j.value("dropout", c.dropout);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.bidirectional = j.value("bidirectional", c.bidirectional);
  c.attention = j.value("attention", c.attention);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
  c.forget_bias = j.value("forget_bias", c.forget_bias);
}

// Gate blocks are laid out [input | forget | cell | output], each H wide.
struct LstmWeights {
  Mat input;      // D x 4H
  Mat recurrent;  // H x 4H
  Mat bias;       // 1 x 4H
};

struct FearNetParams {
  LstmWeights forward;
  LstmWeights backward;  // empty when unidirectional
  Mat attention_w;       // S x A, empty without attention
  Mat attention_proj;    // A x 1, empty without attention
  Mat fc1_w;             // S x F
  Mat fc1_b;             // 1 x F
  Mat fc2_w;             // F x C
  Mat fc2_b;             // 1 x C

  // Named tensors in a fixed order; empty tensors are skipped.
  std::vector<std::pair<std::string_view, Mat*>> tensors() {
    std::vector<std::pair<std::string_view, Mat*>> all = {
        {"lstm_forward.input", &forward.input},      {"lstm_forward.recurrent", &forward.recurrent},
        {"lstm_forward.bias", &forward.bias},        {"lstm_backward.input", &backward.input},
        {"lstm_backward.recurrent", &backward.recurrent}, {"lstm_backward.bias", &backward.bias},
        {"attention.weight_W", &attention_w},        {"attention.weight_proj", &attention_proj},
        {"fc1.weight", &fc1_w},                      {"fc1.bias", &fc1_b},
        {"fc2.weight", &fc2_w},                      {"fc2.bias", &fc2_b}};
    std::erase_if(all, [](const auto& t) { return t.second->size() == 0; });
    return all;
  }
  std::vector<std::pair<std::string_view, const Mat*>> tensors() const {
    std::vector<std::pair<std::string_view, const Mat*>> out;
    for (auto [name, m] : const_cast<FearNetParams*>(this)->tensors()) out.emplace_back(name, m);
    return out;
  }

  FearNetParams zeros_like() const {
    FearNetParams z = *this;
    for (auto& [name, m] : z.tensors()) m->setZero();
    return z;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, m] : tensors()) n += static_cast<std::size_t>(m->size());
    return n;
  }

  bool all_finite() const {
    for (const auto& [name, m] : tensors())
      if (!m->allFinite()) return false;
    return true;
  }

  friend bool operator==(const FearNetParams& a, const FearNetParams& b) {
    const auto ta = a.tensors();
    const auto tb = b.tensors();
    if (ta.size() != tb.size()) return false;
    for (std::size_t i = 0; i < ta.size(); ++i) {
      if (ta[i].first != tb[i].first || ta[i].second->rows() != tb[i].second->rows() ||
          ta[i].second->cols() != tb[i].second->cols() || *ta[i].second != *tb[i].second) {
        return false;
      }
    }
    return true;
  }
};

inline Mat uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.uniform(-bound, bound);
  return m;
}

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) everywhere; forget-gate biases start at
// config.forget_bias.
inline FearNetParams init_params(const NetConfig& cfg, Rng& rng) {
  cfg.validate();
  const int h = cfg.hidden;
  const auto lstm = [&]() {
    LstmWeights w;
    w.input = uniform_matrix(cfg.input_dim, 4 * h, 1.0 / std::sqrt(cfg.input_dim), rng);
    w.recurrent = uniform_matrix(h, 4 * h, 1.0 / std::sqrt(h), rng);
    w.bias = uniform_matrix(1, 4 * h, 1.0 / std::sqrt(h), rng);
    w.bias.middleCols(h, h).setConstant(cfg.forget_bias);
    return w;
  };
  FearNetParams p;
  p.forward = lstm();
  if (cfg.bidirectional) p.backward = lstm();
  const int s = cfg.state_dim();
  if (cfg.attention) {
    p.attention_w = uniform_matrix(s, cfg.attn_dim(), 1.0 / std::sqrt(s), rng);
    p.attention_proj = uniform_matrix(cfg.attn_dim(), 1, 1.0 / std::sqrt(cfg.attn_dim()), rng);
  }
  p.fc1_w = uniform_matrix(s, cfg.fc_width, 1.0 / std::sqrt(s), rng);
  p.fc1_b = uniform_matrix(1, cfg.fc_width, 1.0 / std::sqrt(s), rng);
  p.fc2_w = uniform_matrix(cfg.fc_width, cfg.classes, 1.0 / std::sqrt(cfg.fc_width), rng);
  p.fc2_b = uniform_matrix(1, cfg.classes, 1.0 / std::sqrt(cfg.fc_width), rng);
  return p;
}

inline FearNetParams init_params(const NetConfig& cfg) {
  Rng rng(cfg.seed);
  return init_params(cfg, rng);
}

inline void check_shapes(const FearNetParams& p, const NetConfig& cfg) {
  const auto expect = [](const Mat& m, Eigen::Index r, Eigen::Index c, const char* name) {
    if (m.rows() != r || m.cols() != c) {
      throw Error("net", "shape_mismatch",
                  std::string(name) + " is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                      ", expected " + std::to_string(r) + "x" + std::to_string(c));
    }
  };
  const int h = cfg.hidden;
  const int s = cfg.state_dim();
  expect(p.forward.input, cfg.input_dim, 4 * h, "lstm_forward.input");
  expect(p.forward.recurrent, h, 4 * h, "lstm_forward.recurrent");
  expect(p.forward.bias, 1, 4 * h, "lstm_forward.bias");
  if (cfg.bidirectional) {
    expect(p.backward.input, cfg.input_dim, 4 * h, "lstm_backward.input");
    expect(p.backward.recurrent, h, 4 * h, "lstm_backward.recurrent");
    expect(p.backward.bias, 1, 4 * h, "lstm_backward.bias");
  }
  if (cfg.attention) {
    expect(p.attention_w, s, cfg.attn_dim(), "attention.weight_W");
    expect(p.attention_proj, cfg.attn_dim(), 1, "attention.weight_proj");
  }
  expect(p.fc1_w, s, cfg.fc_width, "fc1.weight");
  expect(p.fc1_b, 1, cfg.fc_width, "fc1.bias");
  expect(p.fc2_w, cfg.fc_width, cfg.classes, "fc2.weight");
  expect(p.fc2_b, 1, cfg.classes, "fc2.bias");
}

namespace detail {

inline Mat sigmoid(const Mat& z) { return (1.0 + (-z.array()).exp()).inverse().matrix(); }

// Row-wise softmax with max subtraction.
inline Mat softmax_rows(const Mat& z) {
  Mat out = z;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double m = z.row(r).maxCoeff();
    out.row(r) = (z.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

}  // namespace detail

// Activations of one LSTM direction, indexed by time step.
struct LstmTrace {
  std::vector<Mat> i, f, g, o, c, h;
};

inline LstmTrace run_lstm(const LstmWeights& w, const std::vector<Mat>& x, bool reverse) {
  const auto len = x.size();
  const Eigen::Index batch = x.front().rows();
  const Eigen::Index h = w.recurrent.rows();
  LstmTrace tr;
  for (auto* v : {&tr.i, &tr.f, &tr.g, &tr.o, &tr.c, &tr.h}) v->resize(len);
  Mat h_prev = Mat::Zero(batch, h);
  Mat c_prev = Mat::Zero(batch, h);
  for (std::size_t step = 0; step < len; ++step) {
    const std::size_t t = reverse ? len - 1 - step : step;
    Mat z = x[t] * w.input + h_prev * w.recurrent;
    z.rowwise() += w.bias.row(0);
    tr.i[t] = detail::sigmoid(z.leftCols(h));
    tr.f[t] = detail::sigmoid(z.middleCols(h, h));
    tr.g[t] = z.middleCols(2 * h, h).array().tanh().matrix();
    tr.o[t] = detail::sigmoid(z.rightCols(h));
    tr.c[t] = tr.f[t].cwiseProduct(c_prev) + tr.i[t].cwiseProduct(tr.g[t]);
    tr.h[t] = tr.o[t].cwiseProduct(tr.c[t].array().tanh().matrix());
    h_prev = tr.h[t];
    c_prev = tr.c[t];
  }
  return tr;
}

// Backpropagation through time for one direction. `dh_out[t]` is the loss
// gradient flowing into h_t from above.
inline void backprop_lstm(const LstmWeights& w, LstmWeights& grad, const LstmTrace& tr, const std::vector<Mat>& x,
                          const std::vector<Mat>& dh_out, bool reverse) {
  const auto len = x.size();
  const Eigen::Index batch = x.front().rows();
  const Eigen::Index h = w.recurrent.rows();
  Mat dh_next = Mat::Zero(batch, h);
  Mat dc_next = Mat::Zero(batch, h);
  const Mat zeros = Mat::Zero(batch, h);
  Mat dz(batch, 4 * h);
  for (std::size_t k = len; k-- > 0;) {
    const std::size_t t = reverse ? len - 1 - k : k;
    const bool first = k == 0;
    const std::size_t prev = reverse ? t + 1 : t - 1;
    const Mat& c_prev = first ? zeros : tr.c[prev];
    const Mat& h_prev = first ? zeros : tr.h[prev];

    const Mat dh = dh_out[t] + dh_next;
    const Mat tc = tr.c[t].array().tanh().matrix();
    const Mat d_o = dh.cwiseProduct(tc);
    const Mat dc = dh.cwiseProduct(tr.o[t]).cwiseProduct((1.0 - tc.array().square()).matrix()) + dc_next;
    const Mat di = dc.cwiseProduct(tr.g[t]);
    const Mat dg = dc.cwiseProduct(tr.i[t]);
    const Mat df = dc.cwiseProduct(c_prev);
    dc_next = dc.cwiseProduct(tr.f[t]);

    dz.leftCols(h) = (di.array() * tr.i[t].array() * (1.0 - tr.i[t].array())).matrix();
    dz.middleCols(h, h) = (df.array() * tr.f[t].array() * (1.0 - tr.f[t].array())).matrix();
    dz.middleCols(2 * h, h) = (dg.array() * (1.0 - tr.g[t].array().square())).matrix();
    dz.rightCols(h) = (d_o.array() * tr.o[t].array() * (1.0 - tr.o[t].array())).matrix();

    grad.input.noalias() += x[t].transpose() * dz;
    grad.recurrent.noalias() += h_prev.transpose() * dz;
    grad.bias += dz.colwise().sum();
    dh_next.noalias() = dz * w.recurrent.transpose();
  }
}

// Everything the backward pass needs from one forward pass over a batch.
struct ForwardTrace {
  LstmTrace fwd;
  LstmTrace bwd;
  std::vector<Mat> states;  // O_t, batch x S
  std::vector<Mat> u;       // tanh(O_t W), batch x A
  Mat scores;               // batch x l raw attention scores
  Mat weights;              // batch x l softmax weights
  Mat context;              // batch x S
  Mat hidden;               // tanh(FC1), batch x F
  Mat mask;                 // dropout scaling, batch x F (empty at inference)
  Mat logits;               // batch x C
  Mat probs;                // batch x C
};

inline void check_inputs(const std::vector<Mat>& x, const NetConfig& cfg) {
  if (x.empty() || static_cast<int>(x.size()) != cfg.sequence_length) {
    throw Error("net", "shape_mismatch",
                "expected " + std::to_string(cfg.sequence_length) + " time steps, got " + std::to_string(x.size()));
  }
  for (const auto& m : x) {
    if (m.cols() != cfg.input_dim || m.rows() != x.front().rows() || m.rows() == 0) {
      throw Error("net", "shape_mismatch", "input step must be batch x " + std::to_string(cfg.input_dim));
    }
  }
}

// Full forward pass. Dropout is applied only when `dropout_rng` is given.
inline ForwardTrace forward(const std::vector<Mat>& x, const FearNetParams& p, const NetConfig& cfg,
                            Rng* dropout_rng = nullptr) {
  check_inputs(x, cfg);
  const std::size_t len = x.size();
  const Eigen::Index batch = x.front().rows();
  const Eigen::Index h = cfg.hidden;
  ForwardTrace tr;
  tr.fwd = run_lstm(p.forward, x, false);
  if (cfg.bidirectional) tr.bwd = run_lstm(p.backward, x, true);
  tr.states.resize(len);
  for (std::size_t t = 0; t < len; ++t) {
    if (cfg.bidirectional) {
      tr.states[t].resize(batch, 2 * h);
      tr.states[t] << tr.fwd.h[t], tr.bwd.h[t];
    } else {
      tr.states[t] = tr.fwd.h[t];
    }
  }

  if (cfg.attention) {
    tr.u.resize(len);
    tr.scores.resize(batch, static_cast<Eigen::Index>(len));
    for (std::size_t t = 0; t < len; ++t) {
      tr.u[t] = (tr.states[t] * p.attention_w).array().tanh().matrix();
      tr.scores.col(static_cast<Eigen::Index>(t)) = tr.u[t] * p.attention_proj;
    }
    tr.weights = detail::softmax_rows(tr.scores);
    tr.context = Mat::Zero(batch, cfg.state_dim());
    for (std::size_t t = 0; t < len; ++t) {
      tr.context += tr.weights.col(static_cast<Eigen::Index>(t)).asDiagonal() * tr.states[t];
    }
  } else if (cfg.bidirectional) {
    tr.context.resize(batch, 2 * h);
    tr.context << tr.fwd.h[len - 1], tr.bwd.h[0];
  } else {
    tr.context = tr.fwd.h[len - 1];
  }

  Mat z1 = tr.context * p.fc1_w;
  z1.rowwise() += p.fc1_b.row(0);
  tr.hidden = z1.array().tanh().matrix();
  Mat dropped = tr.hidden;
  if (dropout_rng != nullptr && cfg.dropout > 0.0) {
    tr.mask.resize(batch, cfg.fc_width);
    const double keep_scale = 1.0 / (1.0 - cfg.dropout);
    for (Eigen::Index r = 0; r < batch; ++r)
      for (Eigen::Index c = 0; c < cfg.fc_width; ++c)
        tr.mask(r, c) = dropout_rng->uniform() < cfg.dropout ? 0.0 : keep_scale;
    dropped = dropped.cwiseProduct(tr.mask);
  }
  tr.logits = dropped * p.fc2_w;
  tr.logits.rowwise() += p.fc2_b.row(0);
  tr.probs = detail::softmax_rows(tr.logits);
  return tr;
}

struct LossAndGradients {
  double loss = 0.0;
  FearNetParams gradients;
};

// Mean cross-entropy over the batch and its exact gradient. `targets` are
// class indices in [0, classes).
inline LossAndGradients loss_and_gradients(const std::vector<Mat>& x, std::span<const int> targets,
                                           const FearNetParams& p, const NetConfig& cfg, Rng* dropout_rng = nullptr,
                                           std::int64_t batch_index = 0) {
  const ForwardTrace tr = forward(x, p, cfg, dropout_rng);
  const Eigen::Index batch = x.front().rows();
  if (static_cast<Eigen::Index>(targets.size()) != batch) {
    throw Error("net", "shape_mismatch", "target count does not match batch size");
  }
  const std::size_t len = x.size();
  const Eigen::Index h = cfg.hidden;

  LossAndGradients out;
  double loss = 0.0;
  Mat dlogits = tr.probs;
  for (Eigen::Index r = 0; r < batch; ++r) {
    const int y = targets[static_cast<std::size_t>(r)];
    if (y < 0 || y >= cfg.classes) throw Error("net", "invalid_target", "target class out of range");
    const double m = tr.logits.row(r).maxCoeff();
    const double lse = m + std::log((tr.logits.row(r).array() - m).exp().sum());
    loss += lse - tr.logits(r, y);
    dlogits(r, y) -= 1.0;
  }
  out.loss = loss / static_cast<double>(batch);
  if (!std::isfinite(out.loss)) {
    throw Error("net", "non_finite_loss", "non-finite loss in batch " + std::to_string(batch_index));
  }
  dlogits /= static_cast<double>(batch);

  FearNetParams& g = out.gradients;
  g = p.zeros_like();

  Mat dropped = tr.mask.size() ? tr.hidden.cwiseProduct(tr.mask) : tr.hidden;
  g.fc2_w.noalias() = dropped.transpose() * dlogits;
  g.fc2_b = dlogits.colwise().sum();
  Mat dhidden = dlogits * p.fc2_w.transpose();
  if (tr.mask.size()) dhidden = dhidden.cwiseProduct(tr.mask);
  const Mat dz1 = (dhidden.array() * (1.0 - tr.hidden.array().square())).matrix();
  g.fc1_w.noalias() = tr.context.transpose() * dz1;
  g.fc1_b = dz1.colwise().sum();
  const Mat dcontext = dz1 * p.fc1_w.transpose();

  std::vector<Mat> dstates(len, Mat::Zero(batch, cfg.state_dim()));
  if (cfg.attention) {
    // d ctx / d O_t = a_t; d ctx / d a_t = O_t.
    Mat dweights(batch, static_cast<Eigen::Index>(len));
    for (std::size_t t = 0; t < len; ++t) {
      const auto col = static_cast<Eigen::Index>(t);
      dstates[t] += tr.weights.col(col).asDiagonal() * dcontext;
      dweights.col(col) = dcontext.cwiseProduct(tr.states[t]).rowwise().sum();
    }
    // Softmax Jacobian: ds_t = a_t (da_t - sum_k a_k da_k).
    const Eigen::VectorXd inner = tr.weights.cwiseProduct(dweights).rowwise().sum();
    const Mat dscores = tr.weights.cwiseProduct(dweights.colwise() - inner);
    for (std::size_t t = 0; t < len; ++t) {
      const Mat ds = dscores.col(static_cast<Eigen::Index>(t));
      g.attention_proj.noalias() += tr.u[t].transpose() * ds;
      const Mat du = ds * p.attention_proj.transpose();
      const Mat dpre = (du.array() * (1.0 - tr.u[t].array().square())).matrix();
      g.attention_w.noalias() += tr.states[t].transpose() * dpre;
      dstates[t].noalias() += dpre * p.attention_w.transpose();
    }
  } else if (cfg.bidirectional) {
    dstates[len - 1].leftCols(h) += dcontext.leftCols(h);
    dstates[0].rightCols(h) += dcontext.rightCols(h);
  } else {
    dstates[len - 1] += dcontext;
  }

  std::vector<Mat> dh(len);
  for (std::size_t t = 0; t < len; ++t) dh[t] = dstates[t].leftCols(h);
  backprop_lstm(p.forward, g.forward, tr.fwd, x, dh, false);
  if (cfg.bidirectional) {
    for (std::size_t t = 0; t < len; ++t) dh[t] = dstates[t].rightCols(h);
    backprop_lstm(p.backward, g.backward, tr.bwd, x, dh, true);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Single-sequence views of the forward pass

inline std::vector<Mat> sequence_steps(const Mat& x) {
  std::vector<Mat> steps(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index t = 0; t < x.rows(); ++t) steps[static_cast<std::size_t>(t)] = x.row(t);
  return steps;
}

// BLSTM states for one l x D sequence, as an l x S matrix.
inline Mat blstm_forward(const Mat& x, const FearNetParams& p, const NetConfig& cfg) {
  NetConfig c = cfg;
  c.sequence_length = static_cast<int>(x.rows());
  check_inputs(sequence_steps(x), c);
  const auto steps = sequence_steps(x);
  const LstmTrace fwd = run_lstm(p.forward, steps, false);
  Mat out(x.rows(), cfg.state_dim());
  for (Eigen::Index t = 0; t < x.rows(); ++t) out.row(t).head(cfg.hidden) = fwd.h[static_cast<std::size_t>(t)];
  if (cfg.bidirectional) {
    const LstmTrace bwd = run_lstm(p.backward, steps, true);
    for (Eigen::Index t = 0; t < x.rows(); ++t) out.row(t).tail(cfg.hidden) = bwd.h[static_cast<std::size_t>(t)];
  }
  return out;
}

struct AttentionTrace {
  std::vector<double> raw_scores;
  std::vector<double> weights;
  std::vector<double> context;
};

inline AttentionTrace attention(const Mat& states, const FearNetParams& p) {
  if (states.cols() != p.attention_w.rows() || p.attention_proj.rows() != p.attention_w.cols()) {
    throw Error("net", "shape_mismatch", "attention weights do not match state width");
  }
  const Eigen::Index len = states.rows();
  const Mat u = (states * p.attention_w).array().tanh().matrix();
  const Eigen::VectorXd scores = u * p.attention_proj;
  const Mat w = detail::softmax_rows(scores.transpose());
  const Eigen::RowVectorXd ctx = w * states;
  AttentionTrace tr;
  tr.raw_scores.assign(scores.data(), scores.data() + len);
  tr.weights.assign(w.data(), w.data() + len);
  tr.context.assign(ctx.data(), ctx.data() + ctx.size());
  return tr;
}

struct ClassifierOutput {
  std::vector<double> logits;
  std::vector<double> probabilities;
};

inline ClassifierOutput classify(std::span<const double> context, const FearNetParams& p, const NetConfig& cfg,
                                 Rng* dropout_rng = nullptr) {
  if (static_cast<Eigen::Index>(context.size()) != p.fc1_w.rows()) {
    throw Error("net", "shape_mismatch", "context width does not match classifier input");
  }
  const Eigen::Map<const Eigen::RowVectorXd> ctx(context.data(), static_cast<Eigen::Index>(context.size()));
  Eigen::RowVectorXd hidden = ((ctx * p.fc1_w) + p.fc1_b.row(0)).array().tanh().matrix();
  if (dropout_rng != nullptr && cfg.dropout > 0.0) {
    const double keep_scale = 1.0 / (1.0 - cfg.dropout);
    for (Eigen::Index c = 0; c < hidden.size(); ++c) hidden(c) *= dropout_rng->uniform() < cfg.dropout ? 0.0 : keep_scale;
  }
  const Eigen::RowVectorXd logits = hidden * p.fc2_w + p.fc2_b.row(0);
  const Mat probs = detail::softmax_rows(logits);
  ClassifierOutput out;
  out.logits.assign(logits.data(), logits.data() + logits.size());
  out.probabilities.assign(probs.data(), probs.data() + probs.size());
  return out;
}

// ---------------------------------------------------------------------------
// Sample sources and batching

// Anything that can hand out fixed-length sequences: `fill` writes sample i as
// a row-major (sequence_length x input_dim) block; `target` is its fear level.
template <class S>
concept SampleSource = requires(const S& s, std::size_t i, std::span<double> out) {
  { s.size() } -> std::convertible_to<std::size_t>;
  { s.target(i) } -> std::convertible_to<int>;
  s.fill(i, out);
};

struct Batch {
  std::vector<Mat> steps;    // l matrices of batch x D
  std::vector<int> targets;  // class indices
};

template <SampleSource S>
Batch make_batch(const S& source, std::span<const std::size_t> indices, const NetConfig& cfg) {
  Batch b;
  const auto n = static_cast<Eigen::Index>(indices.size());
  b.steps.assign(static_cast<std::size_t>(cfg.sequence_length), Mat(n, cfg.input_dim));
  std::vector<double> buf(static_cast<std::size_t>(cfg.sequence_length) * static_cast<std::size_t>(cfg.input_dim));
  for (Eigen::Index r = 0; r < n; ++r) {
    const std::size_t idx = indices[static_cast<std::size_t>(r)];
    source.fill(idx, buf);
    for (int t = 0; t < cfg.sequence_length; ++t)
      for (int d = 0; d < cfg.input_dim; ++d)
        b.steps[static_cast<std::size_t>(t)](r, d) = buf[static_cast<std::size_t>(t * cfg.input_dim + d)];
    b.targets.push_back(class_index(source.target(idx), cfg.classes));
  }
  return b;
}

// Argmax with ties resolved toward the lower class.
inline int argmax_lowest(std::span<const double> v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

template <SampleSource S>
std::vector<int> predict_classes(const S& source, const FearNetParams& p, const NetConfig& cfg,
                                 std::size_t batch_size = 256) {
  std::vector<int> out;
  out.reserve(source.size());
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < source.size(); begin += batch_size) {
    idx.resize(std::min(batch_size, source.size() - begin));
    std::iota(idx.begin(), idx.end(), begin);
    const Batch b = make_batch(source, idx, cfg);
    const ForwardTrace tr = forward(b.steps, p, cfg);
    for (Eigen::Index r = 0; r < tr.probs.rows(); ++r) {
      const Eigen::RowVectorXd row = tr.probs.row(r);
      out.push_back(argmax_lowest(std::span<const double>(row.data(), static_cast<std::size_t>(row.size()))));
    }
  }
  return out;
}

template <SampleSource S>
double accuracy_on(const S& source, const FearNetParams& p, const NetConfig& cfg) {
  if (source.size() == 0) return 0.0;
  const auto preds = predict_classes(source, p, cfg);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == class_index(source.target(i), cfg.classes);
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

struct Prediction {
  int label = 0;  // class index: the fear level for 6 classes, fear/non-fear for 2
  std::vector<double> probabilities;
  AttentionTrace attention;
};

inline Prediction predict(const Mat& window, const FearNetParams& p, const NetConfig& cfg) {
  if (window.rows() != cfg.sequence_length || window.cols() != cfg.input_dim) {
    throw Error("net", "shape_mismatch",
                "window must be " + std::to_string(cfg.sequence_length) + "x" + std::to_string(cfg.input_dim));
  }
  const ForwardTrace tr = forward(sequence_steps(window), p, cfg);
  Prediction out;
  out.probabilities.assign(tr.probs.data(), tr.probs.data() + tr.probs.size());
  out.label = argmax_lowest(out.probabilities);
  if (cfg.attention) {
    out.attention.raw_scores.assign(tr.scores.data(), tr.scores.data() + tr.scores.size());
    out.attention.weights.assign(tr.weights.data(), tr.weights.data() + tr.weights.size());
  }
  out.attention.context.assign(tr.context.data(), tr.context.data() + tr.context.size());
  return out;
}

// ---------------------------------------------------------------------------
// Training

class Adam {
 public:
  Adam(const FearNetParams& like, const NetConfig& cfg)
      : m_(like.zeros_like()), v_(like.zeros_like()), cfg_(cfg) {}

  void step(FearNetParams& p, const FearNetParams& g) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.adam_beta1, t_);
    const double c2 = 1.0 - std::pow(cfg_.adam_beta2, t_);
    auto pt = p.tensors();
    const auto gt = g.tensors();
    auto mt = m_.tensors();
    auto vt = v_.tensors();
    for (std::size_t k = 0; k < pt.size(); ++k) {
      Mat& m = *mt[k].second;
      Mat& v = *vt[k].second;
      const Mat& grad = *gt[k].second;
      m = cfg_.adam_beta1 * m + (1.0 - cfg_.adam_beta1) * grad;
      v = cfg_.adam_beta2 * v + (1.0 - cfg_.adam_beta2) * grad.cwiseAbs2();
      if (cfg_.learning_rate == 0.0) continue;
      pt[k].second->array() -=
          cfg_.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.adam_epsilon);
    }
  }

 private:
  FearNetParams m_;
  FearNetParams v_;
  NetConfig cfg_;
  int t_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double val_accuracy = 0.0;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& message, std::vector<EpochRecord> history)
      : Error("net", "diverged", message), history_(std::move(history)) {}
  const std::vector<EpochRecord>& history() const noexcept { return history_; }

 private:
  std::vector<EpochRecord> history_;
};

struct TrainResult {
  FearNetParams params;  // best validation accuracy, earliest epoch on ties
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_accuracy = -1.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

template <SampleSource S>
TrainResult train(const S& train_set, const S& val_set, const NetConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_set.size() == 0 || val_set.size() == 0) {
    throw Error("net", "empty_split", "training and validation sets must be nonempty");
  }
  Rng rng(cfg.seed);
  FearNetParams params = init_params(cfg, rng);
  Adam adam(params, cfg);
  TrainResult result;
  result.params = params;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::int64_t batch_counter = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t n = std::min(static_cast<std::size_t>(cfg.batch_size), order.size() - begin);
      const Batch batch = make_batch(train_set, std::span<const std::size_t>(order).subspan(begin, n), cfg);
      LossAndGradients lg;
      try {
        lg = loss_and_gradients(batch.steps, batch.targets, params, cfg, &rng, batch_counter);
      } catch (const Error& e) {
        if (e.code() == "non_finite_loss") throw TrainingDiverged(e.what(), result.history);
        throw;
      }
      ++batch_counter;
      adam.step(params, lg.gradients);
      if (!params.all_finite()) {
        throw TrainingDiverged("non-finite parameters after batch " + std::to_string(batch_counter - 1),
                               result.history);
      }
      loss_sum += lg.loss * static_cast<double>(n);
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(order.size()), accuracy_on(val_set, params, cfg)};
    result.history.push_back(rec);
    if (rec.val_accuracy > result.best_val_accuracy) {
      result.best_val_accuracy = rec.val_accuracy;
      result.best_epoch = epoch;
      result.params = params;
    }
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  static constexpr int kSchemaVersion = 1;
  NetConfig config;
  FearNetParams params;
  nlohmann::json normalization;  // opaque to the net; stored for inference
  std::string config_hash;
};

inline nlohmann::json checkpoint_to_json(const Checkpoint& c) {
  nlohmann::json tensors = nlohmann::json::object();
  for (const auto& [name, m] : c.params.tensors()) {
    std::vector<double> data(static_cast<std::size_t>(m->size()));
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(data.data(), m->rows(),
                                                                                        m->cols()) = *m;
    tensors[std::string(name)] = {{"shape", {m->rows(), m->cols()}}, {"data", data}};
  }
  return {{"schema_version", Checkpoint::kSchemaVersion},
          {"config", c.config},
          {"normalization", c.normalization},
          {"config_hash", c.config_hash},
          {"params", tensors}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema_version").get<int>() != Checkpoint::kSchemaVersion) {
      throw Error("net", "schema_version", "unsupported checkpoint schema_version");
    }
    Checkpoint c;
    c.config = j.at("config").get<NetConfig>();
    c.config.validate();
    c.normalization = j.value("normalization", nlohmann::json());
    c.config_hash = j.value("config_hash", std::string());
    Rng rng(0);
    c.params = init_params(c.config, rng);
    const auto& tensors = j.at("params");
    for (auto& [name, m] : c.params.tensors()) {
      const auto& t = tensors.at(std::string(name));
      const auto shape = t.at("shape").get<std::vector<Eigen::Index>>();
      const auto data = t.at("data").get<std::vector<double>>();
      if (shape.size() != 2 || shape[0] != m->rows() || shape[1] != m->cols() ||
          static_cast<Eigen::Index>(data.size()) != m->size()) {
        throw Error("net", "shape_mismatch", "checkpoint tensor " + std::string(name) + " has the wrong shape");
      }
      *m = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(data.data(),
                                                                                                   shape[0], shape[1]);
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error("net", "invalid_checkpoint", std::string("checkpoint: ") + e.what());
  }
}

}  // namespace vrfear
