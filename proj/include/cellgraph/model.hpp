#pragma once

// Attention temporal graph convolutional network:
//   z_t = GC(A, X_t)
//   u_t = sigmoid([z_t, h_{t-1}] W_u + b_u)
//   r_t = sigmoid([z_t, h_{t-1}] W_r + b_r)
//   c_t = tanh([z_t, r_t * h_{t-1}] W_c + b_c)
//   h_t = u_t * h_{t-1} + (1 - u_t) * c_t
// followed, per node, by soft attention over that node's hidden states and a
// two-class softmax head on the resulting context vector.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cellgraph/diffmath.hpp"
#include "cellgraph/graph.hpp"

namespace cellgraph {

struct ModelConfig {
  std::size_t f = 16;   // input feature dim
  std::size_t g = 64;   // graph-conv output dim
  std::size_t h = 64;   // hidden dim
  std::size_t d_a = 32; // attention scorer hidden dim
  std::size_t n = 3;    // node slots
  std::size_t t = 15;   // frames
  int gc_layers = 1;
  bool isolate_padded = false;
  bool attention_tanh = false;  // tanh between the two scorer layers

  void validate() const {
    if (f == 0 || g == 0 || h == 0 || d_a == 0 || n == 0 || t == 0) {
      throw ValidationError("model config: every dimension must be at least 1");
    }
    if (gc_layers != 1 && gc_layers != 2) throw ValidationError("model config: gc_layers must be 1 or 2");
  }

  bool operator==(const ModelConfig&) const = default;
};

struct ModelParams {
  Matrix w_g;   // f x g
  Matrix w_g2;  // g x g, empty unless gc_layers == 2
  Matrix w_u, w_r, w_c;  // (g + h) x h
  Matrix b_u, b_r, b_c;  // 1 x h
  Matrix w_1;  // d_a x h
  Matrix b_1;  // 1 x d_a
  Matrix w_2;  // 1 x d_a
  Matrix b_2;  // 1 x 1
  Matrix w_o;  // 2 x h
  Matrix b_o;  // 1 x 2

  bool operator==(const ModelParams&) const = default;
};

/// Calls f(name, tensor) for every parameter tensor in a fixed order.
/// w_g2 is skipped when empty (single-layer graph conv).
template <class Params, class F>
void for_each_param(Params& p, F&& f) {
  f(std::string_view("w_g"), p.w_g);
  if (!p.w_g2.empty()) f(std::string_view("w_g2"), p.w_g2);
  f(std::string_view("w_u"), p.w_u);
  f(std::string_view("b_u"), p.b_u);
  f(std::string_view("w_r"), p.w_r);
  f(std::string_view("b_r"), p.b_r);
  f(std::string_view("w_c"), p.w_c);
  f(std::string_view("b_c"), p.b_c);
  f(std::string_view("w_1"), p.w_1);
  f(std::string_view("b_1"), p.b_1);
  f(std::string_view("w_2"), p.w_2);
  f(std::string_view("b_2"), p.b_2);
  f(std::string_view("w_o"), p.w_o);
  f(std::string_view("b_o"), p.b_o);
}

inline std::vector<std::pair<std::string, Matrix>> expected_shapes(const ModelConfig& c) {
  std::vector<std::pair<std::string, Matrix>> s;
  auto add = [&](const char* name, std::size_t r, std::size_t k) { s.emplace_back(name, Matrix(r, k)); };
  add("w_g", c.f, c.g);
  if (c.gc_layers == 2) add("w_g2", c.g, c.g);
  add("w_u", c.g + c.h, c.h);
  add("b_u", 1, c.h);
  add("w_r", c.g + c.h, c.h);
  add("b_r", 1, c.h);
  add("w_c", c.g + c.h, c.h);
  add("b_c", 1, c.h);
  add("w_1", c.d_a, c.h);
  add("b_1", 1, c.d_a);
  add("w_2", 1, c.d_a);
  add("b_2", 1, 1);
  add("w_o", 2, c.h);
  add("b_o", 1, 2);
  return s;
}

/// Zero tensors of the right shapes. Also the layout for gradients.
inline ModelParams zero_params(const ModelConfig& c) {
  ModelParams p;
  p.w_g = Matrix(c.f, c.g);
  if (c.gc_layers == 2) p.w_g2 = Matrix(c.g, c.g);
  p.w_u = p.w_r = p.w_c = Matrix(c.g + c.h, c.h);
  p.b_u = p.b_r = p.b_c = Matrix(1, c.h);
  p.w_1 = Matrix(c.d_a, c.h);
  p.b_1 = Matrix(1, c.d_a);
  p.w_2 = Matrix(1, c.d_a);
  p.b_2 = Matrix(1, 1);
  p.w_o = Matrix(2, c.h);
  p.b_o = Matrix(1, 2);
  return p;
}

/// Throws ValidationError naming the first tensor whose shape disagrees with `c`.
inline void check_param_shapes(const ModelParams& p, const ModelConfig& c) {
  const auto expected = expected_shapes(c);
  std::size_t i = 0;
  bool extra = false;
  for_each_param(p, [&](std::string_view name, const Matrix& m) {
    if (i >= expected.size() || expected[i].first != name) {
      extra = true;
      return;
    }
    if (!m.same_shape(expected[i].second)) {
      throw ValidationError("parameter " + std::string(name) + " has shape " + m.shape_string() + ", expected " +
                            expected[i].second.shape_string());
    }
    ++i;
  });
  if (extra || i != expected.size()) {
    throw ValidationError("parameter set does not match gc_layers = " + std::to_string(c.gc_layers));
  }
}

/// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
inline ModelParams init_params(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  ModelParams p = zero_params(c);
  std::mt19937_64 rng(seed);
  auto glorot = [&rng](Matrix& w, std::size_t fan_in, std::size_t fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& x : w.values()) x = dist(rng);
  };
  glorot(p.w_g, c.f, c.g);
  if (c.gc_layers == 2) glorot(p.w_g2, c.g, c.g);
  glorot(p.w_u, c.g + c.h, c.h);
  glorot(p.w_r, c.g + c.h, c.h);
  glorot(p.w_c, c.g + c.h, c.h);
  glorot(p.w_1, c.h, c.d_a);
  glorot(p.w_2, c.d_a, 1);
  glorot(p.w_o, c.h, 2);
  return p;
}

// ---------------------------------------------------------------------------
// Recorded (differentiable) forward pass

/// Parameters recorded as tape leaves.
struct ParamVars {
  Var w_g, w_g2, w_u, w_r, w_c, b_u, b_r, b_c, w_1, b_1, w_2, b_2, w_o, b_o;
  bool two_layer = false;
};

inline ParamVars record_params(Tape& tape, const ModelParams& p) {
  ParamVars v;
  v.w_g = tape.leaf(p.w_g);
  v.two_layer = !p.w_g2.empty();
  if (v.two_layer) v.w_g2 = tape.leaf(p.w_g2);
  v.w_u = tape.leaf(p.w_u);
  v.b_u = tape.leaf(p.b_u);
  v.w_r = tape.leaf(p.w_r);
  v.b_r = tape.leaf(p.b_r);
  v.w_c = tape.leaf(p.w_c);
  v.b_c = tape.leaf(p.b_c);
  v.w_1 = tape.leaf(p.w_1);
  v.b_1 = tape.leaf(p.b_1);
  v.w_2 = tape.leaf(p.w_2);
  v.b_2 = tape.leaf(p.b_2);
  v.w_o = tape.leaf(p.w_o);
  v.b_o = tape.leaf(p.b_o);
  return v;
}

/// Reads the gradient of every recorded parameter into a ModelParams layout.
inline ModelParams collect_grads(const Gradients& grads, const ParamVars& v) {
  ModelParams g;
  g.w_g = grads[v.w_g];
  if (v.two_layer) g.w_g2 = grads[v.w_g2];
  g.w_u = grads[v.w_u];
  g.b_u = grads[v.b_u];
  g.w_r = grads[v.w_r];
  g.b_r = grads[v.b_r];
  g.w_c = grads[v.w_c];
  g.b_c = grads[v.b_c];
  g.w_1 = grads[v.w_1];
  g.b_1 = grads[v.b_1];
  g.w_2 = grads[v.w_2];
  g.b_2 = grads[v.b_2];
  g.w_o = grads[v.w_o];
  g.b_o = grads[v.b_o];
  return g;
}

inline Var graph_conv(Var a_hat, Var x, const ParamVars& p) {
  Var z = matmul(matmul(a_hat, x), p.w_g);
  if (p.two_layer) z = matmul(matmul(a_hat, relu(z)), p.w_g2);
  return z;
}

inline Var tgcn_step(Var a_hat, Var x_t, Var h_prev, Var ones, const ParamVars& p) {
  Var z = graph_conv(a_hat, x_t, p);
  Var zh = concat_cols(z, h_prev);
  Var u = sigmoid(add_row(matmul(zh, p.w_u), p.b_u));
  Var r = sigmoid(add_row(matmul(zh, p.w_r), p.b_r));
  Var c = tanh(add_row(matmul(concat_cols(z, multiply(r, h_prev)), p.w_c), p.b_c));
  return add(multiply(u, h_prev), multiply(subtract(ones, u), c));
}

inline void check_sequence_dims(const STGraphSequence& seq, const ModelConfig& c) {
  if (seq.nodes() != c.n || seq.frames() != c.t || seq.feature_dim() != c.f) {
    throw ShapeError("sequence '" + seq.id + "' has t=" + std::to_string(seq.frames()) +
                     " n=" + std::to_string(seq.nodes()) + " f=" + std::to_string(seq.feature_dim()) +
                     ", model expects t=" + std::to_string(c.t) + " n=" + std::to_string(c.n) +
                     " f=" + std::to_string(c.f));
  }
}

/// Hidden states h_1..h_T (each n x h) from h_0 = 0.
inline std::vector<Var> encode_sequence(Tape& tape, Var a_hat, const std::vector<Matrix>& frames, std::size_t hidden,
                                        const ParamVars& p) {
  const std::size_t n = a_hat.value().rows();
  Var h = tape.leaf(Matrix(n, hidden));
  Var ones = tape.leaf(Matrix::ones(n, hidden));
  std::vector<Var> states;
  states.reserve(frames.size());
  for (const Matrix& x : frames) {
    h = tgcn_step(a_hat, tape.leaf(x), h, ones, p);
    states.push_back(h);
  }
  return states;
}

struct AttentionVars {
  Var contexts;  // n x h
  Var weights;   // n x t
};

/// Per node: scores e_i = w_2 (w_1 h_i + b_1) + b_2 over that node's frames,
/// weights = softmax(e), context = sum_i weight_i h_i. Scorer shared across nodes.
/// A term that is the same for every frame cancels in the softmax, so b_2
/// (and b_1 when the scorer is linear) is left out of the recorded scores.
/// Their gradients are then exactly zero instead of rounding noise.
inline AttentionVars attend(const std::vector<Var>& states, const ParamVars& p, bool scorer_tanh = false) {
  if (states.empty()) throw ShapeError("attend: no hidden states");
  const std::size_t n = states.front().value().rows();
  std::vector<Var> contexts, weights;
  std::vector<Var> rows(states.size());
  Var w1t = transpose(p.w_1);
  Var w2t = transpose(p.w_2);
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t i = 0; i < states.size(); ++i) rows[i] = row(states[i], v);
    Var hv = stack_rows(rows);  // t x h
    Var hidden = matmul(hv, w1t);
    if (scorer_tanh) hidden = tanh(add_row(hidden, p.b_1));
    Var scores = matmul(hidden, w2t);  // t x 1
    Var alpha = softmax_rows(transpose(scores));       // 1 x t
    contexts.push_back(matmul(alpha, hv));
    weights.push_back(alpha);
  }
  return {stack_rows(contexts), stack_rows(weights)};
}

inline Var classify(Var contexts, const ParamVars& p) {
  return softmax_rows(add_row(matmul(contexts, transpose(p.w_o)), p.b_o));
}

struct ForwardVars {
  std::vector<Var> states;
  Var contexts;
  Var weights;
  Var probs;
};

inline ForwardVars forward(Tape& tape, const STGraphSequence& seq, const ParamVars& p, const ModelConfig& c) {
  check_sequence_dims(seq, c);
  Var a_hat = tape.leaf(normalize_adjacency(effective_adjacency(seq, c.isolate_padded)).matrix);
  ForwardVars out;
  out.states = encode_sequence(tape, a_hat, seq.features, c.h, p);
  auto att = attend(out.states, p, c.attention_tanh);
  out.contexts = att.contexts;
  out.weights = att.weights;
  out.probs = classify(att.contexts, p);
  return out;
}

// ---------------------------------------------------------------------------
// Value-level wrappers

using HiddenStates = std::vector<Matrix>;  // [t] of n x h

struct Prediction {
  Matrix probs;              // n x 2, columns (alive, dead)
  Matrix attention_weights;  // n x t
  Matrix contexts;           // n x h
};

inline Matrix graph_conv(const NormalizedAdjacency& a_hat, const Matrix& x, const ModelParams& params) {
  Tape tape;
  ParamVars p = record_params(tape, params);
  return graph_conv(tape.leaf(a_hat.matrix), tape.leaf(x), p).value();
}

inline Matrix tgcn_step(const NormalizedAdjacency& a_hat, const Matrix& x_t, const Matrix& h_prev,
                        const ModelParams& params) {
  Tape tape;
  ParamVars p = record_params(tape, params);
  Var ones = tape.leaf(Matrix::ones(h_prev.rows(), h_prev.cols()));
  return tgcn_step(tape.leaf(a_hat.matrix), tape.leaf(x_t), tape.leaf(h_prev), ones, p).value();
}

inline HiddenStates encode_sequence(const STGraphSequence& seq, const ModelParams& params, const ModelConfig& c) {
  check_sequence_dims(seq, c);
  Tape tape;
  ParamVars p = record_params(tape, params);
  Var a_hat = tape.leaf(normalize_adjacency(effective_adjacency(seq, c.isolate_padded)).matrix);
  HiddenStates out;
  for (Var v : encode_sequence(tape, a_hat, seq.features, c.h, p)) out.push_back(v.value());
  return out;
}

inline std::pair<Matrix, Matrix> attend(const HiddenStates& hidden, const ModelParams& params,
                                        bool scorer_tanh = false) {
  Tape tape;
  ParamVars p = record_params(tape, params);
  std::vector<Var> states;
  for (const Matrix& h : hidden) states.push_back(tape.leaf(h));
  auto att = attend(states, p, scorer_tanh);
  return {att.contexts.value(), att.weights.value()};
}

inline Matrix classify(const Matrix& contexts, const ModelParams& params) {
  Tape tape;
  ParamVars p = record_params(tape, params);
  return classify(tape.leaf(contexts), p).value();
}

inline Prediction forward(const STGraphSequence& seq, const ModelParams& params, const ModelConfig& c) {
  Tape tape;
  ParamVars p = record_params(tape, params);
  auto out = forward(tape, seq, p, c);
  return Prediction{out.probs.value(), out.weights.value(), out.contexts.value()};
}

}  // namespace cellgraph
