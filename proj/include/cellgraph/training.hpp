#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "cellgraph/diffmath.hpp"
#include "cellgraph/graph.hpp"
#include "cellgraph/metrics.hpp"
#include "cellgraph/model.hpp"

namespace cellgraph {

inline constexpr double kProbabilityFloor = 1e-12;

struct TrainConfig {
  std::size_t epochs = 60;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch = 1;
  std::uint64_t seed = 0;
  bool include_padded_in_loss = true;
  double death_class_weight = 1.0;
  bool shuffle = true;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw ValidationError("train config: learning_rate must be positive");
    }
    if (batch == 0) throw ValidationError("train config: batch must be at least 1");
    if (!(death_class_weight >= 0.0)) throw ValidationError("train config: death_class_weight must be >= 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
      throw ValidationError("train config: adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw ValidationError("train config: adam_eps must be positive");
  }

  bool operator==(const TrainConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Loss

inline double class_weight(CellState label, double weight_dead) {
  return label == CellState::dead ? weight_dead : 1.0;
}

/// -w log(max(p[label], 1e-12)).
inline double node_cross_entropy(std::span<const double> probs, int label, double weight_dead) {
  if (label != 0 && label != 1) throw DomainError("node_cross_entropy: label " + std::to_string(label) + " not in {0, 1}");
  if (probs.size() != 2) throw ShapeError("node_cross_entropy: expected two class probabilities");
  if (std::abs(probs[0] + probs[1] - 1.0) > 1e-6) throw DomainError("node_cross_entropy: probabilities do not sum to 1");
  const double w = class_weight(static_cast<CellState>(label), weight_dead);
  return -w * std::log(std::max(probs[static_cast<std::size_t>(label)], kProbabilityFloor));
}

inline bool scored(const STGraphSequence& seq, std::size_t node, const TrainConfig& cfg) {
  return cfg.include_padded_in_loss || seq.mask[node] != 0;
}

/// Sum of per-node cross entropies over the scored node slots.
inline double sequence_loss(const Prediction& pred, const STGraphSequence& seq, const TrainConfig& cfg) {
  if (pred.probs.rows() != seq.nodes()) throw ShapeError("sequence_loss: prediction and sequence node counts differ");
  double total = 0.0;
  for (std::size_t v = 0; v < seq.nodes(); ++v) {
    if (!scored(seq, v, cfg)) continue;
    total += node_cross_entropy(pred.probs.row(v), to_int(seq.labels[v]), cfg.death_class_weight);
  }
  return total;
}

inline Var sequence_loss(Tape& tape, Var probs, const STGraphSequence& seq, const TrainConfig& cfg) {
  if (probs.value().rows() != seq.nodes()) throw ShapeError("sequence_loss: prediction and sequence node counts differ");
  Var total = tape.leaf(Matrix(1, 1));
  for (std::size_t v = 0; v < seq.nodes(); ++v) {
    if (!scored(seq, v, cfg)) continue;
    const auto label = seq.labels[v];
    Var p = element(probs, v, static_cast<std::size_t>(to_int(label)));
    total = add(total, scale(log_clamped(p, kProbabilityFloor), -class_weight(label, cfg.death_class_weight)));
  }
  return total;
}

struct LossAndGrads {
  double loss = 0.0;
  ModelParams grads;
};

inline LossAndGrads loss_and_grads(const STGraphSequence& seq, const ModelParams& params, const ModelConfig& mcfg,
                                   const TrainConfig& tcfg) {
  Tape tape;
  ParamVars p = record_params(tape, params);
  auto out = forward(tape, seq, p, mcfg);
  Var loss = sequence_loss(tape, out.probs, seq, tcfg);
  const Gradients grads = backward(tape, loss);
  return {loss.value()(0, 0), collect_grads(grads, p)};
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  ModelParams m;
  ModelParams v;
  std::uint64_t step = 0;
};

inline AdamState adam_init(const ModelParams& params) {
  AdamState s;
  s.m = params;
  for_each_param(s.m, [](std::string_view, Matrix& x) { std::fill(x.values().begin(), x.values().end(), 0.0); });
  s.v = s.m;
  return s;
}

/// One bias-corrected Adam update, in place. Throws NumericError naming the
/// first parameter with a non-finite gradient; nothing is modified then.
inline void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, const TrainConfig& cfg) {
  std::vector<Matrix*> ps, ms, vs;
  std::vector<const Matrix*> gs;
  std::vector<std::string> names;
  for_each_param(params, [&](std::string_view name, Matrix& x) {
    ps.push_back(&x);
    names.emplace_back(name);
  });
  for_each_param(grads, [&](std::string_view, const Matrix& x) { gs.push_back(&x); });
  for_each_param(state.m, [&](std::string_view, Matrix& x) { ms.push_back(&x); });
  for_each_param(state.v, [&](std::string_view, Matrix& x) { vs.push_back(&x); });
  if (gs.size() != ps.size() || ms.size() != ps.size() || vs.size() != ps.size()) {
    throw ShapeError("adam_step: parameter, gradient and state layouts differ");
  }
  for (std::size_t k = 0; k < ps.size(); ++k) {
    if (!gs[k]->same_shape(*ps[k]) || !ms[k]->same_shape(*ps[k]) || !vs[k]->same_shape(*ps[k])) {
      throw ShapeError("adam_step: gradient of " + names[k] + " is " + gs[k]->shape_string() + ", parameter is " +
                       ps[k]->shape_string());
    }
    if (!gs[k]->all_finite()) throw NumericError("adam_step: non-finite gradient for " + names[k]);
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, t);
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, t);
  for (std::size_t k = 0; k < ps.size(); ++k) {
    auto p = ps[k]->values();
    auto g = gs[k]->values();
    auto m = ms[k]->values();
    auto v = vs[k]->values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g[i];
      v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Evaluation and training

using Dataset = std::vector<STGraphSequence>;

/// Indices of `data` ordered by sequence id (ties keep file order).
inline std::vector<std::size_t> id_order(const Dataset& data) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return data[a].id < data[b].id; });
  return order;
}

/// Runs fn(i) for i in [0, count) on up to `workers` threads.
template <class F>
void parallel_for(std::size_t count, std::size_t workers, F&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < count; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline void check_dataset(const Dataset& data, const ModelConfig& mcfg) {
  for (const auto& seq : data) {
    if (seq.nodes() != mcfg.n || seq.frames() != mcfg.t || seq.feature_dim() != mcfg.f) {
      throw ValidationError("sequence '" + seq.id + "' has t=" + std::to_string(seq.frames()) +
                            " n=" + std::to_string(seq.nodes()) + " f=" + std::to_string(seq.feature_dim()) +
                            ", model expects t=" + std::to_string(mcfg.t) + " n=" + std::to_string(mcfg.n) +
                            " f=" + std::to_string(mcfg.f));
    }
    const auto problems = validate_sequence(seq);
    if (!problems.empty()) throw ValidationError("sequence '" + seq.id + "': " + problems.front());
  }
}

/// Forward passes for every sequence (optionally threaded), returned in dataset order.
inline std::vector<Prediction> predict_all(const Dataset& data, const ModelParams& params, const ModelConfig& mcfg,
                                           std::size_t workers = 1) {
  std::vector<Prediction> preds(data.size());
  parallel_for(data.size(), workers, [&](std::size_t i) { preds[i] = forward(data[i], params, mcfg); });
  return preds;
}

/// Confusions and losses folded in sequence-id order, so the report does not
/// depend on the worker count or file order.
inline MetricsReport evaluate(const Dataset& data, const ModelParams& params, const ModelConfig& mcfg,
                              const TrainConfig& tcfg, std::size_t workers = 1) {
  if (data.empty()) throw DomainError("evaluate: empty dataset");
  check_dataset(data, mcfg);
  const auto preds = predict_all(data, params, mcfg, workers);
  std::vector<NodeConfusion> confusion(mcfg.n);
  std::vector<double> losses;
  for (std::size_t i : id_order(data)) {
    const auto& seq = data[i];
    for (std::size_t v = 0; v < seq.nodes(); ++v) {
      accumulate(confusion, v, hard_decision(preds[i].probs.row(v)), seq.labels[v]);
    }
    losses.push_back(sequence_loss(preds[i], seq, tcfg));
  }
  return finalize(confusion, losses);
}

struct TrainHistory {
  std::vector<double> mean_loss;
  std::vector<std::optional<MetricsReport>> validation;
};

struct TrainResult {
  ModelParams params;
  TrainHistory history;
};

/// Tab-separated epoch log line: epoch, mean training loss, validation
/// accuracy ("-" without a validation set).
inline std::string epoch_log_line(std::size_t epoch, const TrainHistory& h) {
  nlohmann::json loss = h.mean_loss[epoch];
  std::string line = std::to_string(epoch + 1) + "\t" + loss.dump() + "\t";
  const auto& val = h.validation[epoch];
  line += val ? nlohmann::json(val->average_accuracy).dump() : std::string("-");
  return line;
}

using EpochCallback = std::function<void(std::size_t epoch, const TrainHistory&)>;

/// Deterministic given (data as a set, configs): sequences are first put in
/// id order, then shuffled each epoch by a generator seeded from cfg.seed.
inline TrainResult train(const Dataset& data, const ModelConfig& mcfg, const TrainConfig& tcfg,
                         const Dataset* validation = nullptr, const EpochCallback& on_epoch = {}) {
  mcfg.validate();
  tcfg.validate();
  if (data.empty()) throw ValidationError("train: empty dataset");
  check_dataset(data, mcfg);
  if (validation != nullptr && !validation->empty()) check_dataset(*validation, mcfg);

  TrainResult result{init_params(mcfg, tcfg.seed), {}};
  AdamState state = adam_init(result.params);
  std::vector<std::size_t> order = id_order(data);
  std::mt19937_64 shuffler(tcfg.seed ^ 0x5deece66dULL);

  for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
    if (tcfg.shuffle) std::shuffle(order.begin(), order.end(), shuffler);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += tcfg.batch) {
      const std::size_t stop = std::min(order.size(), start + tcfg.batch);
      ModelParams batch_grads;
      for (std::size_t k = start; k < stop; ++k) {
        auto lg = loss_and_grads(data[order[k]], result.params, mcfg, tcfg);
        loss_sum += lg.loss;
        if (k == start) {
          batch_grads = std::move(lg.grads);
        } else {
          std::vector<Matrix*> acc;
          for_each_param(batch_grads, [&](std::string_view, Matrix& m) { acc.push_back(&m); });
          std::size_t idx = 0;
          for_each_param(lg.grads, [&](std::string_view, const Matrix& m) {
            auto dst = acc[idx++]->values();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += m.values()[i];
          });
        }
      }
      if (stop - start > 1) {
        const double inv = 1.0 / static_cast<double>(stop - start);
        for_each_param(batch_grads, [inv](std::string_view, Matrix& m) {
          for (double& x : m.values()) x *= inv;
        });
      }
      adam_step(result.params, batch_grads, state, tcfg);
    }
    result.history.mean_loss.push_back(loss_sum / static_cast<double>(order.size()));
    if (validation != nullptr && !validation->empty()) {
      result.history.validation.push_back(evaluate(*validation, result.params, mcfg, tcfg));
    } else {
      result.history.validation.push_back(std::nullopt);
    }
    if (on_epoch) on_epoch(epoch, result.history);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Model-level gradient check

inline std::vector<Matrix> flatten_params(const ModelParams& p) {
  std::vector<Matrix> out;
  for_each_param(p, [&](std::string_view, const Matrix& m) { out.push_back(m); });
  return out;
}

inline ModelParams unflatten_params(std::span<const Matrix> flat, bool two_layer) {
  ModelParams p;
  if (two_layer) p.w_g2 = Matrix(1, 1);  // placeholder so for_each_param visits it
  std::size_t i = 0;
  for_each_param(p, [&](std::string_view, Matrix& m) {
    if (i >= flat.size()) throw ShapeError("unflatten_params: too few tensors");
    m = flat[i++];
  });
  if (i != flat.size()) throw ShapeError("unflatten_params: too many tensors");
  return p;
}

inline std::vector<std::string> param_names(const ModelParams& p) {
  std::vector<std::string> out;
  for_each_param(p, [&](std::string_view name, const Matrix&) { out.emplace_back(name); });
  return out;
}

enum class GradScope { all, head_only };

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_parameter;  // "name[i,j]"
  std::size_t coordinates = 0;
  bool pass = false;
};

/// A random padded sequence for config `c`, drawn from `rng`.
inline STGraphSequence random_sequence(const ModelConfig& c, std::mt19937_64& rng, const std::string& id = "random") {
  std::uniform_int_distribution<std::size_t> cells(1, c.n);
  std::uniform_real_distribution<double> feature(-1.0, 1.0);
  std::bernoulli_distribution dead(0.4);
  const std::size_t k = cells(rng);
  std::vector<Matrix> raw;
  for (std::size_t t = 0; t < c.t; ++t) {
    Matrix x(k, c.f);
    for (double& e : x.values()) e = feature(rng);
    raw.push_back(std::move(x));
  }
  std::vector<CellState> labels;
  for (std::size_t v = 0; v < k; ++v) labels.push_back(dead(rng) ? CellState::dead : CellState::alive);
  return pad_sequence(id, raw, labels, c.n);
}

/// Compares reverse-mode gradients of sequence_loss against central
/// differences on one random sequence with random parameters (Glorot
/// weights, biases uniform in [-0.5, 0.5]).
inline GradCheckReport grad_check_model(const ModelConfig& mcfg, std::uint64_t seed, double eps, double tol,
                                        GradScope scope = GradScope::all) {
  mcfg.validate();
  if (!(eps > 0.0)) throw DomainError("grad_check_model: eps must be positive");
  std::mt19937_64 rng(seed);
  ModelParams params = init_params(mcfg, seed);
  std::uniform_real_distribution<double> bias(-0.5, 0.5);
  for (Matrix* b : {&params.b_u, &params.b_r, &params.b_c, &params.b_1, &params.b_2, &params.b_o}) {
    for (double& x : b->values()) x = bias(rng);
  }
  const STGraphSequence seq = random_sequence(mcfg, rng, "gradcheck");
  const TrainConfig tcfg;

  const auto analytic = flatten_params(loss_and_grads(seq, params, mcfg, tcfg).grads);
  const bool two_layer = !params.w_g2.empty();
  const auto names = param_names(params);

  std::vector<std::size_t> which;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (scope == GradScope::all || names[i] == "w_o" || names[i] == "b_o") which.push_back(i);
  }
  ParamFunction f = [&](std::span<const Matrix> flat) {
    const ModelParams p = unflatten_params(flat, two_layer);
    return sequence_loss(forward(seq, p, mcfg), seq, tcfg);
  };
  const auto numeric = finite_diff_grad(f, flatten_params(params), eps, which);

  GradCheckReport report;
  for (std::size_t t : which) {
    const Matrix& a = analytic[t];
    const Matrix& b = numeric[t];
    for (std::size_t i = 0; i < a.rows(); ++i) {
      for (std::size_t j = 0; j < a.cols(); ++j) {
        const double err = relative_error(a(i, j), b(i, j));
        ++report.coordinates;
        if (err > report.max_rel_err || report.worst_parameter.empty()) {
          report.max_rel_err = std::max(report.max_rel_err, err);
          report.worst_parameter = names[t] + "[" + std::to_string(i) + "," + std::to_string(j) + "]";
        }
      }
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace cellgraph
