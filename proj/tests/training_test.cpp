#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "cellgraph/training.hpp"

using namespace cellgraph;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.f = 3;
  c.g = 4;
  c.h = 4;
  c.d_a = 3;
  c.n = 3;
  c.t = 4;
  return c;
}

ModelConfig gradcheck_config() {
  ModelConfig c;
  c.t = 4;
  c.n = 3;
  c.f = 5;
  c.g = 6;
  c.h = 6;
  c.d_a = 4;
  return c;
}

Dataset random_dataset(const ModelConfig& c, std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Dataset out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(random_sequence(c, rng, "seq-" + std::to_string(i)));
  return out;
}

Prediction uniform_prediction(std::size_t n) { return Prediction{Matrix(n, 2, 0.5), Matrix(), Matrix()}; }

}  // namespace

TEST(CrossEntropy, Examples) {
  EXPECT_EQ(node_cross_entropy(std::vector<double>{1.0, 0.0}, 0, 1.0), 0.0);
  EXPECT_NEAR(node_cross_entropy(std::vector<double>{0.5, 0.5}, 0, 1.0), 0.693147180559945, 1e-12);
  EXPECT_NEAR(node_cross_entropy(std::vector<double>{0.5, 0.5}, 1, 1.0), 0.693147180559945, 1e-12);
  EXPECT_NEAR(node_cross_entropy(std::vector<double>{0.0, 1.0}, 0, 1.0), 27.631021115928547, 1e-9);
  EXPECT_NEAR(node_cross_entropy(std::vector<double>{0.5, 0.5}, 1, 3.0), 3.0 * std::log(2.0), 1e-12);
  EXPECT_THROW(node_cross_entropy(std::vector<double>{0.5, 0.5}, 2, 1.0), DomainError);
  EXPECT_THROW(node_cross_entropy(std::vector<double>{0.5, 0.6}, 0, 1.0), DomainError);
}

TEST(SequenceLoss, Examples) {
  std::vector<Matrix> raw(2, Matrix(2, 1, 1.0));
  const auto seq = pad_sequence("v", raw, {CellState::alive, CellState::dead}, 3);
  TrainConfig cfg;
  EXPECT_NEAR(sequence_loss(uniform_prediction(3), seq, cfg), 3.0 * std::log(2.0), 1e-12);
  cfg.include_padded_in_loss = false;
  EXPECT_NEAR(sequence_loss(uniform_prediction(3), seq, cfg), 2.0 * std::log(2.0), 1e-12);

  Prediction perfect{Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}, {1.0, 0.0}}), Matrix(), Matrix()};
  EXPECT_EQ(sequence_loss(perfect, seq, TrainConfig{}), 0.0);
}

TEST(SequenceLoss, ExcludingPaddedNeverIncreases) {
  const ModelConfig c = tiny_config();
  const ModelParams p = init_params(c, 3);
  TrainConfig with, without;
  without.include_padded_in_loss = false;
  for (const auto& seq : random_dataset(c, 30, 4)) {
    const auto pred = forward(seq, p, c);
    const double a = sequence_loss(pred, seq, with), b = sequence_loss(pred, seq, without);
    EXPECT_GE(b, 0.0);
    EXPECT_LE(b, a);
  }
}

TEST(SequenceLoss, TapeAgreesWithValue) {
  const ModelConfig c = tiny_config();
  const ModelParams p = init_params(c, 5);
  TrainConfig cfg;
  cfg.death_class_weight = 2.5;
  for (const auto& seq : random_dataset(c, 10, 6)) {
    const double direct = sequence_loss(forward(seq, p, c), seq, cfg);
    EXPECT_NEAR(loss_and_grads(seq, p, c, cfg).loss, direct, 1e-12);
  }
}

TEST(Adam, ZeroGradientLeavesParams) {
  const ModelConfig c = tiny_config();
  ModelParams p = init_params(c, 1);
  const ModelParams before = p;
  AdamState s = adam_init(p);
  adam_step(p, zero_params(c), s, TrainConfig{});
  EXPECT_EQ(p, before);
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  const ModelConfig c = tiny_config();
  ModelParams p = init_params(c, 2);
  const ModelParams before = p;
  ModelParams g = init_params(c, 99);
  AdamState s = adam_init(p);
  TrainConfig cfg;
  adam_step(p, g, s, cfg);
  const auto pb = flatten_params(before), pa = flatten_params(p), gg = flatten_params(g);
  for (std::size_t k = 0; k < pa.size(); ++k)
    for (std::size_t i = 0; i < pa[k].size(); ++i) {
      const double gi = gg[k].values()[i];
      const double step = pa[k].values()[i] - pb[k].values()[i];
      const double expected = -cfg.learning_rate * gi / (std::abs(gi) + cfg.adam_eps);
      EXPECT_NEAR(step, expected, 1e-15);
    }
}

TEST(Adam, TwoStepsMatchScriptedReference) {
  // Quadratic 0.5 * sum(a_i p_i^2); gradient a_i p_i.
  const ModelConfig c = tiny_config();
  ModelParams p = init_params(c, 7);
  auto flat = flatten_params(p);
  std::vector<double> x, a;
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> curvature(0.5, 4.0);
  for (const auto& m : flat)
    for (double v : m.values()) {
      x.push_back(v);
      a.push_back(curvature(rng));
    }

  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  std::vector<double> m(x.size(), 0.0), v(x.size(), 0.0), ref = x;
  for (int t = 1; t <= 2; ++t) {
    for (std::size_t i = 0; i < ref.size(); ++i) {
      const double g = a[i] * ref[i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1.0 - std::pow(0.9, t));
      const double vh = v[i] / (1.0 - std::pow(0.999, t));
      ref[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    }
  }

  AdamState s = adam_init(p);
  for (int t = 0; t < 2; ++t) {
    auto grads = flatten_params(p);
    std::size_t idx = 0;
    for (auto& mat : grads)
      for (double& e : mat.values()) {
        e *= a[idx];
        ++idx;
      }
    adam_step(p, unflatten_params(grads, false), s, cfg);
  }
  std::size_t idx = 0;
  for (const auto& mat : flatten_params(p))
    for (double e : mat.values()) EXPECT_NEAR(e, ref[idx++], 1e-12);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  const ModelConfig c = tiny_config();
  ModelParams p = init_params(c, 1);
  const ModelParams before = p;
  ModelParams g = zero_params(c);
  g.b_c(0, 1) = std::numeric_limits<double>::quiet_NaN();
  AdamState s = adam_init(p);
  try {
    adam_step(p, g, s, TrainConfig{});
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("b_c"), std::string::npos);
  }
  EXPECT_EQ(p, before);
  EXPECT_EQ(s.step, 0u);
}

TEST(Train, ZeroEpochsReturnsInit) {
  const ModelConfig c = tiny_config();
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 17;
  const auto r = train(random_dataset(c, 4, 1), c, cfg);
  EXPECT_EQ(r.params, init_params(c, 17));
  EXPECT_TRUE(r.history.mean_loss.empty());
}

TEST(Train, BitwiseDeterministic) {
  const ModelConfig c = tiny_config();
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 4;
  const auto data = random_dataset(c, 6, 2);
  const auto a = train(data, c, cfg), b = train(data, c, cfg);
  const auto fa = flatten_params(a.params), fb = flatten_params(b.params);
  for (std::size_t k = 0; k < fa.size(); ++k) EXPECT_TRUE(bitwise_equal(fa[k], fb[k]));
  EXPECT_EQ(a.history.mean_loss, b.history.mean_loss);
  EXPECT_EQ(a.history.mean_loss.size(), 3u);
}

TEST(Train, InvariantToFileOrder) {
  const ModelConfig c = tiny_config();
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch = 2;
  auto data = random_dataset(c, 5, 3);
  const auto a = train(data, c, cfg);
  std::reverse(data.begin(), data.end());
  const auto b = train(data, c, cfg);
  EXPECT_EQ(a.params, b.params);
}

TEST(Train, DimensionMismatchRejectedUpFront) {
  ModelConfig c = tiny_config();
  const auto data = random_dataset(c, 2, 3);
  c.f += 1;
  EXPECT_THROW(train(data, c, TrainConfig{}), ValidationError);
}

TEST(Train, LossDecreasesOnLearnableData) {
  // Dead cells carry a constant offset in every frame.
  ModelConfig c = tiny_config();
  std::mt19937_64 rng(5);
  std::normal_distribution<double> noise(0.0, 0.3);
  std::bernoulli_distribution coin(0.5);
  Dataset data;
  for (int i = 0; i < 20; ++i) {
    std::vector<CellState> labels(3);
    for (auto& l : labels) l = coin(rng) ? CellState::dead : CellState::alive;
    std::vector<Matrix> raw(c.t, Matrix(3, c.f));
    for (auto& x : raw)
      for (std::size_t v = 0; v < 3; ++v)
        for (std::size_t j = 0; j < c.f; ++j) x(v, j) = noise(rng) + (labels[v] == CellState::dead ? 1.5 : 0.0);
    data.push_back(pad_sequence("s" + std::to_string(i), raw, labels, 3));
  }
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.learning_rate = 1e-2;
  const auto r = train(data, c, cfg);
  EXPECT_LT(r.history.mean_loss.back(), r.history.mean_loss.front());
}

TEST(Train, ValidationHistoryAndLogLine) {
  const ModelConfig c = tiny_config();
  TrainConfig cfg;
  cfg.epochs = 2;
  const auto data = random_dataset(c, 3, 9), val = random_dataset(c, 2, 10);
  std::vector<std::string> lines;
  const auto r = train(data, c, cfg, &val,
                       [&](std::size_t e, const TrainHistory& h) { lines.push_back(epoch_log_line(e, h)); });
  ASSERT_EQ(r.history.validation.size(), 2u);
  ASSERT_TRUE(r.history.validation[1].has_value());
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(lines[0].substr(0, 2), "1\t");
  EXPECT_EQ(std::count(lines[1].begin(), lines[1].end(), '\t'), 2);

  const auto r2 = train(data, c, cfg);
  EXPECT_EQ(epoch_log_line(0, r2.history).substr(epoch_log_line(0, r2.history).size() - 2), "\t-");
}

TEST(Flatten, RoundTripsBothLayouts) {
  ModelConfig c = tiny_config();
  const ModelParams p1 = init_params(c, 1);
  EXPECT_EQ(unflatten_params(flatten_params(p1), false), p1);
  c.gc_layers = 2;
  const ModelParams p2 = init_params(c, 1);
  EXPECT_EQ(unflatten_params(flatten_params(p2), true), p2);
  EXPECT_EQ(param_names(p2).size(), param_names(p1).size() + 1);
}

class GradCheck : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(GradCheck, EndToEndWithinTolerance) {
  const auto report = grad_check_model(gradcheck_config(), GetParam(), 1e-5, 1e-4);
  EXPECT_TRUE(report.pass) << report.max_rel_err << " at " << report.worst_parameter;
  EXPECT_GT(report.coordinates, 300u);
}

TEST_P(GradCheck, HeadOnly) {
  const auto report = grad_check_model(gradcheck_config(), GetParam(), 1e-5, 1e-4, GradScope::head_only);
  EXPECT_TRUE(report.pass) << report.max_rel_err << " at " << report.worst_parameter;
  EXPECT_EQ(report.coordinates, 2u * 6u + 2u);
}

INSTANTIATE_TEST_SUITE_P(Seeds, GradCheck, ::testing::Values(1u, 2u, 3u, 4u, 5u));

TEST(GradCheckVariants, TwoLayerAndTanhScorer) {
  ModelConfig c = gradcheck_config();
  c.gc_layers = 2;
  c.attention_tanh = true;
  c.isolate_padded = true;
  const auto report = grad_check_model(c, 11, 1e-5, 1e-4);
  EXPECT_TRUE(report.pass) << report.max_rel_err << " at " << report.worst_parameter;
}

TEST(GradCheckVariants, InfiniteToleranceAlwaysPasses) {
  const auto report = grad_check_model(gradcheck_config(), 1, 1e-5, std::numeric_limits<double>::infinity());
  EXPECT_TRUE(report.pass);
  EXPECT_GE(report.max_rel_err, 0.0);
  EXPECT_THROW(grad_check_model(gradcheck_config(), 1, 0.0, 1e-4), DomainError);
}
