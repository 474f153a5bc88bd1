#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "cellgraph/metrics.hpp"

using namespace cellgraph;

namespace {

NodeConfusion counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
  NodeConfusion c;
  c.tp = tp;
  c.fp = fp;
  c.tn = tn;
  c.fn = fn;
  return c;
}

}  // namespace

TEST(HardDecision, Examples) {
  EXPECT_EQ(hard_decision(std::vector<double>{0.9, 0.1}), CellState::alive);
  EXPECT_EQ(hard_decision(std::vector<double>{0.1, 0.9}), CellState::dead);
  EXPECT_EQ(hard_decision(std::vector<double>{0.5, 0.5}), CellState::alive);
}

TEST(Accumulate, HandTally) {
  std::vector<NodeConfusion> c(2);
  accumulate(c, 0, CellState::dead, CellState::dead);
  EXPECT_EQ(c[0], counts(1, 0, 0, 0));
  accumulate(c, 0, CellState::dead, CellState::alive);
  EXPECT_EQ(c[0], counts(1, 1, 0, 0));
  accumulate(c, 1, CellState::alive, CellState::dead);
  accumulate(c, 1, CellState::alive, CellState::alive);
  accumulate(c, 1, CellState::alive, CellState::alive);
  accumulate(c, 0, CellState::alive, CellState::alive);
  EXPECT_EQ(c[0], counts(1, 1, 1, 0));
  EXPECT_EQ(c[1], counts(0, 0, 2, 1));
  EXPECT_EQ(c[0].total() + c[1].total(), 6u);
}

TEST(Finalize, AnalyticCounts) {
  const std::vector<NodeConfusion> c = {counts(3, 3, 93, 1)};
  const auto r = finalize(c, std::vector<double>(100, 0.25));
  EXPECT_DOUBLE_EQ(*r.precision[0], 0.5);
  EXPECT_DOUBLE_EQ(*r.recall[0], 0.75);
  EXPECT_DOUBLE_EQ(r.accuracy[0], 0.96);
  EXPECT_DOUBLE_EQ(r.mean_loss, 0.25);
  EXPECT_EQ(r.sequences, 100u);
}

TEST(Finalize, AllCorrect) {
  const std::vector<NodeConfusion> c = {counts(2, 0, 8, 0), counts(1, 0, 9, 0)};
  const auto r = finalize(c, std::vector<double>(10, 0.0));
  EXPECT_EQ(r.accuracy, (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(r.average_accuracy, 1.0);
  EXPECT_EQ(*r.average_precision, 1.0);
  EXPECT_EQ(*r.average_recall, 1.0);
}

TEST(Finalize, UndefinedNodeExcludedFromAverages) {
  const std::vector<NodeConfusion> two = {counts(3, 3, 93, 1), counts(1, 1, 97, 1)};
  std::vector<NodeConfusion> three = two;
  three.push_back(counts(0, 0, 100, 0));
  const std::vector<double> losses(100, 1.0);
  const auto a = finalize(two, losses), b = finalize(three, losses);
  EXPECT_FALSE(b.precision[2].has_value());
  EXPECT_FALSE(b.recall[2].has_value());
  EXPECT_DOUBLE_EQ(*b.average_precision, (0.5 + 0.5) / 2.0);
  EXPECT_EQ(*b.average_precision, *a.average_precision);
  EXPECT_EQ(*b.average_recall, *a.average_recall);
  EXPECT_EQ(b.accuracy[2], 1.0);
  EXPECT_EQ(b.average_accuracy, a.average_accuracy);
  EXPECT_DOUBLE_EQ(b.average_accuracy, (0.96 + 0.98) / 2.0);

  const auto j = to_json(b);
  EXPECT_EQ(j["nodes"][2]["precision"], "undefined");
  EXPECT_EQ(j["nodes"][2]["recall"], "undefined");
  EXPECT_EQ(j["nodes"][2]["node"], 3);
  EXPECT_EQ(j["nodes"][0]["precision"], 0.5);
}

TEST(Finalize, EverythingUndefined) {
  const std::vector<NodeConfusion> c = {counts(0, 0, 4, 0)};
  const auto r = finalize(c, std::vector<double>(4, 0.1));
  EXPECT_FALSE(r.average_precision.has_value());
  EXPECT_EQ(r.average_accuracy, 1.0);
  const auto j = to_json(r);
  EXPECT_EQ(j["average_precision"], "undefined");
  EXPECT_EQ(summary_row(r).substr(summary_row(r).size() - 19), "undefined\tundefined");
}

TEST(Finalize, NoSequences) {
  EXPECT_THROW(finalize(std::vector<NodeConfusion>(3), std::vector<double>{}), DomainError);
}

TEST(Finalize, OrderInvariantAndMergeable) {
  std::mt19937_64 rng(1);
  std::bernoulli_distribution coin(0.3);
  struct Outcome {
    std::size_t node;
    CellState predicted, actual;
  };
  std::vector<Outcome> outcomes;
  for (int i = 0; i < 300; ++i) {
    outcomes.push_back({static_cast<std::size_t>(i % 3), coin(rng) ? CellState::dead : CellState::alive,
                        coin(rng) ? CellState::dead : CellState::alive});
  }
  auto tally = [](const std::vector<Outcome>& os, std::size_t from, std::size_t to) {
    std::vector<NodeConfusion> c(3);
    for (std::size_t i = from; i < to; ++i) accumulate(c, os[i].node, os[i].predicted, os[i].actual);
    return c;
  };
  const auto base = tally(outcomes, 0, outcomes.size());
  for (const auto& c : base) EXPECT_EQ(c.total(), 100u);

  auto shuffled = outcomes;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  EXPECT_EQ(tally(shuffled, 0, shuffled.size()), base);

  auto left = tally(shuffled, 0, 120), right = tally(shuffled, 120, shuffled.size());
  for (std::size_t v = 0; v < 3; ++v) right[v] += left[v];
  EXPECT_EQ(right, base);

  const std::vector<double> losses(100, 0.5);
  EXPECT_EQ(to_json(finalize(right, losses)), to_json(finalize(base, losses)));
}

TEST(Report, JsonLayoutAndSummary) {
  const std::vector<NodeConfusion> c = {counts(1, 0, 2, 1)};
  const auto r = finalize(c, std::vector<double>{0.5, 1.5, 1.0, 1.0});
  const auto j = to_json(r);
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  EXPECT_EQ(keys, (std::vector<std::string>{"sequences", "nodes", "average_accuracy", "mean_loss", "average_precision",
                                            "average_recall"}));
  EXPECT_EQ(summary_row(r), j["average_accuracy"].dump() + "\t" + j["mean_loss"].dump() + "\t" +
                                j["average_precision"].dump() + "\t" + j["average_recall"].dump());
}
