#pragma once

#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "cellgraph/errors.hpp"
#include "cellgraph/graph.hpp"

namespace cellgraph {

/// Confusion counts for one node slot, dead as the positive class.
struct NodeConfusion {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::uint64_t total() const noexcept { return tp + fp + tn + fn; }

  NodeConfusion& operator+=(const NodeConfusion& o) noexcept {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  bool operator==(const NodeConfusion&) const = default;
};

/// Dead iff P(dead) > 0.5; an exact tie goes to alive.
inline CellState hard_decision(std::span<const double> probs) {
  if (probs.size() != 2) throw ShapeError("hard_decision: expected two class probabilities");
  return probs[1] > 0.5 ? CellState::dead : CellState::alive;
}

inline void accumulate(std::vector<NodeConfusion>& confusion, std::size_t node, CellState predicted,
                       CellState actual) {
  if (node >= confusion.size()) throw DomainError("accumulate: node " + std::to_string(node) + " out of range");
  NodeConfusion& c = confusion[node];
  if (predicted == CellState::dead) {
    (actual == CellState::dead ? c.tp : c.fp) += 1;
  } else {
    (actual == CellState::dead ? c.fn : c.tn) += 1;
  }
}

struct MetricsReport {
  std::vector<NodeConfusion> confusion;
  std::vector<double> accuracy;
  std::vector<std::optional<double>> precision;  // nullopt: tp + fp == 0
  std::vector<std::optional<double>> recall;     // nullopt: tp + fn == 0
  double average_accuracy = 0.0;
  std::optional<double> average_precision;
  std::optional<double> average_recall;
  double mean_loss = 0.0;
  std::size_t sequences = 0;
};

namespace detail {

inline std::optional<double> defined_mean(const std::vector<std::optional<double>>& xs) {
  double s = 0.0;
  std::size_t k = 0;
  for (const auto& x : xs) {
    if (x) {
      s += *x;
      ++k;
    }
  }
  if (k == 0) return std::nullopt;
  return s / static_cast<double>(k);
}

}  // namespace detail

/// Per-node rates plus averages taken over the nodes where each rate is
/// defined. Accuracy is always defined, so its average instead covers the
/// nodes with at least one death label or death prediction (all nodes when
/// there are none).
inline MetricsReport finalize(std::span<const NodeConfusion> confusion, std::span<const double> losses) {
  if (losses.empty()) throw DomainError("finalize: no evaluated sequences");
  MetricsReport r;
  r.sequences = losses.size();
  r.confusion.assign(confusion.begin(), confusion.end());
  for (const auto& c : confusion) {
    const double total = static_cast<double>(c.total());
    r.accuracy.push_back(total > 0 ? static_cast<double>(c.tp + c.tn) / total : 0.0);
    r.precision.push_back(c.tp + c.fp > 0 ? std::optional<double>(static_cast<double>(c.tp) / (c.tp + c.fp))
                                          : std::nullopt);
    r.recall.push_back(c.tp + c.fn > 0 ? std::optional<double>(static_cast<double>(c.tp) / (c.tp + c.fn))
                                       : std::nullopt);
  }
  std::vector<std::optional<double>> acc;
  for (std::size_t v = 0; v < confusion.size(); ++v) {
    const auto& c = confusion[v];
    acc.push_back(c.tp + c.fp + c.fn > 0 ? std::optional<double>(r.accuracy[v]) : std::nullopt);
  }
  const auto scored = detail::defined_mean(acc);
  r.average_accuracy = scored ? *scored : detail::defined_mean({r.accuracy.begin(), r.accuracy.end()}).value_or(0.0);
  r.average_precision = detail::defined_mean(r.precision);
  r.average_recall = detail::defined_mean(r.recall);
  r.mean_loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
  return r;
}

inline nlohmann::ordered_json optional_json(const std::optional<double>& x) {
  if (x) return *x;
  return "undefined";
}

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
  nlohmann::ordered_json nodes = nlohmann::ordered_json::array();
  for (std::size_t v = 0; v < r.confusion.size(); ++v) {
    const auto& c = r.confusion[v];
    nodes.push_back({{"node", v + 1},
                     {"tp", c.tp},
                     {"fp", c.fp},
                     {"tn", c.tn},
                     {"fn", c.fn},
                     {"accuracy", r.accuracy[v]},
                     {"precision", optional_json(r.precision[v])},
                     {"recall", optional_json(r.recall[v])}});
  }
  nlohmann::ordered_json j;
  j["sequences"] = r.sequences;
  j["nodes"] = std::move(nodes);
  j["average_accuracy"] = r.average_accuracy;
  j["mean_loss"] = r.mean_loss;
  j["average_precision"] = optional_json(r.average_precision);
  j["average_recall"] = optional_json(r.average_recall);
  return j;
}

/// One tab-separated row: average accuracy, mean loss, average precision,
/// average recall. Values are the report's JSON encodings, so the row and a
/// written report agree character for character.
inline std::string summary_row(const MetricsReport& r) {
  const auto j = to_json(r);
  auto text = [](const nlohmann::ordered_json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
  return text(j["average_accuracy"]) + "\t" + text(j["mean_loss"]) + "\t" + text(j["average_precision"]) + "\t" +
         text(j["average_recall"]);
}

}  // namespace cellgraph
