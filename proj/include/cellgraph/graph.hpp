#pragma once

// Video-as-graph data model: fixed node slots, fully connected unit-weight
// adjacency, renormalized adjacency, zero-vector padding.

#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cellgraph/diffmath.hpp"
#include "cellgraph/errors.hpp"

namespace cellgraph {

enum class CellState : int { alive = 0, dead = 1 };

inline int to_int(CellState s) { return static_cast<int>(s); }

inline CellState cell_state_from_int(long long v) {
  if (v == 0) return CellState::alive;
  if (v == 1) return CellState::dead;
  throw DomainError("class label " + std::to_string(v) + " outside {0, 1}");
}

/// One video: `features[t]` is the n x f node-feature matrix of frame t.
struct STGraphSequence {
  std::string id;
  std::vector<Matrix> features;
  Matrix adjacency;
  std::vector<std::uint8_t> mask;  // 1 = real cell, 0 = padded slot
  std::vector<CellState> labels;
  std::optional<std::vector<std::vector<double>>> markers;  // [node][frame]

  std::size_t frames() const noexcept { return features.size(); }
  std::size_t nodes() const noexcept { return mask.size(); }
  std::size_t feature_dim() const noexcept { return features.empty() ? 0 : features.front().cols(); }

  bool operator==(const STGraphSequence&) const = default;
};

struct NormalizedAdjacency {
  Matrix matrix;
  std::uint64_t source_hash = 0;
};

/// FNV-1a over shape and the bit patterns of the entries.
inline std::uint64_t matrix_digest(const Matrix& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t word) {
    for (int b = 0; b < 8; ++b) {
      h ^= (word >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  mix(m.rows());
  mix(m.cols());
  for (double x : m.values()) mix(std::bit_cast<std::uint64_t>(x));
  return h;
}

inline Matrix build_fully_connected(std::size_t n) {
  if (n == 0) throw DomainError("fully connected graph needs at least one node");
  Matrix a = Matrix::ones(n, n);
  for (std::size_t i = 0; i < n; ++i) a(i, i) = 0.0;
  return a;
}

inline std::vector<std::string> adjacency_violations(const Matrix& a) {
  std::vector<std::string> out;
  if (a.rows() != a.cols()) {
    out.push_back("adjacency is not square: " + a.shape_string());
    return out;
  }
  for (std::size_t i = 0; i < a.rows(); ++i) {
    if (a(i, i) != 0.0) out.push_back("adjacency diagonal entry " + std::to_string(i) + " is nonzero");
    for (std::size_t j = 0; j < a.cols(); ++j) {
      if (!std::isfinite(a(i, j)) || a(i, j) < 0.0) {
        out.push_back("adjacency entry (" + std::to_string(i) + "," + std::to_string(j) + ") is negative or non-finite");
      }
      if (j > i && a(i, j) != a(j, i)) {
        out.push_back("adjacency is asymmetric at (" + std::to_string(i) + "," + std::to_string(j) + ")");
      }
    }
  }
  return out;
}

/// D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I.
inline NormalizedAdjacency normalize_adjacency(const Matrix& a) {
  if (a.rows() != a.cols()) throw ShapeError("normalize_adjacency: adjacency is " + a.shape_string());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      if (!(a(i, j) >= 0.0) || !std::isfinite(a(i, j))) {
        throw ValidationError("normalize_adjacency: negative or non-finite weight at (" + std::to_string(i) + "," +
                              std::to_string(j) + ")");
      }
      if (a(i, j) != a(j, i)) {
        throw ValidationError("normalize_adjacency: asymmetric at (" + std::to_string(i) + "," + std::to_string(j) +
                              ")");
      }
    }
  }
  const std::size_t n = a.rows();
  Matrix loops = a;
  for (std::size_t i = 0; i < n; ++i) loops(i, i) += 1.0;
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < n; ++j) d += loops(i, j);
    inv_sqrt[i] = 1.0 / std::sqrt(d);
  }
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const double v = inv_sqrt[i] * loops(i, j) * inv_sqrt[j];
      out(i, j) = v;
      out(j, i) = v;
    }
  }
  return NormalizedAdjacency{std::move(out), matrix_digest(a)};
}

/// The adjacency the model convolves with. With `isolate_padded`, edges
/// touching padded slots are removed so padded nodes only see themselves.
inline Matrix effective_adjacency(const STGraphSequence& seq, bool isolate_padded) {
  Matrix a = seq.adjacency;
  if (isolate_padded) {
    for (std::size_t i = 0; i < a.rows(); ++i) {
      for (std::size_t j = 0; j < a.cols(); ++j) {
        if (seq.mask[i] == 0 || seq.mask[j] == 0) a(i, j) = 0.0;
      }
    }
  }
  return a;
}

/// Places k real cells into the first k of `n_slots` node slots and fills
/// the rest with zero features, alive labels and mask 0.
/// `raw[t]` is the k x f feature matrix of frame t.
inline STGraphSequence pad_sequence(std::string id, const std::vector<Matrix>& raw, const std::vector<CellState>& labels,
                                    std::size_t n_slots) {
  const std::size_t k = labels.size();
  if (k == 0) throw DomainError("pad_sequence: no real cells");
  if (k > n_slots) {
    throw CapacityError("pad_sequence: " + std::to_string(k) + " cells exceed " + std::to_string(n_slots) + " slots");
  }
  if (raw.empty()) throw DomainError("pad_sequence: no frames");
  const std::size_t f = raw.front().cols();
  if (f == 0) throw DomainError("pad_sequence: zero feature dimension");

  STGraphSequence seq;
  seq.id = std::move(id);
  seq.features.reserve(raw.size());
  for (std::size_t t = 0; t < raw.size(); ++t) {
    if (raw[t].rows() != k || raw[t].cols() != f) {
      throw ShapeError("pad_sequence: frame " + std::to_string(t) + " is " + raw[t].shape_string() + ", expected " +
                       std::to_string(k) + "x" + std::to_string(f));
    }
    Matrix x(n_slots, f);
    for (std::size_t v = 0; v < k; ++v) std::copy(raw[t].row(v).begin(), raw[t].row(v).end(), x.row(v).begin());
    seq.features.push_back(std::move(x));
  }
  seq.adjacency = build_fully_connected(n_slots);
  seq.mask.assign(n_slots, 0);
  seq.labels.assign(n_slots, CellState::alive);
  for (std::size_t v = 0; v < k; ++v) {
    seq.mask[v] = 1;
    seq.labels[v] = labels[v];
  }
  return seq;
}

/// Every broken invariant of `s`, in a stable order. Empty means valid.
inline std::vector<std::string> validate_sequence(const STGraphSequence& s) {
  std::vector<std::string> out;
  const std::size_t n = s.mask.size();
  if (s.features.empty()) out.push_back("sequence has no frames");
  if (n == 0) out.push_back("sequence has no node slots");
  if (s.labels.size() != n) {
    out.push_back("labels length " + std::to_string(s.labels.size()) + " differs from node count " + std::to_string(n));
  }
  const std::size_t f = s.feature_dim();
  if (!s.features.empty() && f == 0) out.push_back("feature dimension is zero");
  for (std::size_t t = 0; t < s.features.size(); ++t) {
    const Matrix& x = s.features[t];
    if (x.rows() != n || x.cols() != f) {
      out.push_back("frame " + std::to_string(t) + " features are " + x.shape_string() + ", expected " +
                    std::to_string(n) + "x" + std::to_string(f));
      continue;
    }
    if (!x.all_finite()) out.push_back("frame " + std::to_string(t) + " has non-finite features");
  }
  for (std::size_t v = 0; v < n; ++v) {
    if (s.mask[v] > 1) out.push_back("mask of node " + std::to_string(v) + " is not 0 or 1");
  }
  if (s.adjacency.rows() != n || s.adjacency.cols() != n) {
    out.push_back("adjacency is " + s.adjacency.shape_string() + ", expected " + std::to_string(n) + "x" +
                  std::to_string(n));
  } else {
    for (auto& v : adjacency_violations(s.adjacency)) out.push_back(std::move(v));
  }
  for (std::size_t v = 0; v < n; ++v) {
    if (s.mask[v] != 0) continue;
    for (std::size_t t = 0; t < s.features.size(); ++t) {
      const Matrix& x = s.features[t];
      if (v >= x.rows()) continue;
      for (double e : x.row(v)) {
        if (e != 0.0) {
          out.push_back("padded node " + std::to_string(v) + " has nonzero features at frame " + std::to_string(t));
          break;
        }
      }
    }
    if (v < s.labels.size() && s.labels[v] != CellState::alive) {
      out.push_back("padded node " + std::to_string(v) + " is labeled dead");
    }
  }
  if (s.markers) {
    if (s.markers->size() != n) out.push_back("markers cover " + std::to_string(s.markers->size()) + " nodes");
    for (std::size_t v = 0; v < s.markers->size(); ++v) {
      const auto& m = (*s.markers)[v];
      if (m.size() != s.features.size()) {
        out.push_back("markers of node " + std::to_string(v) + " have length " + std::to_string(m.size()));
      }
      for (double x : m) {
        if (!std::isfinite(x) || x < 0.0) {
          out.push_back("markers of node " + std::to_string(v) + " contain a negative or non-finite value");
          break;
        }
      }
    }
  }
  return out;
}

}  // namespace cellgraph
