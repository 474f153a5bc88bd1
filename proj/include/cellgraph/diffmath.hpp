#pragma once

// Dense row-major matrices, a reverse-mode differentiation tape built on
// them, and a central-difference gradient oracle.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cellgraph/errors.hpp"

namespace cellgraph {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string());
    }
  }

  static Matrix zeros(std::size_t rows, std::size_t cols) { return Matrix(rows, cols); }
  static Matrix ones(std::size_t rows, std::size_t cols) { return Matrix(rows, cols, 1.0); }
  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    Matrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged initializer for matrix");
      std::copy(row.begin(), row.end(), m.data_.begin() + static_cast<std::ptrdiff_t>(i * c));
      ++i;
    }
    return m;
  }
  static Matrix column(std::span<const double> v) {
    return Matrix(v.size(), 1, std::vector<double>(v.begin(), v.end()));
  }
  static Matrix row_vector(std::span<const double> v) {
    return Matrix(1, v.size(), std::vector<double>(v.begin(), v.end()));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(data_).subspan(i * cols_, cols_);
  }
  std::span<double> row(std::size_t i) { return std::span<double>(data_).subspan(i * cols_, cols_); }

  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_string() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Shape and bit pattern identical; distinguishes -0.0 from 0.0 and compares NaN payloads.
inline bool bitwise_equal(const Matrix& a, const Matrix& b) {
  return a.same_shape(b) &&
         (a.size() == 0 || std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0);
}

namespace detail {

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
}

// out += a * b
inline void matmul_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* po = out.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = po + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// out += a * b^T
inline void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* po = out.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += pa[i * k + p] * pb[j * k + p];
      po[i * n + j] += s;
    }
  }
}

// out += a^T * b
inline void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* po = out.values().data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = pb + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = pa[p * m + i];
      double* orow = po + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

template <class F>
Matrix map(const Matrix& a, F f) {
  Matrix out(a.rows(), a.cols());
  auto src = a.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <class F>
Matrix zip(const Matrix& a, const Matrix& b, const char* op, F f) {
  require_same_shape(a, b, op);
  Matrix out(a.rows(), a.cols());
  auto x = a.values();
  auto y = b.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
  return out;
}

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Value-level primitives

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: cannot multiply " + a.shape_string() + " by " + b.shape_string());
  }
  Matrix out(a.rows(), b.cols());
  detail::matmul_acc(a, b, out);
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  return detail::zip(a, b, "add", [](double x, double y) { return x + y; });
}
inline Matrix subtract(const Matrix& a, const Matrix& b) {
  return detail::zip(a, b, "subtract", [](double x, double y) { return x - y; });
}
inline Matrix multiply(const Matrix& a, const Matrix& b) {
  return detail::zip(a, b, "multiply", [](double x, double y) { return x * y; });
}
inline Matrix scale(const Matrix& a, double c) {
  return detail::map(a, [c](double x) { return c * x; });
}
inline Matrix sigmoid(const Matrix& a) { return detail::map(a, detail::sigmoid_scalar); }
inline Matrix tanh(const Matrix& a) {
  return detail::map(a, [](double x) { return std::tanh(x); });
}
inline Matrix relu(const Matrix& a) {
  return detail::map(a, [](double x) { return x > 0.0 ? x : 0.0; });
}

/// a (m x n) plus the row vector b (1 x n) added to every row.
inline Matrix add_row(const Matrix& a, const Matrix& b) {
  if (b.rows() != 1 || b.cols() != a.cols()) {
    throw ShapeError("add_row: cannot broadcast " + b.shape_string() + " over " + a.shape_string());
  }
  Matrix out = a;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) r[j] += b(0, j);
  }
  return out;
}

inline Matrix concat_cols(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("concat_cols: row mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
  Matrix out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    std::copy(a.row(i).begin(), a.row(i).end(), dst.begin());
    std::copy(b.row(i).begin(), b.row(i).end(), dst.begin() + static_cast<std::ptrdiff_t>(a.cols()));
  }
  return out;
}

/// Inverse of concat_cols: the first `p` columns and the remainder.
inline std::pair<Matrix, Matrix> split_cols(const Matrix& m, std::size_t p) {
  if (p > m.cols()) throw ShapeError("split_cols: column " + std::to_string(p) + " outside " + m.shape_string());
  Matrix left(m.rows(), p), right(m.rows(), m.cols() - p);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto src = m.row(i);
    std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(p), left.row(i).begin());
    std::copy(src.begin() + static_cast<std::ptrdiff_t>(p), src.end(), right.row(i).begin());
  }
  return {std::move(left), std::move(right)};
}

/// Max-shifted softmax; throws DomainError on an empty input.
inline std::vector<double> softmax_vec(std::span<const double> v) {
  if (v.empty()) throw DomainError("softmax of an empty vector");
  const double mx = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    total += out[i];
  }
  for (double& x : out) x /= total;
  return out;
}

inline Matrix softmax_rows(const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto s = softmax_vec(a.row(i));
    std::copy(s.begin(), s.end(), out.row(i).begin());
  }
  return out;
}

inline double sum(const Matrix& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  return s;
}

// ---------------------------------------------------------------------------
// Reverse-mode tape

class Tape;
class Gradients;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
};

Gradients backward(const Tape& tape, Var loss);

enum class OpCode : std::uint8_t {
  leaf,
  matmul,
  add,
  subtract,
  multiply,
  scale,
  sigmoid,
  tanh,
  relu,
  add_row,
  concat_cols,
  transpose,
  softmax_rows,
  row,
  stack_rows,
  sum,
  element,
  log_clamped,
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix value) { return push(OpCode::leaf, {}, std::move(value)); }

  const Matrix& value(Var v) const {
    check(v);
    return nodes_[v.id].value;
  }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var push(OpCode op, std::vector<std::size_t> args, Matrix value, double scalar = 0.0, std::size_t i = 0,
           std::size_t j = 0) {
    nodes_.push_back(Node{op, std::move(args), std::move(value), scalar, i, j});
    return Var{this, nodes_.size() - 1};
  }

  void check(Var v) const {
    if (v.tape != this || v.id >= nodes_.size()) throw DomainError("variable does not belong to this tape");
  }

 private:
  struct Node {
    OpCode op;
    std::vector<std::size_t> args;
    Matrix value;
    double scalar;
    std::size_t i;
    std::size_t j;
  };
  std::vector<Node> nodes_;

  friend class Gradients;
  friend Gradients backward(const Tape& tape, Var loss);
};

inline const Matrix& Var::value() const {
  if (tape == nullptr) throw DomainError("unbound variable");
  return tape->value(*this);
}

/// Gradients of one scalar with respect to every recorded value.
class Gradients {
 public:
  const Matrix& operator[](Var v) const {
    if (v.id >= grads_.size()) throw DomainError("variable outside the differentiated tape");
    return grads_[v.id];
  }

 private:
  explicit Gradients(std::vector<Matrix> grads) : grads_(std::move(grads)) {}
  std::vector<Matrix> grads_;
  friend Gradients backward(const Tape& tape, Var loss);
};

namespace detail {

inline Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw DomainError("unbound variable");
  return *a.tape;
}

inline Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw DomainError("operands recorded on different tapes");
  return tape_of(a);
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  return detail::tape_of(a, b).push(OpCode::matmul, {a.id, b.id}, matmul(a.value(), b.value()));
}
inline Var add(Var a, Var b) {
  return detail::tape_of(a, b).push(OpCode::add, {a.id, b.id}, add(a.value(), b.value()));
}
inline Var subtract(Var a, Var b) {
  return detail::tape_of(a, b).push(OpCode::subtract, {a.id, b.id}, subtract(a.value(), b.value()));
}
inline Var multiply(Var a, Var b) {
  return detail::tape_of(a, b).push(OpCode::multiply, {a.id, b.id}, multiply(a.value(), b.value()));
}
inline Var scale(Var a, double c) {
  return detail::tape_of(a).push(OpCode::scale, {a.id}, scale(a.value(), c), c);
}
inline Var sigmoid(Var a) { return detail::tape_of(a).push(OpCode::sigmoid, {a.id}, sigmoid(a.value())); }
inline Var tanh(Var a) { return detail::tape_of(a).push(OpCode::tanh, {a.id}, tanh(a.value())); }
inline Var relu(Var a) { return detail::tape_of(a).push(OpCode::relu, {a.id}, relu(a.value())); }
inline Var add_row(Var a, Var b) {
  return detail::tape_of(a, b).push(OpCode::add_row, {a.id, b.id}, add_row(a.value(), b.value()));
}
inline Var concat_cols(Var a, Var b) {
  return detail::tape_of(a, b).push(OpCode::concat_cols, {a.id, b.id}, concat_cols(a.value(), b.value()));
}
inline Var transpose(Var a) { return detail::tape_of(a).push(OpCode::transpose, {a.id}, transpose(a.value())); }
inline Var softmax_rows(Var a) {
  return detail::tape_of(a).push(OpCode::softmax_rows, {a.id}, softmax_rows(a.value()));
}

/// Row i of a as a 1 x cols matrix.
inline Var row(Var a, std::size_t i) {
  const Matrix& v = a.value();
  if (i >= v.rows()) throw ShapeError("row " + std::to_string(i) + " outside " + v.shape_string());
  return detail::tape_of(a).push(OpCode::row, {a.id}, Matrix::row_vector(v.row(i)), 0.0, i);
}

/// Stacks 1 x c row vectors into a k x c matrix.
inline Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no rows");
  Tape& tape = detail::tape_of(rows.front());
  const std::size_t c = rows.front().value().cols();
  Matrix out(rows.size(), c);
  std::vector<std::size_t> args;
  args.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].tape != &tape) throw DomainError("operands recorded on different tapes");
    const Matrix& r = rows[i].value();
    if (r.rows() != 1 || r.cols() != c) {
      throw ShapeError("stack_rows: expected 1x" + std::to_string(c) + ", got " + r.shape_string());
    }
    std::copy(r.values().begin(), r.values().end(), out.row(i).begin());
    args.push_back(rows[i].id);
  }
  return tape.push(OpCode::stack_rows, std::move(args), std::move(out));
}

inline Var sum(Var a) { return detail::tape_of(a).push(OpCode::sum, {a.id}, Matrix(1, 1, sum(a.value()))); }

inline Var element(Var a, std::size_t i, std::size_t j) {
  const Matrix& v = a.value();
  if (i >= v.rows() || j >= v.cols()) {
    throw ShapeError("element (" + std::to_string(i) + "," + std::to_string(j) + ") outside " + v.shape_string());
  }
  return detail::tape_of(a).push(OpCode::element, {a.id}, Matrix(1, 1, v(i, j)), 0.0, i, j);
}

/// log(max(x, floor)) entrywise; zero derivative where the floor is active.
inline Var log_clamped(Var a, double floor) {
  Matrix out = detail::map(a.value(), [floor](double x) { return std::log(std::max(x, floor)); });
  return detail::tape_of(a).push(OpCode::log_clamped, {a.id}, std::move(out), floor);
}

/// Exact reverse-mode gradients of the scalar `loss`. Values never reached
/// from the loss receive zero gradients. The tape is not modified, so
/// repeated calls are bitwise reproducible.
inline Gradients backward(const Tape& tape, Var loss) {
  tape.check(loss);
  const auto& nodes = tape.nodes_;
  if (nodes[loss.id].value.size() != 1) {
    throw DomainError("backward: loss must be a 1x1 scalar, got " + nodes[loss.id].value.shape_string());
  }

  std::vector<Matrix> grads(nodes.size());
  auto slot = [&](std::size_t id) -> Matrix& {
    if (grads[id].empty() && nodes[id].value.size() != 0) {
      grads[id] = Matrix(nodes[id].value.rows(), nodes[id].value.cols());
    }
    return grads[id];
  };
  grads[loss.id] = Matrix(1, 1, 1.0);

  for (std::size_t idx = loss.id + 1; idx-- > 0;) {
    const auto& node = nodes[idx];
    const Matrix& g = grads[idx];
    if (g.empty() || node.op == OpCode::leaf) continue;
    const auto& args = node.args;
    const Matrix& y = node.value;

    switch (node.op) {
      case OpCode::leaf:
        break;
      case OpCode::matmul: {
        const Matrix& a = nodes[args[0]].value;
        const Matrix& b = nodes[args[1]].value;
        detail::matmul_nt_acc(g, b, slot(args[0]));
        detail::matmul_tn_acc(a, g, slot(args[1]));
        break;
      }
      case OpCode::add:
      case OpCode::subtract: {
        const double sign = node.op == OpCode::add ? 1.0 : -1.0;
        Matrix& ga = slot(args[0]);
        for (std::size_t k = 0; k < g.size(); ++k) ga.values()[k] += g.values()[k];
        Matrix& gb = slot(args[1]);
        for (std::size_t k = 0; k < g.size(); ++k) gb.values()[k] += sign * g.values()[k];
        break;
      }
      case OpCode::multiply: {
        const Matrix& a = nodes[args[0]].value;
        const Matrix& b = nodes[args[1]].value;
        Matrix& ga = slot(args[0]);
        for (std::size_t k = 0; k < g.size(); ++k) ga.values()[k] += g.values()[k] * b.values()[k];
        Matrix& gb = slot(args[1]);
        for (std::size_t k = 0; k < g.size(); ++k) gb.values()[k] += g.values()[k] * a.values()[k];
        break;
      }
      case OpCode::scale: {
        Matrix& ga = slot(args[0]);
        for (std::size_t k = 0; k < g.size(); ++k) ga.values()[k] += node.scalar * g.values()[k];
        break;
      }
      case OpCode::sigmoid: {
        Matrix& ga = slot(args[0]);
        for (std::size_t k = 0; k < g.size(); ++k) {
          const double s = y.values()[k];
          ga.values()[k] += g.values()[k] * s * (1.0 - s);
        }
        break;
      }
      case OpCode::tanh: {
        Matrix& ga = slot(args[0]);
        for (std::size_t k = 0; k < g.size(); ++k) {
          const double t = y.values()[k];
          ga.values()[k] += g.values()[k] * (1.0 - t * t);
        }
        break;
      }
      case OpCode::relu: {
        const Matrix& a = nodes[args[0]].value;
        Matrix& ga = slot(args[0]);
        for (std::size_t k = 0; k < g.size(); ++k) {
          if (a.values()[k] > 0.0) ga.values()[k] += g.values()[k];
        }
        break;
      }
      case OpCode::add_row: {
        Matrix& ga = slot(args[0]);
        for (std::size_t k = 0; k < g.size(); ++k) ga.values()[k] += g.values()[k];
        Matrix& gb = slot(args[1]);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
        break;
      }
      case OpCode::concat_cols: {
        const std::size_t p = nodes[args[0]].value.cols();
        Matrix& ga = slot(args[0]);
        Matrix& gb = slot(args[1]);
        for (std::size_t i = 0; i < g.rows(); ++i) {
          for (std::size_t j = 0; j < g.cols(); ++j) {
            if (j < p) {
              ga(i, j) += g(i, j);
            } else {
              gb(i, j - p) += g(i, j);
            }
          }
        }
        break;
      }
      case OpCode::transpose: {
        Matrix& ga = slot(args[0]);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) ga(j, i) += g(i, j);
        break;
      }
      case OpCode::softmax_rows: {
        Matrix& ga = slot(args[0]);
        for (std::size_t i = 0; i < y.rows(); ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
          for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
        }
        break;
      }
      case OpCode::row: {
        Matrix& ga = slot(args[0]);
        for (std::size_t j = 0; j < g.cols(); ++j) ga(node.i, j) += g(0, j);
        break;
      }
      case OpCode::stack_rows: {
        for (std::size_t r = 0; r < args.size(); ++r) {
          Matrix& ga = slot(args[r]);
          for (std::size_t j = 0; j < g.cols(); ++j) ga(0, j) += g(r, j);
        }
        break;
      }
      case OpCode::sum: {
        Matrix& ga = slot(args[0]);
        for (double& x : ga.values()) x += g(0, 0);
        break;
      }
      case OpCode::element: {
        slot(args[0])(node.i, node.j) += g(0, 0);
        break;
      }
      case OpCode::log_clamped: {
        const Matrix& a = nodes[args[0]].value;
        Matrix& ga = slot(args[0]);
        for (std::size_t k = 0; k < g.size(); ++k) {
          const double x = a.values()[k];
          if (x > node.scalar) ga.values()[k] += g.values()[k] / x;
        }
        break;
      }
    }
  }

  for (std::size_t id = 0; id < nodes.size(); ++id) {
    if (grads[id].empty()) grads[id] = Matrix(nodes[id].value.rows(), nodes[id].value.cols());
  }
  return Gradients(std::move(grads));
}

// ---------------------------------------------------------------------------
// Finite differences

using ParamFunction = std::function<double(std::span<const Matrix>)>;

/// Central-difference gradient of f at `params`, one coordinate at a time.
/// Restrict to a subset of the tensors with `which` (indices into params);
/// excluded tensors get zero gradients.
inline std::vector<Matrix> finite_diff_grad(const ParamFunction& f, std::vector<Matrix> params, double eps,
                                            std::span<const std::size_t> which = {}) {
  if (!(eps > 0.0)) throw DomainError("finite_diff_grad: eps must be positive");
  std::vector<Matrix> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.emplace_back(p.rows(), p.cols());

  std::vector<std::size_t> tensors(which.begin(), which.end());
  if (tensors.empty()) {
    for (std::size_t t = 0; t < params.size(); ++t) tensors.push_back(t);
  }
  for (std::size_t t : tensors) {
    if (t >= params.size()) throw DomainError("finite_diff_grad: tensor index out of range");
    auto vals = params[t].values();
    for (std::size_t k = 0; k < vals.size(); ++k) {
      const double saved = vals[k];
      vals[k] = saved + eps;
      const double up = f(params);
      vals[k] = saved - eps;
      const double down = f(params);
      vals[k] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("finite_diff_grad: non-finite evaluation at tensor " + std::to_string(t) +
                           " coordinate " + std::to_string(k));
      }
      grads[t].values()[k] = (up - down) / (2.0 * eps);
    }
  }
  return grads;
}

/// |a - b| / max(1e-8, |a| + |b|)
inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max(1e-8, std::abs(a) + std::abs(b));
}

}  // namespace cellgraph
