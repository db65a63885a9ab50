#pragma once

// Dense matrices and a small reverse-mode tape over matrix-valued nodes.
//
// Storage and products are delegated to Eigen. Every taped operation works on
// whole matrices, so a MADE forward pass over a batch costs a handful of
// nodes rather than one per scalar.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace pwflow {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline std::string shape_string(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_string(a) + " times " + shape_string(b));
  }
  return a * b;
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Overflow-safe log(sum(exp(values))). Returns -inf for an empty range or
/// when every entry is -inf.
inline double logsumexp(std::span<const double> values) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : values) hi = std::max(hi, v);
  if (!std::isfinite(hi)) return hi;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - hi);
  return hi + std::log(acc);
}

class GradTape;

/// Handle to a node on a GradTape. Cheap to copy; only valid while the tape
/// lives.
class Var {
 public:
  Var() = default;

  [[nodiscard]] const Matrix& value() const;
  [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
  [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
  [[nodiscard]] double scalar() const { return value()(0, 0); }
  [[nodiscard]] GradTape& tape() const { return *tape_; }
  [[nodiscard]] std::size_t id() const { return id_; }

 private:
  friend class GradTape;
  Var(GradTape* tape, std::size_t id) : tape_(tape), id_(id) {}

  GradTape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradients indexed by parameter slot, one matrix per registered parameter.
using Gradients = std::vector<Matrix>;

class GradTape {
 public:
  /// A non-recording tape only evaluates values; used for inference so the
  /// forward code path is shared with training.
  explicit GradTape(bool record = true) : record_(record) {}

  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  [[nodiscard]] bool recording() const noexcept { return record_; }

  Var constant(Matrix value) { return push(std::move(value), false); }

  /// Registers a trainable parameter. Slots are dense, assigned in call order.
  Var parameter(const Matrix& value) {
    Var v = push(value, record_);
    nodes_[v.id_].slot = static_cast<long>(slot_shapes_.size());
    slot_shapes_.emplace_back(value.rows(), value.cols());
    return v;
  }

  [[nodiscard]] std::size_t parameter_count() const noexcept { return slot_shapes_.size(); }

  /// Reverse sweep from a 1x1 loss node. Every registered parameter gets
  /// exactly one gradient matrix, zero if the loss does not depend on it.
  Gradients backward(Var loss) {
    if (loss.tape_ != this) throw Error("backward: loss belongs to another tape");
    const Matrix& lv = nodes_[loss.id_].value;
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw ShapeError("backward: loss must be 1x1, got " + shape_string(lv));
    }
    if (!std::isfinite(lv(0, 0))) throw NumericError("backward: non-finite loss", lv(0, 0));

    Gradients grads;
    grads.reserve(slot_shapes_.size());
    for (auto [r, c] : slot_shapes_) grads.push_back(Matrix::Zero(r, c));
    if (!record_) return grads;

    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[loss.id_].grad = Matrix::Ones(1, 1);
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0) continue;
      if (n.slot >= 0) grads[static_cast<std::size_t>(n.slot)] += n.grad;
      if (n.backward) n.backward(*this, n.grad, n.value);
    }
    return grads;
  }

  // Used by the op implementations below.
  using Backward = std::function<void(GradTape&, const Matrix& upstream, const Matrix& out)>;

  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
    bool needs = false;
    if (record_) {
      for (const Var& in : inputs) needs = needs || nodes_[in.id_].needs_grad;
    }
    Var out = push(std::move(value), needs);
    if (needs) nodes_[out.id_].backward = std::move(backward);
    return out;
  }

  void accumulate(Var v, const Matrix& g) {
    Node& n = nodes_[v.id_];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  [[nodiscard]] bool needs_grad(Var v) const { return nodes_[v.id_].needs_grad; }
  [[nodiscard]] const Matrix& value_of(std::size_t id) const { return nodes_[id].value; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    long slot = -1;
    bool needs_grad = false;
  };

  Var push(Matrix value, bool needs_grad) {
    nodes_.push_back(Node{std::move(value), Matrix(), nullptr, -1, needs_grad});
    return Var(this, nodes_.size() - 1);
  }

  bool record_;
  std::deque<Node> nodes_;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> slot_shapes_;
};

inline const Matrix& Var::value() const { return tape_->value_of(id_); }

namespace ops {

namespace detail {
inline void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": " + shape_string(a) + " vs " + shape_string(b));
  }
}
}  // namespace detail

inline Var matmul(Var a, Var b) {
  GradTape& t = a.tape();
  Matrix out = pwflow::matmul(a.value(), b.value());
  return t.record(std::move(out), {a, b}, [a, b](GradTape& tp, const Matrix& g, const Matrix&) {
    if (tp.needs_grad(a)) tp.accumulate(a, g * b.value().transpose());
    if (tp.needs_grad(b)) tp.accumulate(b, a.value().transpose() * g);
  });
}

inline Var add(Var a, Var b) {
  detail::require_same_shape("add", a.value(), b.value());
  return a.tape().record(a.value() + b.value(), {a, b}, [a, b](GradTape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_shape("sub", a.value(), b.value());
  return a.tape().record(a.value() - b.value(), {a, b}, [a, b](GradTape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(a, g);
    if (tp.needs_grad(b)) tp.accumulate(b, -g);
  });
}

/// a (n x c) plus a 1 x c row broadcast over every row.
inline Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("add_row: " + shape_string(a.value()) + " with row " + shape_string(row.value()));
  }
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape().record(std::move(out), {a, row}, [a, row](GradTape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(a, g);
    if (tp.needs_grad(row)) tp.accumulate(row, g.colwise().sum());
  });
}

/// Element-wise product.
inline Var mul(Var a, Var b) {
  detail::require_same_shape("mul", a.value(), b.value());
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape().record(std::move(out), {a, b}, [a, b](GradTape& tp, const Matrix& g, const Matrix&) {
    if (tp.needs_grad(a)) tp.accumulate(a, g.cwiseProduct(b.value()));
    if (tp.needs_grad(b)) tp.accumulate(b, g.cwiseProduct(a.value()));
  });
}

inline Var scale(Var a, double s) {
  return a.tape().record(a.value() * s, {a}, [a, s](GradTape& tp, const Matrix& g, const Matrix&) { tp.accumulate(a, g * s); });
}

inline Var exp(Var a) {
  return a.tape().record(a.value().array().exp().matrix(), {a},
                         [a](GradTape& tp, const Matrix& g, const Matrix& out) {
                           tp.accumulate(a, g.cwiseProduct(out));
                         });
}

inline Var log(Var a) {
  return a.tape().record(a.value().array().log().matrix(), {a}, [a](GradTape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(a, g.cwiseQuotient(a.value()));
  });
}

/// tanh via one vectorized exp; std::tanh on doubles is scalar and dominates
/// the forward pass otherwise. Absolute error is a few ulp of 1.
inline Matrix fast_tanh(const Matrix& x) {
  return (2.0 / (1.0 + (-2.0 * x.array()).exp()) - 1.0).matrix();
}

inline Var tanh(Var a) {
  return a.tape().record(fast_tanh(a.value()), {a},
                         [a](GradTape& tp, const Matrix& g, const Matrix& out) {
    tp.accumulate(a, (g.array() * (1.0 - out.array().square())).matrix());
  });
}

inline Var square(Var a) {
  return a.tape().record(a.value().array().square().matrix(), {a}, [a](GradTape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(a, (2.0 * g.array() * a.value().array()).matrix());
  });
}

/// Clamp to [lo, hi]; the gradient is zero where the clamp is active.
inline Var clamp(Var a, double lo, double hi) {
  Matrix out = a.value().cwiseMax(lo).cwiseMin(hi);
  return a.tape().record(std::move(out), {a}, [a, lo, hi](GradTape& tp, const Matrix& g, const Matrix&) {
    const Matrix& x = a.value();
    tp.accumulate(a, (g.array() * ((x.array() >= lo) && (x.array() <= hi)).cast<double>()).matrix());
  });
}

/// Sum of all entries, 1x1.
inline Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const auto r = a.rows();
  const auto c = a.cols();
  return a.tape().record(std::move(out), {a}, [a, r, c](GradTape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(a, Matrix::Constant(r, c, g(0, 0)));
  });
}

/// Per-row sum, n x 1.
inline Var row_sum(Var a) {
  Matrix out = a.value().rowwise().sum();
  const auto c = a.cols();
  return a.tape().record(std::move(out), {a}, [a, c](GradTape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(a, g.replicate(1, c));
  });
}

/// Overflow-safe log-sum-exp over all entries, 1x1.
inline Var logsumexp(Var a) {
  const Matrix& x = a.value();
  const double hi = x.maxCoeff();
  Matrix out(1, 1);
  out(0, 0) = hi + std::log((x.array() - hi).exp().sum());
  const double lse = out(0, 0);
  return a.tape().record(std::move(out), {a}, [a, lse](GradTape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(a, ((a.value().array() - lse).exp() * g(0, 0)).matrix());
  });
}

/// Columns [start, start + count).
inline Var columns(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ShapeError("columns: range out of bounds for " + shape_string(a.value()));
  }
  Matrix out = a.value().middleCols(start, count);
  const auto r = a.rows();
  const auto c = a.cols();
  return a.tape().record(std::move(out), {a}, [a, r, c, start, count](GradTape& tp, const Matrix& g, const Matrix&) {
    Matrix full = Matrix::Zero(r, c);
    full.middleCols(start, count) = g;
    tp.accumulate(a, full);
  });
}

}  // namespace ops

inline Var operator+(Var a, Var b) { return ops::add(a, b); }
inline Var operator-(Var a, Var b) { return ops::sub(a, b); }
inline Var operator*(Var a, double s) { return ops::scale(a, s); }

}  // namespace pwflow
