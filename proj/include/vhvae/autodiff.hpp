#pragma once

// Minimal tape-based reverse-mode differentiation over dense matrices.
//
// A Tape records every value produced during a forward pass together with a
// closure that pushes the node's gradient back to its inputs. Parameters are
// bound to the tape as leaves; Tape::backward accumulates into
// Parameter::grad.

#include "vhvae/matrix.hpp"

#include <algorithm>
#include <cassert>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace vhvae {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)) {
    grad = Matrix::Zero(value.rows(), value.cols());
  }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Eigen::Index size() const { return value.size(); }
};

/// Ordered, name-unique collection of parameters with stable indices.
class ParameterStore {
 public:
  std::size_t add(const std::string& name, Matrix value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index_.emplace(name, items_.size());
    items_.emplace_back(name, std::move(value));
    return items_.size() - 1;
  }

  Parameter& operator[](std::size_t i) { return items_[i]; }
  const Parameter& operator[](std::size_t i) const { return items_[i]; }
  std::size_t size() const { return items_.size(); }

  Parameter* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &items_[it->second];
  }
  const Parameter* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &items_[it->second];
  }

  void zero_grad() {
    for (auto& p : items_) p.zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += static_cast<std::size_t>(p.size());
    return n;
  }

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

 private:
  std::deque<Parameter> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  double scalar() const { return value()(0, 0); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Matrix value) { return push(std::move(value), false, nullptr, nullptr); }

  Var scalar(double v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
  }

  /// Binds a parameter as a leaf. Binding the same parameter twice returns the same node.
  Var parameter(Parameter& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return Var(this, it->second);
    Var v = push(p.value, grad_enabled_, nullptr, &p);
    bound_.emplace(&p, v.id());
    return v;
  }

  /// Records an op result. `backward` is dropped when no input requires a gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
    bool needs = false;
    if (grad_enabled_) {
      for (const Var& in : inputs) needs = needs || requires_grad(in);
    }
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr, nullptr);
  }

  Var record(Matrix value, std::span<const Var> inputs, Backward backward) {
    bool needs = false;
    if (grad_enabled_) {
      for (const Var& in : inputs) needs = needs || requires_grad(in);
    }
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr, nullptr);
  }

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Matrix& value(Var v) const { return value(v.id()); }
  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id())].requires_grad; }

  /// Gradient buffer of a node, allocated as zeros on first access.
  Matrix& grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }
  Matrix& grad(Var v) { return grad(v.id()); }
  bool has_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad.size() != 0; }

  /// Runs the reverse sweep from a 1x1 root and adds leaf gradients into
  /// the bound parameters.
  void backward(Var root, double seed = 1.0) {
    if (!grad_enabled_) throw std::logic_error("backward on a tape with gradients disabled");
    if (root.rows() != 1 || root.cols() != 1) throw std::invalid_argument("backward root must be 1x1");
    grad(root.id())(0, 0) += seed;
    for (int id = root.id(); id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, id);
      if (n.param != nullptr) n.param->grad += n.grad;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
    Parameter* param = nullptr;
  };

  Var push(Matrix value, bool requires_grad, Backward backward, Parameter* param) {
    nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, std::move(backward), param});
    return Var(this, static_cast<int>(nodes_.size() - 1));
  }

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> bound_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }

// ---------------------------------------------------------------------------
// Ops. Every op records its value and the exact vector-Jacobian product.
// ---------------------------------------------------------------------------

namespace ops {

inline void accumulate(Tape& t, Var v, const Matrix& g) {
  if (t.requires_grad(v)) t.grad(v) += g;
}

inline Var matmul(Var a, Var b) {
  Tape& t = *a.tape();
  return t.record(a.value() * b.value(), {a, b}, [a, b](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(a)) tp.grad(a).noalias() += g * b.value().transpose();
    if (tp.requires_grad(b)) tp.grad(b).noalias() += a.value().transpose() * g;
  });
}

inline Var add(Var a, Var b) {
  Tape& t = *a.tape();
  return t.record(a.value() + b.value(), {a, b}, [a, b](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    accumulate(tp, a, g);
    accumulate(tp, b, g);
  });
}

inline Var sub(Var a, Var b) {
  Tape& t = *a.tape();
  return t.record(a.value() - b.value(), {a, b}, [a, b](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    accumulate(tp, a, g);
    accumulate(tp, b, -g);
  });
}

inline Var hadamard(Var a, Var b) {
  Tape& t = *a.tape();
  return t.record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    accumulate(tp, a, g.cwiseProduct(b.value()));
    accumulate(tp, b, g.cwiseProduct(a.value()));
  });
}

inline Var scale(Var a, double c) {
  Tape& t = *a.tape();
  return t.record(a.value() * c, {a}, [a, c](Tape& tp, int self) { accumulate(tp, a, tp.grad(self) * c); });
}

inline Var add_constant(Var a, double c) {
  Tape& t = *a.tape();
  return t.record(a.value().array() + c, {a}, [a](Tape& tp, int self) { accumulate(tp, a, tp.grad(self)); });
}

/// Multiplies every entry of `a` by the 1x1 value `s`.
inline Var scale_by(Var a, Var s) {
  Tape& t = *a.tape();
  return t.record(a.value() * s.scalar(), {a, s}, [a, s](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    accumulate(tp, a, g * s.scalar());
    if (tp.requires_grad(s)) tp.grad(s)(0, 0) += g.cwiseProduct(a.value()).sum();
  });
}

inline Var tanh(Var a) {
  Tape& t = *a.tape();
  Matrix y = a.value().array().tanh().matrix();
  return t.record(std::move(y), {a}, [a](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    accumulate(tp, a, tp.grad(self).cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

inline Var sigmoid(Var a) {
  Tape& t = *a.tape();
  Matrix y = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return t.record(std::move(y), {a}, [a](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    accumulate(tp, a, tp.grad(self).cwiseProduct((y.array() * (1.0 - y.array())).matrix()));
  });
}

inline Var exp(Var a) {
  Tape& t = *a.tape();
  Matrix y = a.value().array().exp().matrix();
  return t.record(std::move(y), {a}, [a](Tape& tp, int self) {
    accumulate(tp, a, tp.grad(self).cwiseProduct(tp.value(self)));
  });
}

inline Var square(Var a) {
  Tape& t = *a.tape();
  return t.record(a.value().array().square().matrix(), {a}, [a](Tape& tp, int self) {
    accumulate(tp, a, 2.0 * tp.grad(self).cwiseProduct(a.value()));
  });
}

/// Elementwise clamp; the gradient is zero where the clamp is active.
inline Var clamp(Var a, double lo, double hi) {
  Tape& t = *a.tape();
  Matrix y = a.value().cwiseMax(lo).cwiseMin(hi);
  return t.record(std::move(y), {a}, [a, lo, hi](Tape& tp, int self) {
    const Matrix& x = a.value();
    Matrix g = tp.grad(self);
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      if (x(i) < lo || x(i) > hi) g(i) = 0.0;
    }
    accumulate(tp, a, g);
  });
}

inline Var sum(Var a) {
  Tape& t = *a.tape();
  Matrix y(1, 1);
  y(0, 0) = a.value().sum();
  return t.record(std::move(y), {a}, [a](Tape& tp, int self) {
    const double g = tp.grad(self)(0, 0);
    accumulate(tp, a, Matrix::Constant(a.rows(), a.cols(), g));
  });
}

inline Var dot(Var a, Var b) {
  Tape& t = *a.tape();
  Matrix y(1, 1);
  y(0, 0) = a.value().cwiseProduct(b.value()).sum();
  return t.record(std::move(y), {a, b}, [a, b](Tape& tp, int self) {
    const double g = tp.grad(self)(0, 0);
    accumulate(tp, a, g * b.value());
    accumulate(tp, b, g * a.value());
  });
}

/// Sum of same-shaped values.
inline Var add_n(std::span<const Var> xs) {
  assert(!xs.empty());
  Tape& t = *xs.front().tape();
  Matrix y = xs.front().value();
  for (std::size_t i = 1; i < xs.size(); ++i) y += xs[i].value();
  std::vector<Var> in(xs.begin(), xs.end());
  return t.record(std::move(y), xs, [in](Tape& tp, int self) {
    const Matrix g = tp.grad(self);
    for (const Var& v : in) accumulate(tp, v, g);
  });
}

inline Var mean_n(std::span<const Var> xs) { return scale(add_n(xs), 1.0 / static_cast<double>(xs.size())); }

/// Stacks column blocks vertically (all inputs share the column count).
inline Var concat(std::span<const Var> xs) {
  assert(!xs.empty());
  Tape& t = *xs.front().tape();
  Eigen::Index rows = 0;
  for (const Var& v : xs) rows += v.rows();
  Matrix y(rows, xs.front().cols());
  Eigen::Index r = 0;
  for (const Var& v : xs) {
    y.middleRows(r, v.rows()) = v.value();
    r += v.rows();
  }
  std::vector<Var> in(xs.begin(), xs.end());
  return t.record(std::move(y), xs, [in](Tape& tp, int self) {
    Eigen::Index r = 0;
    for (const Var& v : in) {
      if (tp.requires_grad(v)) tp.grad(v) += tp.grad(self).middleRows(r, v.rows());
      r += v.rows();
    }
  });
}

inline Var concat(std::initializer_list<Var> xs) { return concat(std::span<const Var>(xs.begin(), xs.size())); }

/// Places column vectors side by side.
inline Var hcat(std::span<const Var> xs) {
  assert(!xs.empty());
  Tape& t = *xs.front().tape();
  Matrix y(xs.front().rows(), static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) y.col(static_cast<Eigen::Index>(i)) = xs[i].value().col(0);
  std::vector<Var> in(xs.begin(), xs.end());
  return t.record(std::move(y), xs, [in](Tape& tp, int self) {
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (tp.requires_grad(in[i])) tp.grad(in[i]) += tp.grad(self).col(static_cast<Eigen::Index>(i));
    }
  });
}

inline Var slice_rows(Var a, Eigen::Index begin, Eigen::Index count) {
  Tape& t = *a.tape();
  return t.record(a.value().middleRows(begin, count), {a}, [a, begin, count](Tape& tp, int self) {
    if (tp.requires_grad(a)) tp.grad(a).middleRows(begin, count) += tp.grad(self);
  });
}

inline Var column(Var a, Eigen::Index j) {
  Tape& t = *a.tape();
  return t.record(a.value().col(j), {a}, [a, j](Tape& tp, int self) {
    if (tp.requires_grad(a)) tp.grad(a).col(j) += tp.grad(self);
  });
}

inline Var entry(Var a, Eigen::Index r, Eigen::Index c) {
  Tape& t = *a.tape();
  Matrix y(1, 1);
  y(0, 0) = a.value()(r, c);
  return t.record(std::move(y), {a}, [a, r, c](Tape& tp, int self) {
    if (tp.requires_grad(a)) tp.grad(a)(r, c) += tp.grad(self)(0, 0);
  });
}

/// Row `index` of an embedding table, returned as a column vector.
inline Var lookup(Var table, Eigen::Index index) {
  Tape& t = *table.tape();
  return t.record(table.value().row(index).transpose(), {table}, [table, index](Tape& tp, int self) {
    if (tp.requires_grad(table)) tp.grad(table).row(index) += tp.grad(self).transpose();
  });
}

/// Softmax over a column vector.
inline Var softmax(Var a) {
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  Matrix y = (x.array() - x.maxCoeff()).exp().matrix();
  y /= y.sum();
  return t.record(std::move(y), {a}, [a](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    const Matrix& g = tp.grad(self);
    const double inner = g.cwiseProduct(y).sum();
    accumulate(tp, a, (y.array() * (g.array() - inner)).matrix());
  });
}

/// Affine map W x + b.
inline Var affine(Var w, Var x, Var b) { return add(matmul(w, x), b); }

}  // namespace ops

/// Single-layer LSTM cell with fused gate weights W (4H x (I+H)) and bias b (4H).
/// Gate order: input, forget, candidate, output.
struct LstmState {
  Var h;
  Var c;
};

inline LstmState lstm_step(Var w, Var b, Var x, const LstmState& s) {
  const Eigen::Index hidden = s.h.rows();
  Var gates = ops::affine(w, ops::concat({x, s.h}), b);
  Var i = ops::sigmoid(ops::slice_rows(gates, 0, hidden));
  Var f = ops::sigmoid(ops::slice_rows(gates, hidden, hidden));
  Var g = ops::tanh(ops::slice_rows(gates, 2 * hidden, hidden));
  Var o = ops::sigmoid(ops::slice_rows(gates, 3 * hidden, hidden));
  Var c = ops::add(ops::hadamard(f, s.c), ops::hadamard(i, g));
  Var h = ops::hadamard(o, ops::tanh(c));
  return {h, c};
}

}  // namespace vhvae
