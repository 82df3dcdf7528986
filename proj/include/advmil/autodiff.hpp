// Minimal reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Tape records every operation of one forward pass. Calling backward() on a
// set of scalar outputs sweeps the tape in reverse and accumulates gradients
// into the Parameter objects that were registered as trainable for this pass.
// A tape is single-use and single-threaded; build a fresh one per sample.
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace advmil {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

/// Trainable tensor with an accumulated gradient buffer.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

namespace ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  double scalar() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

class Tape {
 public:
  Tape() { nodes_.reserve(128); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix v) { return push(std::move(v), false, nullptr); }

  Var scalar(double v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
  }

  /// Registers a parameter. When `collect` is false the parameter acts as a
  /// constant: gradients still flow through it to other inputs but nothing is
  /// accumulated into `p.grad`.
  Var parameter(Parameter& p, bool collect) {
    Var v = push(Matrix(), collect, collect ? &p : nullptr);
    nodes_[v.id].ref = &p.value;
    return v;
  }

  const Matrix& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.ref != nullptr ? *n.ref : n.value;
  }

  /// Gradient of the last backward sweep with respect to `v`; zero if none reached it.
  Matrix grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.size() == 0) return Matrix::Zero(value(v).rows(), value(v).cols());
    return n.grad;
  }

  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Inputs created by `constant` never require grad; use this to make a leaf
  /// differentiable without binding it to a Parameter (e.g. d/dt checks).
  Var variable(Matrix v) { return push(std::move(v), true, nullptr); }

  void backward(Var out, double seed = 1.0) { backward({{out, seed}}); }

  /// Seeds several scalar outputs at once and runs one reverse sweep.
  void backward(std::initializer_list<std::pair<Var, double>> seeds) {
    backward(std::vector<std::pair<Var, double>>(seeds));
  }

  void backward(const std::vector<std::pair<Var, double>>& seeds) {
    for (auto& n : nodes_) n.grad.resize(0, 0);
    for (const auto& [v, s] : seeds) {
      if (v.rows() != 1 || v.cols() != 1) throw std::invalid_argument("backward seed must be scalar");
      Matrix g(1, 1);
      g(0, 0) = s;
      accumulate(v.id, g);
    }
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, n.grad);
      if (n.param != nullptr) n.param->grad += n.grad;
    }
  }

  std::size_t size() const { return nodes_.size(); }

  // Operation plumbing used by the free functions below.
  template <class Backward>
  Var record(Matrix v, std::initializer_list<Var> inputs, Backward&& bw) {
    bool rg = false;
    for (const Var& in : inputs) rg = rg || nodes_[in.id].requires_grad;
    Var out = push(std::move(v), rg, nullptr);
    if (rg) nodes_[out.id].backward = std::forward<Backward>(bw);
    return out;
  }

  template <class Expr>
  void accumulate(std::size_t id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

 private:
  struct Node {
    Matrix value;
    const Matrix* ref = nullptr;  // parameters are referenced, not copied
    Matrix grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    std::function<void(Tape&, const Matrix&)> backward;
  };

  Var push(Matrix v, bool requires_grad, Parameter* param) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = requires_grad;
    n.param = param;
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape->value(*this); }
inline double Var::scalar() const { return value()(0, 0); }

namespace detail {
inline void same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw std::invalid_argument("operands live on different tapes");
}
inline void same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}
}  // namespace detail

inline Var matmul(Var a, Var b) {
  detail::same_tape(a, b);
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Tape& t = *a.tape;
  Matrix out = a.value() * b.value();
  const std::size_t ia = a.id, ib = b.id;
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(Var{&tp, ia})) tp.accumulate(ia, g * tp.value(Var{&tp, ib}).transpose());
    if (tp.requires_grad(Var{&tp, ib})) tp.accumulate(ib, tp.value(Var{&tp, ia}).transpose() * g);
  });
}

inline Var add(Var a, Var b) {
  detail::same_tape(a, b);
  detail::same_shape(a, b, "add");
  Tape& t = *a.tape;
  const std::size_t ia = a.id, ib = b.id;
  return t.record(a.value() + b.value(), {a, b}, [ia, ib](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::same_tape(a, b);
  detail::same_shape(a, b, "sub");
  Tape& t = *a.tape;
  const std::size_t ia = a.id, ib = b.id;
  return t.record(a.value() - b.value(), {a, b}, [ia, ib](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, -g);
  });
}

/// a (n×k) plus a 1×k row broadcast over every row.
inline Var add_row(Var a, Var row) {
  detail::same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: shape mismatch");
  Tape& t = *a.tape;
  Matrix out = a.value().rowwise() + row.value().row(0);
  const std::size_t ia = a.id, ir = row.id;
  return t.record(std::move(out), {a, row}, [ia, ir](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    tp.accumulate(ir, g.colwise().sum());
  });
}

inline Var hadamard(Var a, Var b) {
  detail::same_tape(a, b);
  detail::same_shape(a, b, "hadamard");
  Tape& t = *a.tape;
  const std::size_t ia = a.id, ib = b.id;
  return t.record(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(Var{&tp, ia})) tp.accumulate(ia, g.cwiseProduct(tp.value(Var{&tp, ib})));
    if (tp.requires_grad(Var{&tp, ib})) tp.accumulate(ib, g.cwiseProduct(tp.value(Var{&tp, ia})));
  });
}

inline Var scale(Var a, double k) {
  Tape& t = *a.tape;
  const std::size_t ia = a.id;
  return t.record(a.value() * k, {a}, [ia, k](Tape& tp, const Matrix& g) { tp.accumulate(ia, g * k); });
}

inline Var transpose(Var a) {
  Tape& t = *a.tape;
  const std::size_t ia = a.id;
  return t.record(a.value().transpose(), {a},
                  [ia](Tape& tp, const Matrix& g) { tp.accumulate(ia, g.transpose()); });
}

inline Var relu(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value().cwiseMax(0.0);
  const std::size_t ia = a.id;
  return t.record(std::move(out), {a}, [ia](Tape& tp, const Matrix& g) {
    const Matrix& x = tp.value(Var{&tp, ia});
    tp.accumulate(ia, (x.array() > 0.0).select(g, 0.0));
  });
}

inline Var tanh(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value().array().tanh().matrix();
  const std::size_t ia = a.id;
  return t.record(out, {a}, [ia, out](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, (g.array() * (1.0 - out.array().square())).matrix());
  });
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value().unaryExpr([](double x) { return sigmoid(x); });
  const std::size_t ia = a.id;
  return t.record(out, {a}, [ia, out](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, (g.array() * out.array() * (1.0 - out.array())).matrix());
  });
}

/// Row-wise softmax.
inline Var softmax_rows(Var a) {
  Tape& t = *a.tape;
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff();
    RowVector e = (x.row(r).array() - mx).exp().matrix();
    out.row(r) = e / e.sum();
  }
  const std::size_t ia = a.id;
  return t.record(out, {a}, [ia, out](Tape& tp, const Matrix& g) {
    Matrix dx(out.rows(), out.cols());
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      const double dot = g.row(r).dot(out.row(r));
      dx.row(r) = (out.row(r).array() * (g.row(r).array() - dot)).matrix();
    }
    tp.accumulate(ia, dx);
  });
}

/// Mean over rows: n×k → 1×k.
inline Var mean_rows(Var a) {
  Tape& t = *a.tape;
  const double n = static_cast<double>(a.rows());
  const Eigen::Index rows = a.rows();
  const std::size_t ia = a.id;
  return t.record(a.value().colwise().mean(), {a}, [ia, n, rows](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, (g / n).replicate(rows, 1));
  });
}

}  // namespace ad
}  // namespace advmil
