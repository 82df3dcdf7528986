// Layers and optimizer shared by the generator and the discriminator.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "advmil/autodiff.hpp"

namespace advmil {

using Rng = std::mt19937_64;

/// Fully-connected layer y = x W + b with W stored in×out.
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, int in, int out, Rng& rng)
      : weight_(name + ".weight", Matrix(in, out)), bias_(name + ".bias", Matrix(1, out)) {
    // PyTorch's default: U(-1/sqrt(in), 1/sqrt(in)) for both weight and bias.
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < weight_.value.size(); ++i) weight_.value.data()[i] = u(rng);
    for (Eigen::Index i = 0; i < bias_.value.size(); ++i) bias_.value.data()[i] = u(rng);
  }

  ad::Var forward(ad::Tape& tape, ad::Var x, bool collect) {
    ad::Var w = tape.parameter(weight_, collect);
    ad::Var b = tape.parameter(bias_, collect);
    return ad::add_row(ad::matmul(x, w), b);
  }

  Matrix apply(const Matrix& x) const { return (x * weight_.value).rowwise() + bias_.value.row(0); }

  int in_dim() const { return static_cast<int>(weight_.value.rows()); }
  int out_dim() const { return static_cast<int>(weight_.value.cols()); }
  std::int64_t param_count() const { return weight_.value.size() + bias_.value.size(); }

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  const Parameter& weight() const { return weight_; }
  const Parameter& bias() const { return bias_; }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  Parameter weight_;
  Parameter bias_;
};

/// Gated attention pooling (Ilse et al. style): score_j = w·(tanh(V h_j) ⊙ sigm(U h_j)),
/// weights = softmax over rows, output = Σ_j a_j h_j as a 1×in row.
class GatedAttention {
 public:
  GatedAttention() = default;
  GatedAttention(const std::string& name, int in, int hidden, Rng& rng)
      : v_(name + ".attn_v", in, hidden, rng),
        u_(name + ".attn_u", in, hidden, rng),
        w_(name + ".attn_w", hidden, 1, rng) {}

  /// Returns the pooled 1×in vector. `weights_out` (optional) receives the attention weights.
  ad::Var forward(ad::Tape& tape, ad::Var h, bool collect, Matrix* weights_out = nullptr) {
    ad::Var a = ad::tanh(v_.forward(tape, h, collect));
    ad::Var b = ad::sigmoid(u_.forward(tape, h, collect));
    ad::Var scores = w_.forward(tape, ad::hadamard(a, b), collect);
    ad::Var weights = ad::softmax_rows(ad::transpose(scores));
    if (weights_out != nullptr) *weights_out = weights.value();
    return ad::matmul(weights, h);
  }

  std::int64_t param_count() const { return v_.param_count() + u_.param_count() + w_.param_count(); }
  int hidden_dim() const { return v_.out_dim(); }

  /// Multiply-accumulates for pooling n rows of width `in`.
  std::int64_t macs(std::int64_t n) const {
    const std::int64_t in = v_.in_dim(), hid = v_.out_dim();
    return n * in * hid * 2  // V and U projections
           + n * hid         // gate product
           + n * hid         // score projection
           + n * in;         // weighted sum
  }

  void collect(std::vector<Parameter*>& out) {
    v_.collect(out);
    u_.collect(out);
    w_.collect(out);
  }

 private:
  Linear v_;
  Linear u_;
  Linear w_;
};

struct AdamOptions {
  double lr = 8e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;
};

/// Adam with L2 weight decay folded into the gradient (torch.optim.Adam semantics).
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Parameter*> params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
    for (auto* p : params_) {
      m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }

  /// Applies one update with gradients scaled by `grad_scale`, then zeroes them.
  void step(double grad_scale = 1.0) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter& p = *params_[i];
      Matrix g = p.grad * grad_scale;
      if (opts_.weight_decay != 0.0) g += opts_.weight_decay * p.value;
      m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * g;
      v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * g.cwiseProduct(g);
      const Matrix mhat = m_[i] / bc1;
      const Matrix vhat = v_[i] / bc2;
      p.value.array() -= opts_.lr * mhat.array() / (vhat.array().sqrt() + opts_.eps);
      p.zero_grad();
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  double lr() const { return opts_.lr; }
  void set_lr(double lr) { opts_.lr = lr; }
  std::int64_t steps() const { return t_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  AdamOptions opts_;
  std::int64_t t_ = 0;
};

/// FNV-1a over the raw bytes of every parameter value; used to assert which
/// parameter sets an update touched.
inline std::uint64_t hash_parameters(const std::vector<const Parameter*>& params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const Parameter* p : params) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
    const std::size_t n = static_cast<std::size_t>(p->value.size()) * sizeof(double);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace advmil
