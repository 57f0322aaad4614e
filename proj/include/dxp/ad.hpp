// Minimal reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every operation in evaluation order. Each node owns its
// forward value; backward() walks the nodes in reverse and accumulates
// adjoints into the inputs that require gradients. Batches are laid out as
// columns, so a layer is `matmul(W, x)` followed by `add_bias(., b)`.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <vector>

namespace dxp::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

struct Var {
  std::int32_t id = -1;
};

class Tape {
 public:
  Tape() = default;

  void reserve(std::size_t n) { nodes_.reserve(n); }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Matrix value) { return leaf(std::move(value), false); }
  Var parameter(Matrix value) { return leaf(std::move(value), true); }
  Var leaf(Matrix value, bool requires_grad);

  // Copies the value into a new constant node.
  Var detach(Var a);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  // `bias` is a column vector broadcast across the columns of `a`.
  Var add_bias(Var a, Var bias);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var exp(Var a);
  Var square(Var a);
  Var softplus(Var a);
  // scale * a + shift, elementwise.
  Var affine(Var a, double scale, double shift);
  Var concat_rows(Var top, Var bottom);
  Var slice_rows(Var a, Index start, Index count);
  // Elementwise product with a constant matrix of the same shape.
  Var mul_const(Var a, const Matrix& m);
  // sum_ij weights_ij * a_ij as a 1x1 node.
  Var weighted_sum(Var a, const Matrix& weights);

  const Matrix& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  double scalar(Var v) const { return value(v)(0, 0); }
  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }

  // Adjoint of `v` after backward(); empty if no gradient reached it.
  const Matrix& grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }

  // Seeds d(root)/d(root) = 1 and propagates. `root` must be 1x1. Clears
  // previous adjoints first, so the tape can be differentiated repeatedly
  // with respect to different roots.
  void backward(Var root);

 private:
  enum class Op : std::uint8_t {
    kLeaf,
    kMatMul,
    kAdd,
    kSub,
    kMul,
    kAddBias,
    kTanh,
    kSigmoid,
    kExp,
    kSquare,
    kSoftplus,
    kAffine,
    kConcatRows,
    kSliceRows,
    kMulConst,
    kWeightedSum,
  };

  struct Node {
    Op op = Op::kLeaf;
    std::int32_t a = -1;
    std::int32_t b = -1;
    bool requires_grad = false;
    double s0 = 0.0;
    Index i0 = 0;
    Matrix value;
    Matrix grad;
    Matrix aux;
  };

  Var push(Node node);
  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }
  void accumulate(std::int32_t id, const Matrix& g);

  std::vector<Node> nodes_;
};

// Numerically stable log(1 + exp(x)).
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Elementwise tanh and logistic over a whole matrix, written in terms of
// exp so Eigen vectorizes them; libm's scalar tanh otherwise dominates the
// planner's runtime. Absolute error stays at the 1e-16 level.
inline Matrix tanh_of(const Matrix& x) {
  const Eigen::ArrayXXd t = (-2.0 * x.array().abs()).exp();
  return (x.array().sign() * (1.0 - t) / (1.0 + t)).matrix();
}

inline Matrix sigmoid_of(const Matrix& x) {
  const Eigen::ArrayXXd e = (-x.array().abs()).exp();
  return (x.array() >= 0.0).select(1.0 / (1.0 + e), e / (1.0 + e)).matrix();
}

}  // namespace dxp::ad
