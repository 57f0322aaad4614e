#include "dxp/ad.hpp"

#include <stdexcept>

namespace dxp::ad {

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::leaf(Matrix value, bool requires_grad) {
  Node n;
  n.op = Op::kLeaf;
  n.requires_grad = requires_grad;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::detach(Var a) { return constant(value(a)); }

Var Tape::matmul(Var a, Var b) {
  Node n;
  n.op = Op::kMatMul;
  n.a = a.id;
  n.b = b.id;
  n.requires_grad = requires_grad(a) || requires_grad(b);
  n.value.noalias() = value(a) * value(b);
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  Node n;
  n.op = Op::kAdd;
  n.a = a.id;
  n.b = b.id;
  n.requires_grad = requires_grad(a) || requires_grad(b);
  n.value = value(a) + value(b);
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  Node n;
  n.op = Op::kSub;
  n.a = a.id;
  n.b = b.id;
  n.requires_grad = requires_grad(a) || requires_grad(b);
  n.value = value(a) - value(b);
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  Node n;
  n.op = Op::kMul;
  n.a = a.id;
  n.b = b.id;
  n.requires_grad = requires_grad(a) || requires_grad(b);
  n.value = value(a).cwiseProduct(value(b));
  return push(std::move(n));
}

Var Tape::add_bias(Var a, Var bias) {
  if (value(bias).cols() != 1 || value(bias).rows() != value(a).rows()) {
    throw std::invalid_argument("add_bias: bias must be a column matching the rows of the input");
  }
  Node n;
  n.op = Op::kAddBias;
  n.a = a.id;
  n.b = bias.id;
  n.requires_grad = requires_grad(a) || requires_grad(bias);
  n.value = value(a).colwise() + value(bias).col(0);
  return push(std::move(n));
}

Var Tape::tanh(Var a) {
  Node n;
  n.op = Op::kTanh;
  n.a = a.id;
  n.requires_grad = requires_grad(a);
  n.value = tanh_of(value(a));
  return push(std::move(n));
}

Var Tape::sigmoid(Var a) {
  Node n;
  n.op = Op::kSigmoid;
  n.a = a.id;
  n.requires_grad = requires_grad(a);
  n.value = sigmoid_of(value(a));
  return push(std::move(n));
}

Var Tape::exp(Var a) {
  Node n;
  n.op = Op::kExp;
  n.a = a.id;
  n.requires_grad = requires_grad(a);
  n.value = value(a).array().exp().matrix();
  return push(std::move(n));
}

Var Tape::square(Var a) {
  Node n;
  n.op = Op::kSquare;
  n.a = a.id;
  n.requires_grad = requires_grad(a);
  n.value = value(a).array().square().matrix();
  return push(std::move(n));
}

Var Tape::softplus(Var a) {
  Node n;
  n.op = Op::kSoftplus;
  n.a = a.id;
  n.requires_grad = requires_grad(a);
  n.value = value(a).unaryExpr([](double x) { return ad::softplus(x); });
  return push(std::move(n));
}

Var Tape::affine(Var a, double scale, double shift) {
  Node n;
  n.op = Op::kAffine;
  n.a = a.id;
  n.s0 = scale;
  n.requires_grad = requires_grad(a);
  n.value = (value(a).array() * scale + shift).matrix();
  return push(std::move(n));
}

Var Tape::concat_rows(Var top, Var bottom) {
  const Matrix& t = value(top);
  const Matrix& b = value(bottom);
  if (t.cols() != b.cols()) {
    throw std::invalid_argument("concat_rows: column mismatch");
  }
  Node n;
  n.op = Op::kConcatRows;
  n.a = top.id;
  n.b = bottom.id;
  n.requires_grad = requires_grad(top) || requires_grad(bottom);
  n.value.resize(t.rows() + b.rows(), t.cols());
  n.value.topRows(t.rows()) = t;
  n.value.bottomRows(b.rows()) = b;
  return push(std::move(n));
}

Var Tape::slice_rows(Var a, Index start, Index count) {
  const Matrix& v = value(a);
  if (start < 0 || count < 0 || start + count > v.rows()) {
    throw std::out_of_range("slice_rows: range outside input");
  }
  Node n;
  n.op = Op::kSliceRows;
  n.a = a.id;
  n.i0 = start;
  n.requires_grad = requires_grad(a);
  n.value = v.middleRows(start, count);
  return push(std::move(n));
}

Var Tape::mul_const(Var a, const Matrix& m) {
  Node n;
  n.op = Op::kMulConst;
  n.a = a.id;
  n.requires_grad = requires_grad(a);
  n.value = value(a).cwiseProduct(m);
  n.aux = m;
  return push(std::move(n));
}

Var Tape::weighted_sum(Var a, const Matrix& weights) {
  Node n;
  n.op = Op::kWeightedSum;
  n.a = a.id;
  n.requires_grad = requires_grad(a);
  n.value = Matrix::Constant(1, 1, value(a).cwiseProduct(weights).sum());
  n.aux = weights;
  return push(std::move(n));
}

void Tape::accumulate(std::int32_t id, const Matrix& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.requires_grad) {
    return;
  }
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var root) {
  if (value(root).size() != 1) {
    throw std::invalid_argument("backward: root must be a scalar");
  }
  for (Node& n : nodes_) {
    n.grad.resize(0, 0);
  }
  node(root).grad = Matrix::Ones(1, 1);

  for (std::int32_t i = root.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.grad.size() == 0 || n.op == Op::kLeaf) {
      continue;
    }
    // Inputs always precede their consumers, so references into nodes_
    // stay valid while we accumulate (no push happens during backward).
    const Matrix& g = n.grad;
    switch (n.op) {
      case Op::kMatMul: {
        const Node& a = nodes_[static_cast<std::size_t>(n.a)];
        const Node& b = nodes_[static_cast<std::size_t>(n.b)];
        if (a.requires_grad) accumulate(n.a, g * b.value.transpose());
        if (b.requires_grad) accumulate(n.b, a.value.transpose() * g);
        break;
      }
      case Op::kAdd:
        accumulate(n.a, g);
        accumulate(n.b, g);
        break;
      case Op::kSub:
        accumulate(n.a, g);
        accumulate(n.b, -g);
        break;
      case Op::kMul: {
        const Matrix& av = nodes_[static_cast<std::size_t>(n.a)].value;
        const Matrix& bv = nodes_[static_cast<std::size_t>(n.b)].value;
        accumulate(n.a, g.cwiseProduct(bv));
        accumulate(n.b, g.cwiseProduct(av));
        break;
      }
      case Op::kAddBias:
        accumulate(n.a, g);
        accumulate(n.b, g.rowwise().sum());
        break;
      case Op::kTanh:
        accumulate(n.a, g.cwiseProduct((1.0 - n.value.array().square()).matrix()));
        break;
      case Op::kSigmoid:
        accumulate(n.a, g.cwiseProduct((n.value.array() * (1.0 - n.value.array())).matrix()));
        break;
      case Op::kExp:
        accumulate(n.a, g.cwiseProduct(n.value));
        break;
      case Op::kSquare:
        accumulate(n.a, 2.0 * g.cwiseProduct(nodes_[static_cast<std::size_t>(n.a)].value));
        break;
      case Op::kSoftplus:
        accumulate(n.a, g.cwiseProduct(sigmoid_of(nodes_[static_cast<std::size_t>(n.a)].value)));
        break;
      case Op::kAffine:
        accumulate(n.a, n.s0 * g);
        break;
      case Op::kConcatRows: {
        const Index top = nodes_[static_cast<std::size_t>(n.a)].value.rows();
        accumulate(n.a, g.topRows(top));
        accumulate(n.b, g.bottomRows(g.rows() - top));
        break;
      }
      case Op::kSliceRows: {
        const Matrix& av = nodes_[static_cast<std::size_t>(n.a)].value;
        Matrix full = Matrix::Zero(av.rows(), av.cols());
        full.middleRows(n.i0, g.rows()) = g;
        accumulate(n.a, full);
        break;
      }
      case Op::kMulConst:
        accumulate(n.a, g.cwiseProduct(n.aux));
        break;
      case Op::kWeightedSum:
        accumulate(n.a, g(0, 0) * n.aux);
        break;
      case Op::kLeaf:
        break;
    }
  }
}

}  // namespace dxp::ad
