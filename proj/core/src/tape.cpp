#include "piflow/tape.hpp"

namespace piflow::ad {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string("tape: shape mismatch in ") + op + ": " +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

}  // namespace

Matrix Tape::compute(const Node& n, const std::vector<Matrix>& v) const {
  switch (n.op) {
    case Op::Input:
    case Op::Constant: return n.value;
    case Op::Add: return v[n.a] + v[n.b];
    case Op::Sub: return v[n.a] - v[n.b];
    case Op::Neg: return -v[n.a];
    case Op::Mul: return v[n.a].cwiseProduct(v[n.b]);
    case Op::MatMul: return v[n.a] * v[n.b];
    case Op::Exp: return v[n.a].array().exp().matrix();
    case Op::Log: return v[n.a].array().log().matrix();
    case Op::Sin: return v[n.a].array().sin().matrix();
    case Op::Cos: return v[n.a].array().cos().matrix();
    case Op::Relu: return v[n.a].cwiseMax(0.0);
    case Op::ReluMask: return (v[n.a].array() > 0.0).cast<double>().matrix();
    case Op::Square: return v[n.a].cwiseProduct(v[n.a]);
    case Op::Reciprocal: return v[n.a].cwiseInverse();
    case Op::Scale: return v[n.a] * n.s;
    case Op::AddScalar: return (v[n.a].array() + n.s).matrix();
    case Op::Sum: return Matrix::Constant(1, 1, v[n.a].sum());
    case Op::Mean: return Matrix::Constant(1, 1, v[n.a].mean());
    case Op::RowSum: return v[n.a].rowwise().sum();
    case Op::AddRowVec: return v[n.a].rowwise() + v[n.b].row(0);
    case Op::Cols: return v[n.a].middleCols(n.i0, n.i1);
    case Op::HCat: {
      Matrix out(v[n.a].rows(), v[n.a].cols() + v[n.b].cols());
      out << v[n.a], v[n.b];
      return out;
    }
    case Op::Transpose: return v[n.a].transpose();
    case Op::PermuteCols: {
      Matrix out(v[n.a].rows(), v[n.a].cols());
      for (int k = 0; k < out.cols(); ++k) out.col(k) = v[n.a].col(n.perm[k]);
      return out;
    }
  }
  throw std::logic_error("tape: unknown op");
}

Value Tape::add(Value a, Value b) {
  require_same_shape(val(a), val(b), "add");
  return push({Op::Add, a.id, b.id, 0, 0, 0.0, {}, val(a) + val(b)});
}
Value Tape::sub(Value a, Value b) {
  require_same_shape(val(a), val(b), "sub");
  return push({Op::Sub, a.id, b.id, 0, 0, 0.0, {}, val(a) - val(b)});
}
Value Tape::neg(Value a) { return push({Op::Neg, a.id, -1, 0, 0, 0.0, {}, -val(a)}); }
Value Tape::mul(Value a, Value b) {
  require_same_shape(val(a), val(b), "mul");
  return push({Op::Mul, a.id, b.id, 0, 0, 0.0, {}, val(a).cwiseProduct(val(b))});
}
Value Tape::matmul(Value a, Value b) {
  if (val(a).cols() != val(b).rows())
    throw std::invalid_argument("tape: inner dimension mismatch in matmul");
  return push({Op::MatMul, a.id, b.id, 0, 0, 0.0, {}, val(a) * val(b)});
}
Value Tape::exp(Value a) { return push({Op::Exp, a.id, -1, 0, 0, 0.0, {}, val(a).array().exp().matrix()}); }
Value Tape::log(Value a) { return push({Op::Log, a.id, -1, 0, 0, 0.0, {}, val(a).array().log().matrix()}); }
Value Tape::sin(Value a) { return push({Op::Sin, a.id, -1, 0, 0, 0.0, {}, val(a).array().sin().matrix()}); }
Value Tape::cos(Value a) { return push({Op::Cos, a.id, -1, 0, 0, 0.0, {}, val(a).array().cos().matrix()}); }
Value Tape::relu(Value a) { return push({Op::Relu, a.id, -1, 0, 0, 0.0, {}, val(a).cwiseMax(0.0)}); }
Value Tape::relu_mask(Value a) {
  return push({Op::ReluMask, a.id, -1, 0, 0, 0.0, {}, (val(a).array() > 0.0).cast<double>().matrix()});
}
Value Tape::square(Value a) { return push({Op::Square, a.id, -1, 0, 0, 0.0, {}, val(a).cwiseProduct(val(a))}); }
Value Tape::reciprocal(Value a) { return push({Op::Reciprocal, a.id, -1, 0, 0, 0.0, {}, val(a).cwiseInverse()}); }
Value Tape::scale(Value a, double s) { return push({Op::Scale, a.id, -1, 0, 0, s, {}, val(a) * s}); }
Value Tape::add_scalar(Value a, double s) {
  return push({Op::AddScalar, a.id, -1, 0, 0, s, {}, (val(a).array() + s).matrix()});
}
Value Tape::sum(Value a) { return push({Op::Sum, a.id, -1, 0, 0, 0.0, {}, Matrix::Constant(1, 1, val(a).sum())}); }
Value Tape::mean(Value a) { return push({Op::Mean, a.id, -1, 0, 0, 0.0, {}, Matrix::Constant(1, 1, val(a).mean())}); }
Value Tape::row_sum(Value a) { return push({Op::RowSum, a.id, -1, 0, 0, 0.0, {}, val(a).rowwise().sum()}); }
Value Tape::add_rowvec(Value m, Value row) {
  if (val(row).rows() != 1 || val(row).cols() != val(m).cols())
    throw std::invalid_argument("tape: add_rowvec expects a 1xM row matching the matrix width");
  return push({Op::AddRowVec, m.id, row.id, 0, 0, 0.0, {}, val(m).rowwise() + val(row).row(0)});
}
Value Tape::cols(Value a, int start, int n) {
  if (start < 0 || n < 0 || start + n > val(a).cols())
    throw std::invalid_argument("tape: cols() slice out of range");
  return push({Op::Cols, a.id, -1, start, n, 0.0, {}, val(a).middleCols(start, n)});
}
Value Tape::hcat(Value a, Value b) {
  if (val(a).rows() != val(b).rows())
    throw std::invalid_argument("tape: hcat row mismatch");
  Matrix out(val(a).rows(), val(a).cols() + val(b).cols());
  out << val(a), val(b);
  return push({Op::HCat, a.id, b.id, static_cast<int>(val(a).cols()), 0, 0.0, {}, std::move(out)});
}
Value Tape::transpose(Value a) { return push({Op::Transpose, a.id, -1, 0, 0, 0.0, {}, val(a).transpose()}); }
Value Tape::permute_cols(Value a, const std::vector<int>& perm) {
  if (static_cast<int>(perm.size()) != val(a).cols())
    throw std::invalid_argument("tape: permutation length mismatch");
  Matrix out(val(a).rows(), val(a).cols());
  for (int k = 0; k < out.cols(); ++k) out.col(k) = val(a).col(perm[k]);
  Node n{Op::PermuteCols, a.id, -1, 0, 0, 0.0, perm, std::move(out)};
  return push(std::move(n));
}

std::vector<Matrix> Tape::gradients(Value output) const {
  const Matrix& out = val(output);
  if (out.rows() != 1 || out.cols() != 1)
    throw std::invalid_argument("tape: gradients() requires a scalar output node");

  std::vector<Matrix> g(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    g[i] = Matrix::Zero(nodes_[i].value.rows(), nodes_[i].value.cols());
  g[output.id](0, 0) = 1.0;

  for (int i = output.id; i >= 0; --i) {
    const Node& n = nodes_[i];
    const Matrix& gi = g[i];
    if (gi.isZero(0.0)) continue;
    switch (n.op) {
      case Op::Input:
      case Op::Constant:
      case Op::ReluMask:
        break;
      case Op::Add: g[n.a] += gi; g[n.b] += gi; break;
      case Op::Sub: g[n.a] += gi; g[n.b] -= gi; break;
      case Op::Neg: g[n.a] -= gi; break;
      case Op::Mul:
        g[n.a] += gi.cwiseProduct(nodes_[n.b].value);
        g[n.b] += gi.cwiseProduct(nodes_[n.a].value);
        break;
      case Op::MatMul:
        g[n.a] += gi * nodes_[n.b].value.transpose();
        g[n.b] += nodes_[n.a].value.transpose() * gi;
        break;
      case Op::Exp: g[n.a] += gi.cwiseProduct(n.value); break;
      case Op::Log: g[n.a] += gi.cwiseProduct(nodes_[n.a].value.cwiseInverse()); break;
      case Op::Sin: g[n.a] += gi.cwiseProduct(nodes_[n.a].value.array().cos().matrix()); break;
      case Op::Cos: g[n.a] -= gi.cwiseProduct(nodes_[n.a].value.array().sin().matrix()); break;
      case Op::Relu:
        g[n.a] += gi.cwiseProduct((nodes_[n.a].value.array() > 0.0).cast<double>().matrix());
        break;
      case Op::Square: g[n.a] += 2.0 * gi.cwiseProduct(nodes_[n.a].value); break;
      case Op::Reciprocal: g[n.a] -= gi.cwiseProduct(n.value.cwiseProduct(n.value)); break;
      case Op::Scale: g[n.a] += gi * n.s; break;
      case Op::AddScalar: g[n.a] += gi; break;
      case Op::Sum: g[n.a].array() += gi(0, 0); break;
      case Op::Mean: g[n.a].array() += gi(0, 0) / static_cast<double>(nodes_[n.a].value.size()); break;
      case Op::RowSum: g[n.a].colwise() += gi.col(0); break;
      case Op::AddRowVec:
        g[n.a] += gi;
        g[n.b].row(0) += gi.colwise().sum();
        break;
      case Op::Cols: g[n.a].middleCols(n.i0, n.i1) += gi; break;
      case Op::HCat:
        g[n.a] += gi.leftCols(n.i0);
        g[n.b] += gi.rightCols(gi.cols() - n.i0);
        break;
      case Op::Transpose: g[n.a] += gi.transpose(); break;
      case Op::PermuteCols:
        for (int k = 0; k < gi.cols(); ++k) g[n.a].col(n.perm[k]) += gi.col(k);
        break;
    }
  }
  return g;
}

bool Tape::replay_matches() const {
  std::vector<Matrix> vals(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    vals[i] = compute(nodes_[i], vals);
    const Matrix& cached = nodes_[i].value;
    if (vals[i].rows() != cached.rows() || vals[i].cols() != cached.cols()) return false;
    for (int r = 0; r < cached.rows(); ++r)
      for (int c = 0; c < cached.cols(); ++c)
        if (vals[i](r, c) != cached(r, c) && !(std::isnan(vals[i](r, c)) && std::isnan(cached(r, c))))
          return false;
  }
  return true;
}

}  // namespace piflow::ad
