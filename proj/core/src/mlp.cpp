#include "piflow/mlp.hpp"

#include <cmath>

namespace piflow {

MlpHandle mlp_create(ParamStore& store, const std::string& prefix,
                     const std::vector<int>& widths, std::mt19937_64& rng,
                     bool zero_last) {
  if (widths.size() < 2) throw std::invalid_argument("mlp_create: need at least in/out widths");
  for (int w : widths)
    if (w <= 0) throw std::invalid_argument("mlp_create: widths must be positive");

  MlpHandle h;
  h.widths = widths;
  const std::size_t L = widths.size() - 1;
  for (std::size_t l = 0; l < L; ++l) {
    const int in = widths[l], out = widths[l + 1];
    Matrix W(in, out);
    Matrix b = Matrix::Zero(1, out);
    if (zero_last && l == L - 1) {
      W.setZero();
    } else {
      // uniform weight and bias init; nonzero biases spread the relu
      // kinks over the input domain (a zero-bias deep relu net is exactly
      // linear on rays from the origin)
      const double a = 1.0 / std::sqrt(static_cast<double>(in));
      std::uniform_real_distribution<double> u(-a, a);
      for (int i = 0; i < in; ++i)
        for (int j = 0; j < out; ++j) W(i, j) = u(rng);
      for (int j = 0; j < out; ++j) b(0, j) = u(rng);
    }
    h.w_ids.push_back(store.add(prefix + ".w" + std::to_string(l), std::move(W)));
    h.b_ids.push_back(store.add(prefix + ".b" + std::to_string(l), std::move(b)));
  }
  return h;
}

Value mlp_forward(Tape& tape, const ParamBind& bind, const MlpHandle& mlp, Value X) {
  if (tape.val(X).cols() != mlp.in())
    throw std::invalid_argument("mlp_forward: input width mismatch");
  Value h = X;
  const std::size_t L = mlp.w_ids.size();
  for (std::size_t l = 0; l < L; ++l) {
    Value pre = tape.add_rowvec(tape.matmul(h, bind[mlp.w_ids[l]]), bind[mlp.b_ids[l]]);
    h = (l + 1 < L) ? tape.relu(pre) : pre;
  }
  return h;
}

ad::Dual mlp_forward_dual(Tape& tape, const ParamBind& bind, const MlpHandle& mlp,
                          Value X, Value Xdot) {
  if (tape.val(X).cols() != mlp.in() || tape.val(Xdot).cols() != mlp.in())
    throw std::invalid_argument("mlp_forward_dual: input width mismatch");
  Value h = X, hd = Xdot;
  const std::size_t L = mlp.w_ids.size();
  for (std::size_t l = 0; l < L; ++l) {
    Value W = bind[mlp.w_ids[l]];
    Value pre = tape.add_rowvec(tape.matmul(h, W), bind[mlp.b_ids[l]]);
    Value pred = tape.matmul(hd, W);
    if (l + 1 < L) {
      Value mask = tape.relu_mask(pre);
      h = tape.relu(pre);
      hd = tape.mul(pred, mask);
    } else {
      h = pre;
      hd = pred;
    }
  }
  return {h, hd};
}

double directional_derivative(const ParamStore& store, const MlpHandle& mlp,
                              const Eigen::VectorXd& x, const Eigen::VectorXd& direction) {
  if (x.size() != direction.size() || x.size() != mlp.in())
    throw std::invalid_argument("directional_derivative: dimension mismatch");
  if (mlp.out() != 1)
    throw std::invalid_argument("directional_derivative: scalar-output net expected");
  Tape tape;
  ParamBind bind = ParamBind::make(tape, store);
  Value X = tape.constant(Matrix(x.transpose()));
  Value Xd = tape.constant(Matrix(direction.transpose()));
  ad::Dual out = mlp_forward_dual(tape, bind, mlp, X, Xd);
  return tape.val(out.d)(0, 0);
}

NeuralBasis neural_basis_create(ParamStore& store, const std::string& prefix, int dim, int P,
                                int hidden_width, int n_hidden, std::mt19937_64& rng) {
  std::vector<int> widths;
  widths.push_back(dim);
  for (int i = 0; i < n_hidden; ++i) widths.push_back(hidden_width);
  widths.push_back(P);
  NeuralBasis nb;
  nb.net = mlp_create(store, prefix, widths, rng);
  nb.dim = dim;
  nb.P = P;
  return nb;
}

Value assemble_basis(Tape& tape, const ParamBind& bind, const NeuralBasis& basis,
                     const Matrix& points) {
  if (points.rows() == 0) throw std::invalid_argument("assemble_basis: empty point list");
  if (points.cols() != basis.dim)
    throw std::invalid_argument("assemble_basis: point dimension mismatch");
  return mlp_forward(tape, bind, basis.net, tape.constant(points));
}

Value basis_spatial_gradient(Tape& tape, const ParamBind& bind, const NeuralBasis& basis,
                             const Matrix& points, int axis) {
  if (points.rows() == 0) throw std::invalid_argument("basis_spatial_gradient: empty point list");
  if (axis < 0 || axis >= basis.dim)
    throw std::invalid_argument("basis_spatial_gradient: axis out of range");
  Matrix dir = Matrix::Zero(points.rows(), points.cols());
  dir.col(axis).setOnes();
  ad::Dual out = mlp_forward_dual(tape, bind, basis.net,
                                  tape.constant(points), tape.constant(dir));
  return out.d;
}

Value reconstruct_u(Tape& tape, Value phi, Value c) {
  if (tape.val(phi).cols() != tape.val(c).rows())
    throw std::invalid_argument("reconstruct_u: coefficient length mismatch");
  return tape.matmul(phi, c);
}

BasisFns neural_basis_fns(const NeuralBasis& basis, const ParamBind& bind) {
  BasisFns f;
  f.P = basis.P;
  const NeuralBasis* nb = &basis;
  const ParamBind* b = &bind;
  f.values = [nb, b](Tape& t, const Matrix& pts) { return assemble_basis(t, *b, *nb, pts); };
  // Spatial derivative by a central difference of the values instead of
  // the exact piecewise-constant derivative. The exact derivative has no
  // bias gradient (the relu mask is treated as constant), so losses built
  // on it cannot move the kink positions and the basis degenerates to an
  // affine function; the value difference keeps them trainable.
  f.grad = [nb, b](Tape& t, const Matrix& pts, int axis) {
    const double delta = 1e-2;
    Matrix plus = pts, minus = pts;
    plus.col(axis).array() += delta / 2;
    minus.col(axis).array() -= delta / 2;
    Value d = t.sub(assemble_basis(t, *b, *nb, plus), assemble_basis(t, *b, *nb, minus));
    return t.scale(d, 1.0 / delta);
  };
  return f;
}

}  // namespace piflow
