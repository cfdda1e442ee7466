#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "piflow/tape.hpp"

namespace piflow {

using ad::Matrix;
using ad::Tape;
using ad::Value;

/// Flat list of named parameter arrays. Models hold indices into the
/// store; training mutates the store in place.
struct ParamStore {
  std::vector<std::string> names;
  std::vector<Matrix> values;

  int add(std::string name, Matrix v) {
    names.push_back(std::move(name));
    values.push_back(std::move(v));
    return static_cast<int>(values.size()) - 1;
  }
  int find(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    return -1;
  }
  std::size_t size() const { return values.size(); }
};

/// Tape leaves for every store entry, valid for one tape lifetime.
struct ParamBind {
  std::vector<Value> nodes;
  static ParamBind make(Tape& tape, const ParamStore& store) {
    ParamBind b;
    b.nodes.reserve(store.size());
    for (const Matrix& v : store.values) b.nodes.push_back(tape.input(v));
    return b;
  }
  Value operator[](int i) const { return nodes.at(i); }
};

/// Fully-connected net: ReLU on hidden layers, identity output.
/// Weights are stored input-major (in x out), applied as X*W + b.
struct MlpHandle {
  std::vector<int> widths;
  std::vector<int> w_ids, b_ids;
  int in() const { return widths.front(); }
  int out() const { return widths.back(); }
};

/// Zero-mean uniform init scaled by 1/sqrt(fan_in). With zero_last the
/// final layer starts at zero so the net starts as the zero map.
MlpHandle mlp_create(ParamStore& store, const std::string& prefix,
                     const std::vector<int>& widths, std::mt19937_64& rng,
                     bool zero_last = false);

/// X: N x in -> N x out.
Value mlp_forward(Tape& tape, const ParamBind& bind, const MlpHandle& mlp, Value X);

/// Forward pass with a tangent direction pushed through: returns the
/// primal output and the directional derivative along Xdot. ReLU
/// tangents use the zero-gradient activation mask, so the tangent stays
/// differentiable with respect to the weights.
ad::Dual mlp_forward_dual(Tape& tape, const ParamBind& bind, const MlpHandle& mlp,
                          Value X, Value Xdot);

/// Directional derivative of the scalar-output composition f at x along
/// a direction of matching dimension. f is given by an MLP handle here;
/// the general primitive is mlp_forward_dual.
double directional_derivative(const ParamStore& store, const MlpHandle& mlp,
                              const Eigen::VectorXd& x, const Eigen::VectorXd& direction);

/// MLP with d spatial inputs and P basis outputs (NB-Net).
struct NeuralBasis {
  MlpHandle net;
  int dim;
  int P;
};

NeuralBasis neural_basis_create(ParamStore& store, const std::string& prefix, int dim, int P,
                                int hidden_width, int n_hidden, std::mt19937_64& rng);

/// Basis matrix at M points (M x dim): row j is phi(x_j). Errors on an
/// empty point list.
Value assemble_basis(Tape& tape, const ParamBind& bind, const NeuralBasis& basis,
                     const Matrix& points);

/// d(phi_i)/d(x_axis) at each point, as an M x P matrix.
Value basis_spatial_gradient(Tape& tape, const ParamBind& bind, const NeuralBasis& basis,
                             const Matrix& points, int axis);

/// u = Phi c for a single coefficient vector (column). Returns M x 1.
Value reconstruct_u(Tape& tape, Value phi, Value c);

/// Closures over "some basis" so losses can run against either the
/// NB-Net or closed-form test bases.
struct BasisFns {
  int P = 0;
  std::function<Value(Tape&, const Matrix& points)> values;
  std::function<Value(Tape&, const Matrix& points, int axis)> grad;
};

BasisFns neural_basis_fns(const NeuralBasis& basis, const ParamBind& bind);

}  // namespace piflow
