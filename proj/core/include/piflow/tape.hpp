#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace piflow::ad {

using Matrix = Eigen::MatrixXd;

/// Handle to a node on a Tape. Valid only for the tape that created it.
struct Value {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Append-only record of matrix-valued primitive operations with cached
/// primal values. Node ids are strictly increasing and every parent
/// precedes its child, so a single reverse sweep computes all adjoints.
class Tape {
 public:
  enum class Op : uint8_t {
    Input, Constant,
    Add, Sub, Neg, Mul, MatMul,
    Exp, Log, Sin, Cos, Relu, ReluMask, Square, Reciprocal,
    Scale, AddScalar,
    Sum, Mean, RowSum,
    AddRowVec, Cols, HCat, Transpose, PermuteCols,
  };

  struct Node {
    Op op;
    int a = -1, b = -1;
    int i0 = 0, i1 = 0;       // slice bounds / aux
    double s = 0.0;           // scalar aux
    std::vector<int> perm;    // PermuteCols only
    Matrix value;
  };

  Value input(Matrix v) { return push({Op::Input, -1, -1, 0, 0, 0.0, {}, std::move(v)}); }
  Value constant(Matrix v) { return push({Op::Constant, -1, -1, 0, 0, 0.0, {}, std::move(v)}); }
  Value constant(double s) { return constant(Matrix::Constant(1, 1, s)); }

  const Matrix& val(Value x) const { return nodes_.at(x.id).value; }
  double scalar(Value x) const {
    const Matrix& m = val(x);
    if (m.rows() != 1 || m.cols() != 1)
      throw std::invalid_argument("tape: scalar() on non-scalar node");
    return m(0, 0);
  }

  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value neg(Value a);
  Value mul(Value a, Value b);        // elementwise
  Value matmul(Value a, Value b);
  Value exp(Value a);
  Value log(Value a);
  Value sin(Value a);
  Value cos(Value a);
  Value relu(Value a);
  Value relu_mask(Value a);           // 1[x>0], zero gradient
  Value square(Value a);
  Value reciprocal(Value a);
  Value scale(Value a, double s);
  Value add_scalar(Value a, double s);
  Value sum(Value a);                 // -> 1x1
  Value mean(Value a);                // -> 1x1
  Value row_sum(Value a);             // NxM -> Nx1
  Value add_rowvec(Value m, Value row);  // broadcast 1xM row onto NxM
  Value cols(Value a, int start, int n);
  Value hcat(Value a, Value b);
  Value transpose(Value a);
  Value permute_cols(Value a, const std::vector<int>& perm);  // out[:,k] = in[:,perm[k]]

  /// Adjoint of `output` (must be 1x1) with respect to every node.
  /// Unreached nodes get zero-shaped gradients.
  std::vector<Matrix> gradients(Value output) const;

  std::size_t size() const { return nodes_.size(); }
  const Node& node(int id) const { return nodes_.at(id); }

  /// Replays all primal computations and checks bit-exact agreement
  /// with the cached values.
  bool replay_matches() const;

 private:
  Value push(Node n) {
    nodes_.push_back(std::move(n));
    return Value{static_cast<int>(nodes_.size()) - 1};
  }
  Matrix compute(const Node& n, const std::vector<Matrix>& vals) const;
  std::vector<Node> nodes_;
};

/// Forward-mode pair used for spatial derivatives; both halves live on
/// the tape so parameter gradients of directional derivatives come for
/// free from the reverse sweep.
struct Dual {
  Value v;  // primal
  Value d;  // tangent
};

}  // namespace piflow::ad
