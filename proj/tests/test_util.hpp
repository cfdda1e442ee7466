#pragma once

#include <functional>
#include <random>
#include <vector>

#include "doctest.h"
#include "piflow/tape.hpp"

namespace testutil {

using piflow::ad::Matrix;
using piflow::ad::Tape;
using piflow::ad::Value;

using BuildFn = std::function<Value(Tape&, const std::vector<Value>&)>;

inline double eval_scalar(const std::vector<Matrix>& inputs, const BuildFn& f) {
  Tape tape;
  std::vector<Value> leaves;
  for (const Matrix& m : inputs) leaves.push_back(tape.input(m));
  return tape.scalar(f(tape, leaves));
}

/// Central finite differences on every input entry vs the reverse sweep.
inline void check_gradients(const std::vector<Matrix>& inputs, const BuildFn& f,
                            double tol = 1e-6, double eps = 1e-5) {
  Tape tape;
  std::vector<Value> leaves;
  for (const Matrix& m : inputs) leaves.push_back(tape.input(m));
  Value out = f(tape, leaves);
  std::vector<Matrix> grads = tape.gradients(out);

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Matrix& g = grads[leaves[k].id];
    for (Eigen::Index r = 0; r < inputs[k].rows(); ++r)
      for (Eigen::Index c = 0; c < inputs[k].cols(); ++c) {
        std::vector<Matrix> plus = inputs, minus = inputs;
        plus[k](r, c) += eps;
        minus[k](r, c) -= eps;
        const double fd = (eval_scalar(plus, f) - eval_scalar(minus, f)) / (2 * eps);
        const double got = g.size() == 0 ? 0.0 : g(r, c);
        CAPTURE(k);
        CAPTURE(r);
        CAPTURE(c);
        CHECK(std::abs(got - fd) <= tol * std::max(1.0, std::abs(fd)));
      }
  }
}

inline Matrix random_matrix(int r, int c, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = u(rng);
  return m;
}

}  // namespace testutil
