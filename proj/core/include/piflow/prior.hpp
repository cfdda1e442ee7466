#pragma once

#include <functional>
#include <memory>
#include <random>

#include "piflow/flow.hpp"

namespace piflow {

/// Uniform tensor grid used for quadrature and field interpolation.
/// 1-d: nodes xs. 2-d: tensor of xs by ys, flattened ix*ny + iy.
struct StructuredGrid {
  std::vector<double> xs, ys;
  int dim() const { return ys.empty() ? 1 : 2; }
  int size() const { return static_cast<int>(xs.size() * std::max<std::size_t>(1, ys.size())); }
  Eigen::VectorXd point(int idx) const;
};

StructuredGrid uniform_grid_1d(int n, double a = 0.0, double b = 1.0);
StructuredGrid cell_center_grid_2d(int nx, int ny, double a = 0.0, double b = 1.0);

using KernelFn = std::function<double(const Eigen::VectorXd&, const Eigen::VectorXd&)>;
using MeanFn = std::function<double(const Eigen::VectorXd&)>;

/// Truncated Karhunen-Loeve basis from a Nystrom discretization of the
/// covariance kernel on a quadrature grid.
struct KleBasis {
  Eigen::VectorXd eigenvalues;     // nonincreasing, positive
  Eigen::MatrixXd eigenfunctions;  // grid_size x n_kle, orthonormal under weights
  StructuredGrid grid;
  Eigen::VectorXd weights;
  MeanFn mean;

  int n_modes() const { return static_cast<int>(eigenvalues.size()); }
  /// Gaussian-field value D~(x) = mean(x) + sum_i sqrt(l_i) e_i(x) xi_i,
  /// eigenfunctions interpolated linearly off-grid.
  double field(const Eigen::VectorXd& xi, const Eigen::VectorXd& x) const;
};

KleBasis kle_build(const KernelFn& kernel, const StructuredGrid& grid,
                   const Eigen::VectorXd& weights, int n_kle, const MeanFn& mean);

Eigen::VectorXd trapezoid_weights(int n, double a = 0.0, double b = 1.0);

/// Layered vertical-gradient velocity model: v continuous, piecewise
/// linear in depth, v = v0 at Y = 0.
struct TomoParams {
  double gy[4];
  double h[4];
};
double velocity_eval(const TomoParams& p, double v0, double X, double Y);

double normal_cdf(double x);
double normal_quantile(double p);

enum class PriorKind { Grf1d, Mixed1d, Darcy2d, Kinematics, Tomography };

/// lambda-space prior with a diagonal-Gaussian log-density plus the
/// per-experiment field realization. Uniform depth parameters of the
/// tomography case enter through the Gaussian-quantile reparameterization
/// so the lambda space stays unbounded with a smooth density.
struct FieldPrior {
  PriorKind kind;
  int F = 0;
  Eigen::VectorXd mu, sigma;
  std::shared_ptr<KleBasis> kle;
  double v0 = 2.0;  // tomography surface velocity (config value)

  Matrix sample(int n, std::mt19937_64& rng) const;
  double log_density(const Eigen::VectorXd& lambda) const;
  Value log_density_tape(Tape& tape, Value lambda_batch) const;
  LogDensityFn log_density_fn() const;

  /// D(x), K(x) or v(x) for one lambda draw.
  double field_value(const Eigen::VectorXd& lambda, const Eigen::VectorXd& x) const;
};

FieldPrior make_grf1d_prior(int n_kle = 10, int grid_n = 201);
FieldPrior make_mixed1d_prior(int n_kle = 10, int grid_n = 201);
FieldPrior make_darcy_prior(int n_kle = 15, int nx = 64);
FieldPrior make_kinematics_prior();
FieldPrior make_tomography_prior(double v0 = 2.0);

TomoParams tomo_physical(const Eigen::VectorXd& lambda7);
Eigen::VectorXd tomo_unconstrained(const TomoParams& p);  // inverse reparameterization

}  // namespace piflow
