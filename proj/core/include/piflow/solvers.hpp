#pragma once

#include <functional>
#include <random>

#include "piflow/prior.hpp"

namespace piflow {

/// 1-d diffusion -(D u')' = f on [0,1] with Dirichlet ends, linear FEM
/// on the uniform node grid carried by D_nodes. Element coefficients
/// use the midpoint value of D.
Eigen::VectorXd fem_diffusion_1d(const Eigen::VectorXd& D_nodes, double f, double u0, double u1);

/// Darcy -div(K grad u) = 0 on [0,1]^2, finite volume on nx x ny cell
/// centers with harmonic-mean face transmissibilities. u = 1 at x1 = 0,
/// u = 0 at x1 = 1 (ghost elimination), zero flux on the x2 faces.
/// Returned flattened ix*ny + iy. Throws if the CG solve stalls.
Eigen::VectorXd darcy_solve_2d(const Eigen::VectorXd& K_cells, int nx, int ny,
                               double cg_tol = 1e-12, int max_iter = 20000);

/// First-arrival traveltime |grad T| = 1/v by Godunov fast sweeping on
/// an n x n node grid with spacing h; source at node (si, sj), fixed
/// with its 8 neighbors initialized from local distance and slowness.
Eigen::MatrixXd fast_sweep_eikonal(const Eigen::MatrixXd& v, double h, int si, int sj,
                                   double tol = 1e-8, int max_sweeps = 1000);

/// Articulated arm endpoint: rail offset x1 plus three rotating links
/// of lengths 0.5, 0.5, 1.0.
Eigen::Vector2d kinematics_forward(const Eigen::Vector4d& x);

struct ObservationSet {
  Matrix sensors;            // O x d
  Eigen::VectorXd clean;
  Eigen::VectorXd noisy;
  double sigma = 0.0;
  uint64_t seed = 0;
};

/// Restrict a field to sensor locations and add iid N(0, sigma^2) noise.
ObservationSet observe(const std::function<double(const Eigen::VectorXd&)>& field,
                       const Matrix& sensors, double sigma, uint64_t seed);

Matrix evenly_spaced_sensors_1d(int n, double a = 0.0, double b = 1.0);
Matrix sensor_grid_2d(int nx, int ny, double a, double b);

}  // namespace piflow
