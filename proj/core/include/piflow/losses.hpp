#pragma once

#include "piflow/flow.hpp"
#include "piflow/prior.hpp"

namespace piflow {

struct LossWeights {
  double alpha = 1.0;   // equation
  double beta = 10.0;   // boundary
  double gamma = 1.0;   // independence
  double rho = 1e-3;    // inversion regularization
  void validate() const;
};

/// Density-based independence loss over a minibatch: penalizes the
/// log-density mismatch between swapping the model latent for a fresh
/// standard-normal draw. Zero iff q(c,z) factorizes with z ~ N(0,I).
Value independence_loss(Tape& tape, const ParamBind& bind, const FlowModel& model,
                        const LogDensityFn& log_prior, Value lambda_batch, Value z_batch);

/// V-statistic MMD with the inverse multiquadric kernel
/// k(x,y) = 1 / (1 + ||(x-y)/h||^2), all pairs including the diagonal.
Value mmd(Tape& tape, Value X, Value Y, double bandwidth);
double mmd(const Matrix& X, const Matrix& Y, double bandwidth);

/// Field value of training sample j at point x (K, D or v).
using SampleFieldFn = std::function<double(int sample_idx, const Eigen::VectorXd& x)>;

/// Test boxes for the variational (weak-form) equation losses, with the
/// two independent uniform draws per box.
struct Boxes1d {
  Eigen::VectorXd centers;
  double radius = 0.1;
  Eigen::VectorXd x, xp;
};
Boxes1d sample_boxes_1d(int n, double radius, double a, double b, std::mt19937_64& rng);

struct Boxes2d {
  Matrix centers;  // n x 2
  double radius = 0.1;
  Eigen::VectorXd x1, x1p, x2, x2p;
};
Boxes2d sample_boxes_2d(int n, double radius, double a, double b, std::mt19937_64& rng);

/// Unbiased estimate of the squared weak residual of -(K u')' = f on
/// [0,1]: boundary fluxes of each test box paired with two independent
/// source draws. C is the N x P coefficient batch.
Value equation_loss_diffusion_1d(Tape& tape, const BasisFns& basis, Value C,
                                 const SampleFieldFn& K_eval,
                                 const std::function<double(double)>& f,
                                 const Boxes1d& boxes);

/// 2-d analogue for -div(K grad u) = f on [0,1]^2: four face fluxes per
/// box, each evaluated at a uniform draw along the face.
Value equation_loss_darcy_2d(Tape& tape, const BasisFns& basis, Value C,
                             const SampleFieldFn& K_eval,
                             const std::function<double(const Eigen::VectorXd&)>& f,
                             const Boxes2d& boxes);

struct EikonalLossOut {
  Value factored;
  Value source;
};

/// Factored eikonal collocation residual for tau = sum c_i phi_i with
/// T = T0 tau, T0 = |x - x_s| / v(x_s), plus the tau(x_s) = 1 pin.
EikonalLossOut equation_loss_eikonal(Tape& tape, const BasisFns& basis, Value C,
                                     const SampleFieldFn& v_eval, const Matrix& colloc,
                                     const Eigen::Vector2d& source);

/// Uniform collocation points over [lo,hi]^2 excluding a disc around
/// the source.
Matrix sample_collocation_2d(int m, double lo, double hi, const Eigen::Vector2d& source,
                             double exclude_radius, std::mt19937_64& rng);

struct BoundarySpec {
  Matrix dirichlet_pts;               // n_d x dim
  Eigen::VectorXd dirichlet_vals;
  Matrix neumann_pts;                 // n_n x dim (may be empty)
  int neumann_axis = -1;              // zero normal derivative along this axis
};

/// Mean squared boundary violation across batch samples and boundary
/// points.
Value boundary_loss(Tape& tape, const BasisFns& basis, Value C, const BoundarySpec& bc);

/// (1/N) sum_i ||u_i - uhat_i||^2 over batch rows.
Value data_loss(Tape& tape, Value u_pred, Value u_label);

struct WeightedTerm {
  std::string name;
  Value value;
  double weight = 1.0;
};

/// Weighted sum of scalar loss terms; errors naming any non-finite term.
Value total_loss(Tape& tape, const std::vector<WeightedTerm>& terms);

}  // namespace piflow
