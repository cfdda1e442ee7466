#include "piflow/prior.hpp"

#include <cmath>
#include <numbers>

namespace piflow {

Eigen::VectorXd StructuredGrid::point(int idx) const {
  if (dim() == 1) {
    Eigen::VectorXd p(1);
    p << xs.at(idx);
    return p;
  }
  const int ny = static_cast<int>(ys.size());
  Eigen::VectorXd p(2);
  p << xs.at(idx / ny), ys.at(idx % ny);
  return p;
}

StructuredGrid uniform_grid_1d(int n, double a, double b) {
  StructuredGrid g;
  g.xs.resize(n);
  for (int i = 0; i < n; ++i) g.xs[i] = a + (b - a) * i / (n - 1);
  return g;
}

StructuredGrid cell_center_grid_2d(int nx, int ny, double a, double b) {
  StructuredGrid g;
  const double hx = (b - a) / nx, hy = (b - a) / ny;
  g.xs.resize(nx);
  g.ys.resize(ny);
  for (int i = 0; i < nx; ++i) g.xs[i] = a + (i + 0.5) * hx;
  for (int j = 0; j < ny; ++j) g.ys[j] = a + (j + 0.5) * hy;
  return g;
}

Eigen::VectorXd trapezoid_weights(int n, double a, double b) {
  const double h = (b - a) / (n - 1);
  Eigen::VectorXd w = Eigen::VectorXd::Constant(n, h);
  w(0) = w(n - 1) = h / 2;
  return w;
}

KleBasis kle_build(const KernelFn& kernel, const StructuredGrid& grid,
                   const Eigen::VectorXd& weights, int n_kle, const MeanFn& mean) {
  const int n = grid.size();
  if (weights.size() != n) throw std::invalid_argument("kle_build: weight/grid size mismatch");
  Eigen::MatrixXd C(n, n);
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd xi = grid.point(i);
    for (int j = i; j < n; ++j) {
      C(i, j) = C(j, i) = kernel(xi, grid.point(j));
    }
  }
  // Symmetrized Nystrom: eigendecompose W^1/2 C W^1/2.
  Eigen::VectorXd sqw = weights.cwiseSqrt();
  Eigen::MatrixXd A = sqw.asDiagonal() * C * sqw.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  if (es.info() != Eigen::Success) throw std::runtime_error("kle_build: eigendecomposition failed");

  KleBasis basis;
  basis.grid = grid;
  basis.weights = weights;
  basis.mean = mean;
  basis.eigenvalues.resize(n_kle);
  basis.eigenfunctions.resize(n, n_kle);
  for (int k = 0; k < n_kle; ++k) {
    const int src = n - 1 - k;  // descending order
    const double lam = es.eigenvalues()(src);
    if (lam <= 0.0)
      throw std::runtime_error("kle_build: fewer than n_kle positive eigenvalues");
    basis.eigenvalues(k) = lam;
    basis.eigenfunctions.col(k) = es.eigenvectors().col(src).cwiseQuotient(sqw);
  }
  return basis;
}

namespace {

// Linear (1-d) or bilinear (2-d) interpolation of per-grid-point values.
double interp_grid(const StructuredGrid& g, const Eigen::Ref<const Eigen::VectorXd>& vals,
                   const Eigen::VectorXd& x) {
  auto locate = [](const std::vector<double>& xs, double q) {
    if (q < xs.front() - 1e-12 || q > xs.back() + 1e-12)
      throw std::out_of_range("field interpolation: point outside grid");
    const double ql = std::clamp(q, xs.front(), xs.back());
    int i = static_cast<int>(std::upper_bound(xs.begin(), xs.end(), ql) - xs.begin()) - 1;
    i = std::clamp(i, 0, static_cast<int>(xs.size()) - 2);
    const double t = (ql - xs[i]) / (xs[i + 1] - xs[i]);
    return std::pair<int, double>{i, t};
  };
  if (g.dim() == 1) {
    auto [i, t] = locate(g.xs, x(0));
    return (1 - t) * vals(i) + t * vals(i + 1);
  }
  const int ny = static_cast<int>(g.ys.size());
  // Cell-center grids: clamp into the interior band instead of erroring
  // inside the half-cell margin.
  auto locate2 = [&](const std::vector<double>& xs, double q) {
    if (q < xs.front()) return std::pair<int, double>{0, 0.0};
    if (q > xs.back()) return std::pair<int, double>{static_cast<int>(xs.size()) - 2, 1.0};
    return locate(xs, q);
  };
  auto [i, tx] = locate2(g.xs, x(0));
  auto [j, ty] = locate2(g.ys, x(1));
  const double v00 = vals(i * ny + j), v01 = vals(i * ny + j + 1);
  const double v10 = vals((i + 1) * ny + j), v11 = vals((i + 1) * ny + j + 1);
  return (1 - tx) * ((1 - ty) * v00 + ty * v01) + tx * ((1 - ty) * v10 + ty * v11);
}

}  // namespace

double KleBasis::field(const Eigen::VectorXd& xi, const Eigen::VectorXd& x) const {
  if (xi.size() != n_modes()) throw std::invalid_argument("kle field: coefficient length mismatch");
  double v = mean(x);
  for (int k = 0; k < n_modes(); ++k)
    v += std::sqrt(eigenvalues(k)) * interp_grid(grid, eigenfunctions.col(k), x) * xi(k);
  return v;
}

double velocity_eval(const TomoParams& p, double v0, double X, double Y) {
  (void)X;  // g_X = 0
  double total = p.h[0] + p.h[1] + p.h[2] + p.h[3];
  if (std::abs(total - 4.0) > 1e-9)
    throw std::invalid_argument("velocity_eval: cumulative layer depths must equal 4");
  for (int i = 0; i < 4; ++i)
    if (p.h[i] <= 0.0) throw std::invalid_argument("velocity_eval: layer depths must be positive");
  if (Y < 0.0 || Y > 4.0 + 1e-12) throw std::out_of_range("velocity_eval: Y outside [0,4]");
  double v = v0, y = Y;
  for (int i = 0; i < 4; ++i) {
    const double seg = std::min(y, p.h[i]);
    v += p.gy[i] * seg;
    y -= seg;
    if (y <= 0.0) break;
  }
  return v;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_quantile(double p) {
  if (p <= 0.0 || p >= 1.0) throw std::domain_error("normal_quantile: p in (0,1) required");
  // Acklam's rational approximation, polished by one Newton step.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                             1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                             6.680131188771972e+01, -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                             -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                             3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= 1 - plow) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    const double q = std::sqrt(-2 * std::log(1 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  const double e = normal_cdf(x) - p;
  x -= e * std::sqrt(2 * std::numbers::pi) * std::exp(x * x / 2);
  return x;
}

Matrix FieldPrior::sample(int n, std::mt19937_64& rng) const {
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix out(n, F);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < F; ++k) out(i, k) = mu(k) + sigma(k) * nd(rng);
  return out;
}

double FieldPrior::log_density(const Eigen::VectorXd& lambda) const {
  if (lambda.size() != F) throw std::invalid_argument("prior log_density: dimension mismatch");
  double lp = 0.0;
  for (int k = 0; k < F; ++k) {
    const double t = (lambda(k) - mu(k)) / sigma(k);
    lp += -0.5 * t * t - std::log(sigma(k)) - 0.5 * std::log(2.0 * std::numbers::pi);
  }
  return lp;
}

Value FieldPrior::log_density_tape(Tape& tape, Value lambda_batch) const {
  const int n = static_cast<int>(tape.val(lambda_batch).rows());
  if (tape.val(lambda_batch).cols() != F)
    throw std::invalid_argument("prior log_density_tape: dimension mismatch");
  Matrix mu_row = mu.transpose();
  Matrix inv_sigma = Matrix::Ones(n, F);
  inv_sigma.array().rowwise() /= sigma.transpose().array();
  Value centered = tape.add_rowvec(lambda_batch, tape.constant(Matrix(-mu_row)));
  Value t = tape.mul(centered, tape.constant(inv_sigma));
  double c0 = -0.5 * F * std::log(2.0 * std::numbers::pi);
  for (int k = 0; k < F; ++k) c0 -= std::log(sigma(k));
  return tape.add_scalar(tape.scale(tape.row_sum(tape.square(t)), -0.5), c0);
}

LogDensityFn FieldPrior::log_density_fn() const {
  const FieldPrior* self = this;
  return [self](Tape& t, Value batch) { return self->log_density_tape(t, batch); };
}

double FieldPrior::field_value(const Eigen::VectorXd& lambda, const Eigen::VectorXd& x) const {
  switch (kind) {
    case PriorKind::Grf1d:
      return std::exp(kle->field(lambda.head(kle->n_modes()), x));
    case PriorKind::Mixed1d: {
      const double sgn = lambda(F - 1) >= 0.0 ? 1.0 : -1.0;
      const double m = std::sin(std::numbers::pi * x(0) / 2.0);
      return std::exp(kle->field(lambda.head(kle->n_modes()), x) + 0.75 * sgn * m);
    }
    case PriorKind::Darcy2d:
      return std::exp(kle->field(lambda.head(kle->n_modes()), x));
    case PriorKind::Tomography:
      return velocity_eval(tomo_physical(lambda), v0, x(0), x(1));
    case PriorKind::Kinematics:
      throw std::logic_error("kinematics prior has no spatial field");
  }
  throw std::logic_error("unknown prior kind");
}

FieldPrior make_grf1d_prior(int n_kle, int grid_n) {
  FieldPrior p;
  p.kind = PriorKind::Grf1d;
  p.F = n_kle;
  p.mu = Eigen::VectorXd::Zero(p.F);
  p.sigma = Eigen::VectorXd::Ones(p.F);
  auto kernel = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return (9.0 / 25.0) * std::exp(-(a - b).norm() / 2.0);
  };
  auto mean = [](const Eigen::VectorXd& x) { return x(0) / 2.0; };
  p.kle = std::make_shared<KleBasis>(
      kle_build(kernel, uniform_grid_1d(grid_n), trapezoid_weights(grid_n), n_kle, mean));
  return p;
}

FieldPrior make_mixed1d_prior(int n_kle, int grid_n) {
  FieldPrior p;
  p.kind = PriorKind::Mixed1d;
  p.F = n_kle + 1;  // trailing coordinate carries the sign of the bump
  p.mu = Eigen::VectorXd::Zero(p.F);
  p.sigma = Eigen::VectorXd::Ones(p.F);
  auto kernel = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return (9.0 / 25.0) * std::exp(-(a - b).norm() / 2.0);
  };
  auto mean = [](const Eigen::VectorXd& x) { return 2.0 * x(0) * (1.0 - x(0)); };
  p.kle = std::make_shared<KleBasis>(
      kle_build(kernel, uniform_grid_1d(grid_n), trapezoid_weights(grid_n), n_kle, mean));
  return p;
}

FieldPrior make_darcy_prior(int n_kle, int nx) {
  FieldPrior p;
  p.kind = PriorKind::Darcy2d;
  p.F = n_kle;
  p.mu = Eigen::VectorXd::Zero(p.F);
  p.sigma = Eigen::VectorXd::Ones(p.F);
  auto kernel = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return std::exp(-5.0 * (a - b).norm());
  };
  auto mean = [](const Eigen::VectorXd&) { return 0.0; };
  StructuredGrid g = cell_center_grid_2d(nx, nx);
  const double cell = 1.0 / (nx * static_cast<double>(nx));
  p.kle = std::make_shared<KleBasis>(
      kle_build(kernel, g, Eigen::VectorXd::Constant(g.size(), cell), n_kle, mean));
  return p;
}

FieldPrior make_kinematics_prior() {
  FieldPrior p;
  p.kind = PriorKind::Kinematics;
  p.F = 4;
  p.mu = Eigen::VectorXd::Zero(4);
  p.sigma.resize(4);
  p.sigma << 0.25, 0.5, 0.5, 0.5;
  return p;
}

FieldPrior make_tomography_prior(double v0) {
  FieldPrior p;
  p.kind = PriorKind::Tomography;
  p.F = 7;
  p.mu.resize(7);
  p.mu << 0.2, 0.4, 0.5, 1.0, 0.0, 0.0, 0.0;
  p.sigma.resize(7);
  p.sigma << 0.5, 0.5, 0.5, 1.0, 1.0, 1.0, 1.0;
  p.v0 = v0;
  return p;
}

TomoParams tomo_physical(const Eigen::VectorXd& lambda7) {
  if (lambda7.size() != 7) throw std::invalid_argument("tomo_physical: expected 7 parameters");
  TomoParams p;
  for (int i = 0; i < 4; ++i) p.gy[i] = lambda7(i);
  double sum3 = 0.0;
  for (int i = 0; i < 3; ++i) {
    p.h[i] = 0.75 + 0.5 * normal_cdf(lambda7(4 + i));
    sum3 += p.h[i];
  }
  p.h[3] = 4.0 - sum3;
  return p;
}

Eigen::VectorXd tomo_unconstrained(const TomoParams& p) {
  Eigen::VectorXd lambda(7);
  for (int i = 0; i < 4; ++i) lambda(i) = p.gy[i];
  for (int i = 0; i < 3; ++i) lambda(4 + i) = normal_quantile((p.h[i] - 0.75) / 0.5);
  return lambda;
}

}  // namespace piflow
