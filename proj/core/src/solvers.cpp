#include "piflow/solvers.hpp"

#include <Eigen/Sparse>
#include <cmath>

namespace piflow {

Eigen::VectorXd fem_diffusion_1d(const Eigen::VectorXd& D_nodes, double f, double u0, double u1) {
  const int n = static_cast<int>(D_nodes.size());
  if (n < 3) throw std::invalid_argument("fem_diffusion_1d: need at least 3 nodes");
  if ((D_nodes.array() <= 0.0).any())
    throw std::invalid_argument("fem_diffusion_1d: nonpositive diffusion coefficient");
  const double h = 1.0 / (n - 1);

  // Element conductances with midpoint D; tridiagonal system for the
  // interior nodes after Dirichlet row elimination.
  Eigen::VectorXd k(n - 1);
  for (int e = 0; e < n - 1; ++e) k(e) = 0.5 * (D_nodes(e) + D_nodes(e + 1)) / h;

  const int m = n - 2;
  Eigen::VectorXd diag(m), lower(m - 1), rhs(m);
  for (int i = 0; i < m; ++i) {
    diag(i) = k(i) + k(i + 1);
    rhs(i) = f * h;
    if (i + 1 < m) lower(i) = -k(i + 1);
  }
  rhs(0) += k(0) * u0;
  rhs(m - 1) += k(m) * u1;

  // Thomas algorithm.
  Eigen::VectorXd c(m), d(m);
  c(0) = (m > 1) ? lower(0) / diag(0) : 0.0;
  d(0) = rhs(0) / diag(0);
  for (int i = 1; i < m; ++i) {
    const double w = diag(i) - lower(i - 1) * c(i - 1);
    if (i + 1 < m) c(i) = lower(i) / w;
    d(i) = (rhs(i) - lower(i - 1) * d(i - 1)) / w;
  }
  Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
  u(0) = u0;
  u(n - 1) = u1;
  u(m) = d(m - 1);
  for (int i = m - 2; i >= 0; --i) u(i + 1) = d(i) - c(i) * u(i + 2);
  return u;
}

Eigen::VectorXd darcy_solve_2d(const Eigen::VectorXd& K_cells, int nx, int ny,
                               double cg_tol, int max_iter) {
  if (K_cells.size() != static_cast<Eigen::Index>(nx) * ny)
    throw std::invalid_argument("darcy_solve_2d: K size mismatch");
  if ((K_cells.array() <= 0.0).any())
    throw std::invalid_argument("darcy_solve_2d: nonpositive permeability");
  const int n = nx * ny;
  auto idx = [ny](int i, int j) { return i * ny + j; };
  auto harm = [](double a, double b) { return 2.0 * a * b / (a + b); };

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(5 * n);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  // Square cells: face transmissibility reduces to the harmonic K mean;
  // half-cell Dirichlet faces contribute 2K.
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < ny; ++j) {
      const int p = idx(i, j);
      const double Kp = K_cells(p);
      if (i > 0) {
        const double T = harm(Kp, K_cells(idx(i - 1, j)));
        diag(p) += T;
        trips.emplace_back(p, idx(i - 1, j), -T);
      } else {
        const double T = 2.0 * Kp;  // u = 1 at x1 = 0
        diag(p) += T;
        rhs(p) += T * 1.0;
      }
      if (i < nx - 1) {
        const double T = harm(Kp, K_cells(idx(i + 1, j)));
        diag(p) += T;
        trips.emplace_back(p, idx(i + 1, j), -T);
      } else {
        const double T = 2.0 * Kp;  // u = 0 at x1 = 1
        diag(p) += T;
      }
      if (j > 0) {
        const double T = harm(Kp, K_cells(idx(i, j - 1)));
        diag(p) += T;
        trips.emplace_back(p, idx(i, j - 1), -T);
      }
      if (j < ny - 1) {
        const double T = harm(Kp, K_cells(idx(i, j + 1)));
        diag(p) += T;
        trips.emplace_back(p, idx(i, j + 1), -T);
      }
    }
  }
  for (int p = 0; p < n; ++p) trips.emplace_back(p, p, diag(p));

  Eigen::SparseMatrix<double> A(n, n);
  A.setFromTriplets(trips.begin(), trips.end());
  Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper> cg;
  cg.setTolerance(cg_tol);
  cg.setMaxIterations(max_iter);
  cg.compute(A);
  Eigen::VectorXd u = cg.solve(rhs);
  if (cg.info() != Eigen::Success)
    throw std::runtime_error("darcy_solve_2d: CG did not converge, residual " +
                             std::to_string(cg.error()));
  return u;
}

Eigen::MatrixXd fast_sweep_eikonal(const Eigen::MatrixXd& v, double h, int si, int sj,
                                   double tol, int max_sweeps) {
  const int nx = static_cast<int>(v.rows()), ny = static_cast<int>(v.cols());
  if ((v.array() <= 0.0).any())
    throw std::invalid_argument("fast_sweep_eikonal: nonpositive velocity");
  if (si < 0 || si >= nx || sj < 0 || sj >= ny)
    throw std::invalid_argument("fast_sweep_eikonal: source off grid");

  const double big = 1e10;
  Eigen::MatrixXd T = Eigen::MatrixXd::Constant(nx, ny, big);
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> fixed =
      Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(nx, ny, false);
  T(si, sj) = 0.0;
  fixed(si, sj) = true;
  for (int di = -1; di <= 1; ++di) {
    for (int dj = -1; dj <= 1; ++dj) {
      if (di == 0 && dj == 0) continue;
      const int i = si + di, j = sj + dj;
      if (i < 0 || i >= nx || j < 0 || j >= ny) continue;
      const double dist = h * std::sqrt(double(di * di + dj * dj));
      const double slow = 0.5 * (1.0 / v(si, sj) + 1.0 / v(i, j));
      T(i, j) = dist * slow;
      fixed(i, j) = true;
    }
  }

  auto update = [&](int i, int j) {
    const double a = std::min(i > 0 ? T(i - 1, j) : big, i < nx - 1 ? T(i + 1, j) : big);
    const double b = std::min(j > 0 ? T(i, j - 1) : big, j < ny - 1 ? T(i, j + 1) : big);
    const double fh = h / v(i, j);
    double cand;
    if (std::abs(a - b) >= fh) {
      cand = std::min(a, b) + fh;
    } else {
      cand = 0.5 * (a + b + std::sqrt(2.0 * fh * fh - (a - b) * (a - b)));
    }
    if (cand < T(i, j)) {
      const double delta = T(i, j) - cand;
      T(i, j) = cand;
      return delta;
    }
    return 0.0;
  };

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double max_change = 0.0;
    for (int order = 0; order < 4; ++order) {
      const bool iup = order & 1, jup = order & 2;
      for (int ii = 0; ii < nx; ++ii) {
        const int i = iup ? ii : nx - 1 - ii;
        for (int jj = 0; jj < ny; ++jj) {
          const int j = jup ? jj : ny - 1 - jj;
          if (fixed(i, j)) continue;
          max_change = std::max(max_change, update(i, j));
        }
      }
    }
    if (max_change < tol) return T;
  }
  throw std::runtime_error("fast_sweep_eikonal: no convergence after max sweeps");
}

Eigen::Vector2d kinematics_forward(const Eigen::Vector4d& x) {
  const double l1 = 0.5, l2 = 0.5, l3 = 1.0;
  Eigen::Vector2d y;
  y(0) = l1 * std::cos(x(1)) + l2 * std::cos(x(2) - x(1)) + l3 * std::cos(x(3) - x(1) - x(2));
  y(1) = x(0) + l1 * std::sin(x(1)) + l2 * std::sin(x(2) - x(1)) +
         l3 * std::sin(x(3) - x(1) - x(2));
  return y;
}

ObservationSet observe(const std::function<double(const Eigen::VectorXd&)>& field,
                       const Matrix& sensors, double sigma, uint64_t seed) {
  ObservationSet obs;
  obs.sensors = sensors;
  obs.sigma = sigma;
  obs.seed = seed;
  const int O = static_cast<int>(sensors.rows());
  obs.clean.resize(O);
  for (int i = 0; i < O; ++i) obs.clean(i) = field(sensors.row(i).transpose());
  obs.noisy = obs.clean;
  if (sigma > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, sigma);
    for (int i = 0; i < O; ++i) obs.noisy(i) += nd(rng);
  }
  return obs;
}

Matrix evenly_spaced_sensors_1d(int n, double a, double b) {
  Matrix s(n, 1);
  for (int i = 0; i < n; ++i) s(i, 0) = a + (b - a) * i / (n - 1);
  return s;
}

Matrix sensor_grid_2d(int nx, int ny, double a, double b) {
  Matrix s(nx * ny, 2);
  int k = 0;
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j) {
      s(k, 0) = a + (b - a) * i / (nx - 1);
      s(k, 1) = a + (b - a) * j / (ny - 1);
      ++k;
    }
  return s;
}

}  // namespace piflow
