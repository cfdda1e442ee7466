#include "piflow/losses.hpp"

#include <cmath>

namespace piflow {

void LossWeights::validate() const {
  for (double w : {alpha, beta, gamma, rho})
    if (!std::isfinite(w) || w < 0.0)
      throw std::invalid_argument("loss weights must be finite and nonnegative");
}

Value independence_loss(Tape& tape, const ParamBind& bind, const FlowModel& model,
                        const LogDensityFn& log_prior, Value lambda_batch, Value z_batch) {
  const int N = static_cast<int>(tape.val(lambda_batch).rows());
  if (tape.val(z_batch).rows() != N)
    throw std::invalid_argument("independence_loss: batch size mismatch");
  if (tape.val(z_batch).cols() != model.F - model.P)
    throw std::invalid_argument("independence_loss: z dimension mismatch");

  FlowOut fwd = flow_forward(tape, bind, model, lambda_batch);
  Value c_hat = tape.cols(fwd.y, 0, model.P);
  Value z_hat = tape.cols(fwd.y, model.P, model.F - model.P);

  // q at the model's own output is the pushed-forward prior density.
  Value lq_hat = tape.sub(log_prior(tape, lambda_batch), fwd.logdet);
  Value lq_mix = log_q_joint(tape, bind, model, log_prior, c_hat, z_batch);
  Value lp_zhat = std_normal_logpdf(tape, z_hat);
  Value lp_z = std_normal_logpdf(tape, z_batch);

  Value term = tape.sub(tape.sub(lq_hat, lq_mix), tape.sub(lp_zhat, lp_z));
  const Matrix& tv = tape.val(term);
  for (int i = 0; i < tv.rows(); ++i)
    if (!std::isfinite(tv(i, 0)))
      throw std::runtime_error("independence_loss: non-finite log density at sample " +
                               std::to_string(i));
  return tape.mean(tape.square(term));
}

Value mmd(Tape& tape, Value X, Value Y, double bandwidth) {
  const Matrix& xv = tape.val(X);
  const Matrix& yv = tape.val(Y);
  if (xv.cols() != yv.cols()) throw std::invalid_argument("mmd: dimension mismatch");
  if (xv.rows() < 1 || yv.rows() < 1) throw std::invalid_argument("mmd: empty sample set");
  const double inv_h2 = 1.0 / (bandwidth * bandwidth);

  auto kernel_mean = [&](Value A, Value B) {
    const int n = static_cast<int>(tape.val(A).rows());
    const int m = static_cast<int>(tape.val(B).rows());
    Value ra = tape.row_sum(tape.square(A));  // n x 1
    Value rb = tape.row_sum(tape.square(B));  // m x 1
    Value cross = tape.matmul(A, tape.transpose(B));
    Value d2 = tape.add(tape.add(tape.matmul(ra, tape.constant(Matrix::Ones(1, m))),
                                 tape.matmul(tape.constant(Matrix::Ones(n, 1)), tape.transpose(rb))),
                        tape.scale(cross, -2.0));
    Value k = tape.reciprocal(tape.add_scalar(tape.scale(d2, inv_h2), 1.0));
    return tape.mean(k);
  };

  return tape.add(tape.sub(kernel_mean(X, X), tape.scale(kernel_mean(X, Y), 2.0)),
                  kernel_mean(Y, Y));
}

double mmd(const Matrix& X, const Matrix& Y, double bandwidth) {
  Tape tape;
  return tape.scalar(mmd(tape, tape.constant(X), tape.constant(Y), bandwidth));
}

Boxes1d sample_boxes_1d(int n, double radius, double a, double b, std::mt19937_64& rng) {
  Boxes1d boxes;
  boxes.radius = radius;
  boxes.centers.resize(n);
  boxes.x.resize(n);
  boxes.xp.resize(n);
  std::uniform_real_distribution<double> uc(a + radius / 2, b - radius / 2);
  std::uniform_real_distribution<double> uu(-radius / 2, radius / 2);
  for (int i = 0; i < n; ++i) {
    boxes.centers(i) = uc(rng);
    boxes.x(i) = boxes.centers(i) + uu(rng);
    boxes.xp(i) = boxes.centers(i) + uu(rng);
  }
  return boxes;
}

Boxes2d sample_boxes_2d(int n, double radius, double a, double b, std::mt19937_64& rng) {
  Boxes2d boxes;
  boxes.radius = radius;
  boxes.centers.resize(n, 2);
  boxes.x1.resize(n);
  boxes.x1p.resize(n);
  boxes.x2.resize(n);
  boxes.x2p.resize(n);
  std::uniform_real_distribution<double> uc(a + radius / 2, b - radius / 2);
  std::uniform_real_distribution<double> uu(-radius / 2, radius / 2);
  for (int i = 0; i < n; ++i) {
    boxes.centers(i, 0) = uc(rng);
    boxes.centers(i, 1) = uc(rng);
    boxes.x1(i) = boxes.centers(i, 0) + uu(rng);
    boxes.x1p(i) = boxes.centers(i, 0) + uu(rng);
    boxes.x2(i) = boxes.centers(i, 1) + uu(rng);
    boxes.x2p(i) = boxes.centers(i, 1) + uu(rng);
  }
  return boxes;
}

namespace {

// N x n constant matrix of per-sample field values at one point per
// column.
Matrix field_matrix(const SampleFieldFn& eval, int N, const Matrix& pts) {
  Matrix out(N, pts.rows());
  for (int j = 0; j < N; ++j)
    for (int i = 0; i < pts.rows(); ++i) out(j, i) = eval(j, pts.row(i).transpose());
  return out;
}

Value grad_u_at(Tape& tape, const BasisFns& basis, Value C, const Matrix& pts, int axis) {
  return tape.matmul(C, tape.transpose(basis.grad(tape, pts, axis)));  // N x n
}

}  // namespace

Value equation_loss_diffusion_1d(Tape& tape, const BasisFns& basis, Value C,
                                 const SampleFieldFn& K_eval,
                                 const std::function<double(double)>& f,
                                 const Boxes1d& boxes) {
  const int n = static_cast<int>(boxes.centers.size());
  const int N = static_cast<int>(tape.val(C).rows());
  const double r = boxes.radius;
  for (int i = 0; i < n; ++i)
    if (boxes.centers(i) - r / 2 < -1e-12 || boxes.centers(i) + r / 2 > 1.0 + 1e-12)
      throw std::invalid_argument("equation_loss_diffusion_1d: test box exceeds the domain");

  Matrix pl(n, 1), pr(n, 1);
  pl.col(0) = boxes.centers.array() - r / 2;
  pr.col(0) = boxes.centers.array() + r / 2;

  Value dul = grad_u_at(tape, basis, C, pl, 0);
  Value dur = grad_u_at(tape, basis, C, pr, 0);
  Value Kl = tape.constant(field_matrix(K_eval, N, pl));
  Value Kr = tape.constant(field_matrix(K_eval, N, pr));
  Value A = tape.scale(tape.sub(tape.mul(Kl, dul), tape.mul(Kr, dur)), 1.0 / r);

  Matrix f_x(1, n), f_xp(1, n);
  for (int i = 0; i < n; ++i) {
    f_x(0, i) = -f(boxes.x(i));
    f_xp(0, i) = -f(boxes.xp(i));
  }
  Value t1 = tape.add_rowvec(A, tape.constant(f_x));
  Value t2 = tape.add_rowvec(A, tape.constant(f_xp));
  return tape.mean(tape.mul(t1, t2));
}

Value equation_loss_darcy_2d(Tape& tape, const BasisFns& basis, Value C,
                             const SampleFieldFn& K_eval,
                             const std::function<double(const Eigen::VectorXd&)>& f,
                             const Boxes2d& boxes) {
  const int n = static_cast<int>(boxes.centers.rows());
  const int N = static_cast<int>(tape.val(C).rows());
  const double r = boxes.radius;
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < 2; ++d)
      if (boxes.centers(i, d) - r / 2 < -1e-12 || boxes.centers(i, d) + r / 2 > 1.0 + 1e-12)
        throw std::invalid_argument("equation_loss_darcy_2d: test box exceeds the domain");

  // One flux residual term per box, built from the four face fluxes with
  // the face coordinate at the given uniform draw.
  auto flux_sum = [&](const Eigen::VectorXd& s1, const Eigen::VectorXd& s2) {
    Matrix p_x1l(n, 2), p_x1r(n, 2), p_x2l(n, 2), p_x2r(n, 2);
    for (int i = 0; i < n; ++i) {
      p_x1l.row(i) << boxes.centers(i, 0) - r / 2, s2(i);
      p_x1r.row(i) << boxes.centers(i, 0) + r / 2, s2(i);
      p_x2l.row(i) << s1(i), boxes.centers(i, 1) - r / 2;
      p_x2r.row(i) << s1(i), boxes.centers(i, 1) + r / 2;
    }
    Value e = tape.sub(tape.mul(tape.constant(field_matrix(K_eval, N, p_x1l)),
                                grad_u_at(tape, basis, C, p_x1l, 0)),
                       tape.mul(tape.constant(field_matrix(K_eval, N, p_x1r)),
                                grad_u_at(tape, basis, C, p_x1r, 0)));
    Value e2 = tape.sub(tape.mul(tape.constant(field_matrix(K_eval, N, p_x2l)),
                                 grad_u_at(tape, basis, C, p_x2l, 1)),
                        tape.mul(tape.constant(field_matrix(K_eval, N, p_x2r)),
                                 grad_u_at(tape, basis, C, p_x2r, 1)));
    Value flux = tape.scale(tape.add(e, e2), 1.0 / r);
    Matrix fv(1, n);
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd xi(2);
      xi << s1(i), s2(i);
      fv(0, i) = -f(xi);
    }
    return tape.add_rowvec(flux, tape.constant(fv));
  };

  Value e = flux_sum(boxes.x1, boxes.x2);
  Value ep = flux_sum(boxes.x1p, boxes.x2p);
  return tape.mean(tape.mul(e, ep));
}

Matrix sample_collocation_2d(int m, double lo, double hi, const Eigen::Vector2d& source,
                             double exclude_radius, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix pts(m, 2);
  int k = 0;
  while (k < m) {
    const double x = u(rng), y = u(rng);
    if (std::hypot(x - source(0), y - source(1)) <= exclude_radius) continue;
    pts(k, 0) = x;
    pts(k, 1) = y;
    ++k;
  }
  return pts;
}

EikonalLossOut equation_loss_eikonal(Tape& tape, const BasisFns& basis, Value C,
                                     const SampleFieldFn& v_eval, const Matrix& colloc,
                                     const Eigen::Vector2d& source) {
  const int m = static_cast<int>(colloc.rows());
  const int N = static_cast<int>(tape.val(C).rows());

  // Per-sample constants: T0 and its gradient from the source velocity,
  // inverse squared velocity at the collocation points.
  Matrix T0(N, m), T0x(N, m), T0y(N, m), inv_v2(N, m);
  for (int j = 0; j < N; ++j) {
    const double vs = v_eval(j, source);
    if (vs <= 0.0) throw std::invalid_argument("equation_loss_eikonal: nonpositive velocity");
    for (int i = 0; i < m; ++i) {
      const double dx = colloc(i, 0) - source(0), dy = colloc(i, 1) - source(1);
      const double dist = std::hypot(dx, dy);
      if (dist == 0.0)
        throw std::invalid_argument("equation_loss_eikonal: collocation point at the source");
      T0(j, i) = dist / vs;
      T0x(j, i) = dx / (dist * vs);
      T0y(j, i) = dy / (dist * vs);
      const double v = v_eval(j, colloc.row(i).transpose());
      if (v <= 0.0) throw std::invalid_argument("equation_loss_eikonal: nonpositive velocity");
      inv_v2(j, i) = 1.0 / (v * v);
    }
  }

  Value tau = tape.matmul(C, tape.transpose(basis.values(tape, colloc)));
  Value taux = grad_u_at(tape, basis, C, colloc, 0);
  Value tauy = grad_u_at(tape, basis, C, colloc, 1);

  Value vT0 = tape.constant(T0);
  Value grad_tau2 = tape.add(tape.square(taux), tape.square(tauy));
  Value grad_T02 = tape.constant((T0x.array().square() + T0y.array().square()).matrix());
  Value dot = tape.add(tape.mul(tape.constant(T0x), taux), tape.mul(tape.constant(T0y), tauy));
  Value residual = tape.sub(
      tape.add(tape.add(tape.mul(tape.square(vT0), grad_tau2),
                        tape.mul(tape.square(tau), grad_T02)),
               tape.scale(tape.mul(tape.mul(vT0, tau), dot), 2.0)),
      tape.constant(inv_v2));

  Matrix src_pt(1, 2);
  src_pt << source(0), source(1);
  Value tau_src = tape.matmul(C, tape.transpose(basis.values(tape, src_pt)));  // N x 1

  EikonalLossOut out;
  out.factored = tape.mean(tape.square(residual));
  out.source = tape.mean(tape.square(tape.add_scalar(tau_src, -1.0)));
  return out;
}

Value boundary_loss(Tape& tape, const BasisFns& basis, Value C, const BoundarySpec& bc) {
  Value viol{-1};
  if (bc.dirichlet_pts.rows() > 0) {
    Value u = tape.matmul(C, tape.transpose(basis.values(tape, bc.dirichlet_pts)));
    viol = tape.add_rowvec(u, tape.constant(Matrix(-bc.dirichlet_vals.transpose())));
  }
  if (bc.neumann_pts.rows() > 0) {
    Value du = grad_u_at(tape, basis, C, bc.neumann_pts, bc.neumann_axis);
    viol = viol.valid() ? tape.hcat(viol, du) : du;
  }
  if (!viol.valid()) throw std::invalid_argument("boundary_loss: empty boundary spec");
  return tape.mean(tape.square(viol));
}

Value data_loss(Tape& tape, Value u_pred, Value u_label) {
  const Matrix& a = tape.val(u_pred);
  const Matrix& b = tape.val(u_label);
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("data_loss: shape mismatch");
  Value d = tape.sub(u_pred, u_label);
  return tape.scale(tape.sum(tape.square(d)), 1.0 / static_cast<double>(a.rows()));
}

Value total_loss(Tape& tape, const std::vector<WeightedTerm>& terms) {
  Value total = tape.constant(0.0);
  for (const auto& t : terms) {
    if (!std::isfinite(tape.scalar(t.value)))
      throw std::runtime_error("total_loss: non-finite term '" + t.name + "'");
    if (t.weight == 0.0) continue;
    total = tape.add(total, tape.scale(t.value, t.weight));
  }
  return total;
}

}  // namespace piflow
