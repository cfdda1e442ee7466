// Acceptance gate: one PASS/FAIL line per criterion, exit code equals
// the number of failures. Groups keep the heavy training runs out of
// the fast checks:
//   --group fast        criteria 1-7 (closed-form and oracle checks)
//   --group kinematics  criterion 8
//   --group diffusion   criteria 9-12 (one shared training run)
//   --group heavy2d     criterion 13
//   --group all         everything

#include <chrono>
#include <cstring>
#include <iostream>

#include "piflow/experiment.hpp"

using namespace piflow;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int n, bool pass, const std::string& detail) {
  std::cout << (pass ? "PASS" : "FAIL") << " criterion " << n << ": " << detail << "\n";
  if (!pass) ++g_failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Matrix random_normal(int r, int c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = nd(rng);
  return m;
}

void perturb_store(ParamStore& store, uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, scale);
  for (Matrix& m : store.values)
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += nd(rng);
}

// ---------------------------------------------------------------- fast

void criterion_invertibility() {
  const double tol = 1e-9;
  ParamStore store;
  FlowModel model = flow_create(store, "f", 10, 5, 8, 100, 1, 11);
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (int phase = 0; phase < 2; ++phase) {
    std::mt19937_64 rng(12 + phase);
    Matrix lambda = random_normal(1000, 10, rng);
    Matrix y = flow_forward_eval(store, model, lambda);
    Matrix back = flow_inverse_eval(store, model, y.leftCols(5), y.rightCols(5));
    worst = std::max(worst, (back - lambda).cwiseAbs().maxCoeff());
    perturb_store(store, 13, 0.05);  // second pass with nontrivial couplings
  }
  const double el = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "invertibility max deviation %.2e (tol %.0e) over 2x1000 points in %.2fs (<1s)",
                worst, tol, el);
  report(1, worst <= tol && el < 1.0, buf);
}

double numeric_logabsdet(const ParamStore& store, const FlowModel& model,
                         const Eigen::VectorXd& x) {
  const int n = static_cast<int>(x.size());
  const double eps = 1e-6;
  Eigen::MatrixXd J(n, n);
  for (int j = 0; j < n; ++j) {
    Eigen::VectorXd p = x, m = x;
    p(j) += eps;
    m(j) -= eps;
    J.col(j) = ((flow_forward_eval(store, model, Matrix(p.transpose())) -
                 flow_forward_eval(store, model, Matrix(m.transpose()))) /
                (2 * eps))
                   .row(0)
                   .transpose();
  }
  return std::log(std::abs(J.determinant()));
}

void criterion_change_of_variables() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (int F : {4, 10}) {
    ParamStore store;
    FlowModel model = flow_create(store, "f", F, F / 2, F == 4 ? 4 : 8, F == 4 ? 16 : 32, 1, 21);
    perturb_store(store, 22, 0.03);
    std::mt19937_64 rng(23);
    for (int rep = 0; rep < 25; ++rep) {
      Matrix lambda = random_normal(1, F, rng);
      Eigen::VectorXd logdet;
      flow_forward_eval(store, model, lambda, &logdet);
      const double fd = numeric_logabsdet(store, model, lambda.row(0).transpose());
      const double rel = std::abs(std::exp(logdet(0)) - std::exp(fd)) /
                         std::max(1e-300, std::exp(fd));
      worst = std::max(worst, rel);
    }
  }
  const double el = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "log-det vs numeric Jacobian, worst relative error %.2e (tol 1e-4), %.2fs (<10s)",
                worst, el);
  report(2, worst <= 1e-4 && el < 10.0, buf);
}

void criterion_normalization() {
  ParamStore store;
  FlowModel model = flow_create(store, "f", 2, 1, 2, 8, 1, 26);
  perturb_store(store, 27, 0.2);
  LogDensityFn prior = [](Tape& t, Value lam) { return std_normal_logpdf(t, lam); };
  const double lo = -7.0, h = 0.05;
  const int n = 281;
  double integral = 0.0;
  for (int j = 0; j < n; ++j) {
    Matrix c(n, 1), z(n, 1);
    for (int i = 0; i < n; ++i) {
      c(i, 0) = lo + i * h;
      z(i, 0) = lo + j * h;
    }
    Tape tape;
    ParamBind bind = ParamBind::make(tape, store);
    Matrix lq = tape.val(log_q_joint(tape, bind, model, prior, tape.constant(c), tape.constant(z)));
    integral += lq.array().exp().sum() * h * h;
  }
  char buf[120];
  std::snprintf(buf, sizeof buf, "joint density quadrature = %.4f (1 +- 0.01)", integral);
  report(3, std::abs(integral - 1.0) <= 0.01, buf);
}

// max relative error between reverse-sweep gradients and central finite
// differences over every entry of every input
using BuildFn = std::function<Value(Tape&, const std::vector<Value>&)>;

double fd_worst(const std::vector<Matrix>& inputs, const BuildFn& f, double eps = 1e-5) {
  Tape tape;
  std::vector<Value> leaves;
  for (const Matrix& m : inputs) leaves.push_back(tape.input(m));
  std::vector<Matrix> grads = tape.gradients(f(tape, leaves));
  auto eval = [&](const std::vector<Matrix>& in) {
    Tape t;
    std::vector<Value> lv;
    for (const Matrix& m : in) lv.push_back(t.input(m));
    return t.scalar(f(t, lv));
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Matrix& g = grads[leaves[k].id];
    for (Eigen::Index r = 0; r < inputs[k].rows(); ++r)
      for (Eigen::Index c = 0; c < inputs[k].cols(); ++c) {
        std::vector<Matrix> plus = inputs, minus = inputs;
        plus[k](r, c) += eps;
        minus[k](r, c) -= eps;
        const double fd = (eval(plus) - eval(minus)) / (2 * eps);
        const double got = g.size() == 0 ? 0.0 : g(r, c);
        worst = std::max(worst, std::abs(got - fd) / std::max(1.0, std::abs(fd)));
      }
  }
  return worst;
}

BasisFns quadratic_basis_1d() {
  BasisFns b;
  b.P = 2;
  b.values = [](Tape& t, const Matrix& pts) {
    Matrix phi(pts.rows(), 2);
    for (int i = 0; i < pts.rows(); ++i) {
      phi(i, 0) = pts(i, 0) * pts(i, 0);
      phi(i, 1) = pts(i, 0);
    }
    return t.constant(phi);
  };
  b.grad = [](Tape& t, const Matrix& pts, int) {
    Matrix g(pts.rows(), 2);
    for (int i = 0; i < pts.rows(); ++i) {
      g(i, 0) = 2.0 * pts(i, 0);
      g(i, 1) = 1.0;
    }
    return t.constant(g);
  };
  return b;
}

BasisFns quadratic_basis_2d() {
  BasisFns b;
  b.P = 3;
  b.values = [](Tape& t, const Matrix& pts) {
    Matrix phi(pts.rows(), 3);
    for (int i = 0; i < pts.rows(); ++i) {
      phi(i, 0) = pts(i, 0);
      phi(i, 1) = pts(i, 0) * pts(i, 0) + pts(i, 1) * pts(i, 1);
      phi(i, 2) = 1.0;
    }
    return t.constant(phi);
  };
  b.grad = [](Tape& t, const Matrix& pts, int axis) {
    Matrix g(pts.rows(), 3);
    for (int i = 0; i < pts.rows(); ++i) {
      g(i, 0) = axis == 0 ? 1.0 : 0.0;
      g(i, 1) = 2.0 * pts(i, axis);
      g(i, 2) = 0.0;
    }
    return t.constant(g);
  };
  return b;
}

void criterion_gradients() {
  const double tol = 1e-5;
  double worst = 0.0;
  std::string worst_name = "none";
  auto track = [&](const char* name, double v) {
    if (v > worst) {
      worst = v;
      worst_name = name;
    }
  };

  std::mt19937_64 rng(31);
  LogDensityFn prior = [](Tape& t, Value lam) { return std_normal_logpdf(t, lam); };
  for (int cfg = 0; cfg < 20; ++cfg) {
    {  // independence loss through a perturbed flow
      ParamStore store;
      FlowModel model = flow_create(store, "f", 4, 2, 2, 6, 1, 100 + cfg);
      perturb_store(store, 200 + cfg, 0.05);
      Matrix lambda = random_normal(3, 4, rng, 0.7);
      Matrix z = random_normal(3, 2, rng, 0.7);
      track("independence", fd_worst(store.values, [&](Tape& t, const std::vector<Value>& lv) {
              ParamBind bind;
              bind.nodes = lv;
              return independence_loss(t, bind, model, prior, t.constant(lambda), t.constant(z));
            }));
    }
    {  // mmd
      Matrix X = random_normal(5, 2, rng);
      Matrix Y = random_normal(4, 2, rng);
      track("mmd", fd_worst({X, Y}, [](Tape& t, const std::vector<Value>& lv) {
              return mmd(t, lv[0], lv[1], 1.2);
            }));
    }
    {  // weak-form losses and boundary/data terms
      BasisFns b1 = quadratic_basis_1d();
      Boxes1d boxes = sample_boxes_1d(6, 0.1, 0.0, 1.0, rng);
      Matrix C = random_normal(3, 2, rng);
      SampleFieldFn K = [cfg](int j, const Eigen::VectorXd& x) {
        return 1.0 + 0.05 * j + 0.1 * std::sin(x(0) + cfg);
      };
      track("equation-1d", fd_worst({C}, [&](Tape& t, const std::vector<Value>& lv) {
              return equation_loss_diffusion_1d(t, b1, lv[0], K,
                                                [](double x) { return -2.0 * x; }, boxes);
            }));

      BasisFns b2 = quadratic_basis_2d();
      Boxes2d boxes2 = sample_boxes_2d(5, 0.1, 0.0, 1.0, rng);
      Matrix C2 = random_normal(2, 3, rng);
      track("equation-2d", fd_worst({C2}, [&](Tape& t, const std::vector<Value>& lv) {
              return equation_loss_darcy_2d(t, b2, lv[0], K,
                                            [](const Eigen::VectorXd& x) { return x(1); },
                                            boxes2);
            }));

      const Eigen::Vector2d source(2.0, 0.0);
      Matrix colloc = sample_collocation_2d(8, 0.5, 3.5, source, 0.2, rng);
      Matrix C3 = random_normal(2, 3, rng, 0.3);
      SampleFieldFn vf = [](int, const Eigen::VectorXd& x) { return 2.0 + 0.1 * x(1); };
      track("eikonal", fd_worst({C3}, [&](Tape& t, const std::vector<Value>& lv) {
              EikonalLossOut out = equation_loss_eikonal(t, b2, lv[0], vf, colloc, source);
              return t.add(out.factored, out.source);
            }));

      BoundarySpec bc;
      bc.dirichlet_pts = Matrix(2, 1);
      bc.dirichlet_pts << 0.0, 1.0;
      bc.dirichlet_vals = Eigen::Vector2d(0.0, 1.0);
      track("boundary", fd_worst({C}, [&](Tape& t, const std::vector<Value>& lv) {
              return boundary_loss(t, b1, lv[0], bc);
            }));

      Matrix pred = random_normal(4, 2, rng);
      Matrix label = random_normal(4, 2, rng);
      track("data", fd_worst({pred}, [&](Tape& t, const std::vector<Value>& lv) {
              return data_loss(t, lv[0], t.constant(label));
            }));
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "loss gradients vs finite differences, worst relative error %.2e in %s (tol 1e-5)",
                worst, worst_name.c_str());
  report(4, worst <= tol, buf);
}

void criterion_unbiasedness() {
  // manufactured 1-d case u = x^3, K = 1, f = -6x: the estimator has
  // expectation zero and nonzero variance
  BasisFns cubic;
  cubic.P = 1;
  cubic.values = [](Tape& t, const Matrix& pts) {
    Matrix phi(pts.rows(), 1);
    for (int i = 0; i < pts.rows(); ++i) phi(i, 0) = std::pow(pts(i, 0), 3);
    return t.constant(phi);
  };
  cubic.grad = [](Tape& t, const Matrix& pts, int) {
    Matrix g(pts.rows(), 1);
    for (int i = 0; i < pts.rows(); ++i) g(i, 0) = 3.0 * pts(i, 0) * pts(i, 0);
    return t.constant(g);
  };
  SampleFieldFn one = [](int, const Eigen::VectorXd&) { return 1.0; };

  std::mt19937_64 rng(41);
  const int M = 200, nb = 500;  // 1e5 draws total
  Eigen::VectorXd means(M);
  for (int m = 0; m < M; ++m) {
    Boxes1d boxes = sample_boxes_1d(nb, 0.1, 0.0, 1.0, rng);
    Tape tape;
    means(m) = tape.scalar(equation_loss_diffusion_1d(tape, cubic,
                                                      tape.constant(Matrix::Ones(1, 1)), one,
                                                      [](double x) { return -6.0 * x; }, boxes));
  }
  const double mean1 = means.mean();
  const double se1 = std::sqrt((means.array() - mean1).square().sum() / (M - 1)) / std::sqrt(M);
  const bool ok1 = std::abs(mean1 - 0.0) <= 3.0 * se1 + 1e-12;

  // manufactured 2-d case u = x1^2 x2, f = -2 x2: exact weak solution,
  // estimator must stay at its zero quadrature value
  BasisFns prod;
  prod.P = 1;
  prod.values = [](Tape& t, const Matrix& pts) {
    Matrix phi(pts.rows(), 1);
    for (int i = 0; i < pts.rows(); ++i) phi(i, 0) = pts(i, 0) * pts(i, 0) * pts(i, 1);
    return t.constant(phi);
  };
  prod.grad = [](Tape& t, const Matrix& pts, int axis) {
    Matrix g(pts.rows(), 1);
    for (int i = 0; i < pts.rows(); ++i)
      g(i, 0) = axis == 0 ? 2.0 * pts(i, 0) * pts(i, 1) : pts(i, 0) * pts(i, 0);
    return t.constant(g);
  };
  Eigen::VectorXd means2(M);
  for (int m = 0; m < M; ++m) {
    Boxes2d boxes = sample_boxes_2d(nb, 0.1, 0.0, 1.0, rng);
    Tape tape;
    means2(m) = tape.scalar(equation_loss_darcy_2d(
        tape, prod, tape.constant(Matrix::Ones(1, 1)), one,
        [](const Eigen::VectorXd& x) { return -2.0 * x(1); }, boxes));
  }
  const double mean2 = means2.mean();
  const double se2 = std::sqrt((means2.array() - mean2).square().sum() / (M - 1)) / std::sqrt(M);
  const bool ok2 = std::abs(mean2 - 0.0) <= 3.0 * se2 + 1e-12;

  char buf[200];
  std::snprintf(buf, sizeof buf,
                "estimator means %.2e (se %.1e) and %.2e (se %.1e) vs quadrature value 0 at 1e5 draws",
                mean1, se1, mean2, se2);
  report(5, ok1 && ok2, buf);
}

void criterion_oracles() {
  // 1-d diffusion, exact quadratic
  Eigen::VectorXd D = Eigen::VectorXd::Ones(201);
  Eigen::VectorXd u = fem_diffusion_1d(D, 5.0, 0.0, 1.0);
  double fem_err = 0.0;
  for (int i = 0; i < 201; ++i) {
    const double x = i / 200.0;
    fem_err = std::max(fem_err, std::abs(u(i) - (-2.5 * x * x + 3.5 * x)));
  }

  const int nx = 32;
  Eigen::VectorXd K = Eigen::VectorXd::Ones(nx * nx);
  Eigen::VectorXd p = darcy_solve_2d(K, nx, nx);
  double darcy_err = 0.0;
  for (int i = 0; i < nx; ++i) {
    const double xc = (i + 0.5) / nx;
    for (int j = 0; j < nx; ++j)
      darcy_err = std::max(darcy_err, std::abs(p(i * nx + j) - (1.0 - xc)));
  }

  const int n = 101;
  const double h = 4.0 / (n - 1);
  Eigen::MatrixXd v = Eigen::MatrixXd::Ones(n, n);
  Eigen::MatrixXd T = fast_sweep_eikonal(v, h, (n - 1) / 2, 0);
  double fsm_err = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      fsm_err = std::max(fsm_err,
                         std::abs(T(i, j) - std::hypot((i - (n - 1) / 2) * h, j * h)));

  char buf[200];
  std::snprintf(buf, sizeof buf,
                "oracle errors: diffusion %.1e (1e-8), pressure %.1e (1e-8), traveltime %.3f (2h=%.3f)",
                fem_err, darcy_err, fsm_err, 2 * h);
  report(6, fem_err <= 1e-8 && darcy_err <= 1e-8 && fsm_err <= 2 * h, buf);
}

void criterion_independence_contrast() {
  ParamStore store;
  FlowModel model = flow_create(store, "f", 4, 2, 2, 8, 1, 51);
  LogDensityFn prior = [](Tape& t, Value lam) { return std_normal_logpdf(t, lam); };
  std::mt19937_64 rng(52);
  Matrix lambda = random_normal(64, 4, rng);
  Matrix z = random_normal(64, 2, rng);
  double factorized;
  {
    Tape tape;
    ParamBind bind = ParamBind::make(tape, store);
    factorized = tape.scalar(
        independence_loss(tape, bind, model, prior, tape.constant(lambda), tape.constant(z)));
  }

  ParamStore store2;
  FlowModel model2 = flow_create(store2, "f", 2, 1, 1, 8, 1, 53);
  Eigen::Matrix2d R;
  R << std::cos(M_PI / 4), -std::sin(M_PI / 4), std::sin(M_PI / 4), std::cos(M_PI / 4);
  Eigen::Matrix2d Sigma = R * Eigen::Vector2d(1.0, 4.0).asDiagonal() * R.transpose();
  Eigen::Matrix2d Prec = Sigma.inverse();
  const double ld = std::log(Sigma.determinant());
  LogDensityFn corr = [=](Tape& t, Value X) {
    Value q = t.row_sum(t.mul(t.matmul(X, t.constant(Matrix(Prec))), X));
    return t.add_scalar(t.scale(q, -0.5), -std::log(2 * M_PI) - 0.5 * ld);
  };
  Eigen::LLT<Eigen::Matrix2d> llt(Sigma);
  Matrix lam2(64, 2), z2(64, 1);
  std::normal_distribution<double> nd;
  for (int i = 0; i < 64; ++i) {
    Eigen::Vector2d xi(nd(rng), nd(rng));
    lam2.row(i) = (llt.matrixL() * xi).transpose();
    z2(i, 0) = nd(rng);
  }
  double correlated;
  {
    Tape tape;
    ParamBind bind = ParamBind::make(tape, store2);
    correlated = tape.scalar(
        independence_loss(tape, bind, model2, corr, tape.constant(lam2), tape.constant(z2)));
  }
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "independence loss %.1e on factorized (<=1e-20), %.3f on correlated (>=1e-2)",
                factorized, correlated);
  report(7, factorized <= 1e-20 && correlated >= 1e-2, buf);
}

// ---------------------------------------------------------- kinematics

double median_endpoint_error(const Problem& prob, const Eigen::Vector2d& target,
                             uint64_t seed) {
  Eigen::VectorXd c(2);
  c << target(0), target(1);
  PosteriorDraws draws = sample_posterior(prob.store, prob.flow, c, 1000, seed);
  Eigen::VectorXd errs(draws.samples.rows());
  for (int i = 0; i < draws.samples.rows(); ++i) {
    Eigen::Vector2d y = kinematics_forward(Eigen::Vector4d(draws.samples.row(i).transpose()));
    errs(i) = (y - target).norm() / target.norm();
  }
  return quantile(errs, 0.5);
}

void criterion_kinematics() {
  const auto t0 = Clock::now();
  ExperimentConfig cfg = ExperimentConfig::defaults_for("kinematics");
  cfg.seed = 1;

  Problem inn1 = make_problem(cfg);
  train(inn1.store, training_set(inn1, cfg.seed), cfg.train, make_step_fn(inn1));

  ExperimentConfig cfg2 = cfg;
  cfg2.mmd_variant = true;
  Problem inn2 = make_problem(cfg2);
  train(inn2.store, training_set(inn2, cfg2.seed), cfg2.train, make_step_fn(inn2));

  const Eigen::Vector2d targets[2] = {{2.0, 0.0}, {1.5, 0.5}};
  double med1[2], med2[2];
  for (int k = 0; k < 2; ++k) {
    med1[k] = median_endpoint_error(inn1, targets[k], 70 + k);
    med2[k] = median_endpoint_error(inn2, targets[k], 70 + k);
  }
  const double el = seconds_since(t0);
  const bool pass = med1[0] <= med2[0] && med1[1] <= med2[1] && med1[0] <= 0.1 &&
                    med1[1] <= 0.1 && el <= 900.0;
  char buf[220];
  std::snprintf(buf, sizeof buf,
                "arm medians: density variant (%.3f, %.3f) vs mmd variant (%.3f, %.3f), cap 0.1, "
                "%.0fs (<=900s)",
                med1[0], med1[1], med2[0], med2[1], el);
  report(8, pass, buf);
}

// ----------------------------------------------------------- diffusion

struct DiffusionRun {
  Problem prob;
  Eigen::VectorXd truth;
  Eigen::VectorXd truth_field;
  Matrix pts;
  ObservationSet obs;
  InvertOut inv;
  Matrix mcmc_kept;
  double elapsed = 0.0;
};

Eigen::VectorXd field_on(const FieldPrior& prior, const Eigen::VectorXd& lambda,
                         const Matrix& pts) {
  Eigen::VectorXd f(pts.rows());
  for (int i = 0; i < pts.rows(); ++i) f(i) = prior.field_value(lambda, pts.row(i).transpose());
  return f;
}

DiffusionRun run_diffusion() {
  const auto t0 = Clock::now();
  ExperimentConfig cfg = ExperimentConfig::defaults_for("diffusion1d");
  cfg.seed = 1;
  DiffusionRun run{make_problem(cfg), {}, {}, {}, {}, {}, {}, 0.0};
  Problem& prob = run.prob;

  train(prob.store, training_set(prob, cfg.seed), cfg.train, make_step_fn(prob));

  std::mt19937_64 rng(1234);
  run.truth = prob.prior.sample(1, rng).row(0).transpose();
  run.pts = evaluation_points(prob);
  run.truth_field = field_on(prob.prior, run.truth, run.pts);
  run.obs = make_observations(prob, run.truth, 99);
  run.inv = invert(prob, run.obs, cfg.seed);
  importance_reweight(run.inv.draws, exact_posterior(prob, run.obs), prob.store, prob.flow);

  ExactPosterior exact = exact_posterior(prob, run.obs);
  Chain chain = metropolis_sample(exact, run.truth, cfg.mcmc_proposal, cfg.mcmc_steps, 7);
  run.mcmc_kept = trim_chain(chain.samples, cfg.mcmc_burn_in, cfg.mcmc_thin);
  run.elapsed = seconds_since(t0);
  return run;
}

void criterion_posterior_accuracy(const DiffusionRun& run) {
  FieldStats pi = posterior_field_stats(run.prob.prior, run.inv.draws.samples, run.pts,
                                        run.inv.draws.weights);
  FieldStats mc = posterior_field_stats(run.prob.prior, run.mcmc_kept, run.pts);
  const double mean_err = mean_pointwise_error(pi.mean, mc.mean);
  const double std_err = mean_pointwise_error(pi.std_dev, mc.std_dev);
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "posterior vs long chain: mean error %.2e (<=2e-2), std error %.2e (<=5e-3), "
                "%.0fs (<=1800s)",
                mean_err, std_err, run.elapsed);
  report(9, mean_err <= 2e-2 && std_err <= 5e-3 && run.elapsed <= 1800.0, buf);
}

void criterion_convergence_ordering(const DiffusionRun& run) {
  const Problem& prob = run.prob;
  ExactPosterior exact = exact_posterior(prob, run.obs);
  int wins = 0;
  std::string detail;
  for (int s = 0; s < 5; ++s) {
    PosteriorDraws d = sample_posterior(prob.store, prob.flow, run.inv.c, 1000, 300 + s);
    FieldStats pi = posterior_field_stats(prob.prior, d.samples, run.pts);
    const double pi_err = relative_l2(pi.mean, run.truth_field);

    Chain chain = metropolis_sample(exact, run.truth, prob.cfg.mcmc_proposal, 15000, 400 + s);
    Matrix kept = trim_chain(chain.samples, 5000, 10);  // 1000 samples
    FieldStats mc = posterior_field_stats(prob.prior, kept, run.pts);
    const double mc_err = relative_l2(mc.mean, run.truth_field);
    wins += pi_err <= mc_err;
    char b[64];
    std::snprintf(b, sizeof b, " [%.3f vs %.3f]", pi_err, mc_err);
    detail += b;
  }
  char buf[260];
  std::snprintf(buf, sizeof buf,
                "sample-mean error at 1e3 draws, flow vs chain per seed:%s, wins %d/5 (>=4)",
                detail.c_str(), wins);
  report(10, wins >= 4, buf);
}

void criterion_factorization(const DiffusionRun& run) {
  std::mt19937_64 rng(61);
  Matrix lambda = run.prob.prior.sample(10000, rng);
  FactorizationDiag d = factorization_diagnostic(run.prob.store, run.prob.flow, lambda);
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "pushforward diagnostics: max |corr| %.3f (<=0.1), max |mean z| %.3f (<=0.05), "
                "max |std-1| %.3f (<=0.1)",
                d.max_abs_corr, d.max_abs_mean_z, d.max_abs_std_dev);
  report(11, d.max_abs_corr <= 0.1 && d.max_abs_mean_z <= 0.05 && d.max_abs_std_dev <= 0.1, buf);
}

void criterion_noise_sweep(const DiffusionRun& run) {
  const Problem& prob = run.prob;
  const std::vector<double> sigmas{0.005, 0.01, 0.025, 0.05};
  std::vector<double> disc;
  for (double s : sigmas) {
    Problem noisy = prob;  // shares the trained parameter values
    noisy.cfg.sigma = s;
    ObservationSet obs = make_observations(noisy, run.truth, 99);
    InvertOut inv = invert(noisy, obs, 11);
    importance_reweight(inv.draws, exact_posterior(noisy, obs), noisy.store, noisy.flow);
    FieldStats pi = posterior_field_stats(noisy.prior, inv.draws.samples, run.pts,
                                          inv.draws.weights);
    ExactPosterior exact = exact_posterior(noisy, obs);
    Chain chain = metropolis_sample(exact, run.truth, noisy.cfg.mcmc_proposal,
                                    noisy.cfg.mcmc_steps, 17);
    Matrix kept = trim_chain(chain.samples, noisy.cfg.mcmc_burn_in, noisy.cfg.mcmc_thin);
    FieldStats mc = posterior_field_stats(noisy.prior, kept, run.pts);
    disc.push_back(mean_pointwise_error(pi.mean, mc.mean));
  }
  bool nondecreasing = true;
  for (std::size_t k = 1; k < disc.size(); ++k)
    if (disc[k] < disc[k - 1]) nondecreasing = false;
  const bool low_noise_ok = disc[0] <= 2.0 * disc[1] && disc[2] <= 2.0 * disc[1];
  char buf[220];
  std::snprintf(buf, sizeof buf,
                "discrepancy vs chain over sigma {5e-3,1e-2,2.5e-2,5e-2}: %.2e %.2e %.2e %.2e "
                "(nondecreasing, low-noise within 2x of sigma=0.01)",
                disc[0], disc[1], disc[2], disc[3]);
  report(12, nondecreasing && low_noise_ok, buf);
}

// ------------------------------------------------------------- heavy2d

void criterion_field_experiments() {
  const auto t0 = Clock::now();
  bool fiber_ok = true;
  double fiber_worst = 0.0;

  {  // permeability field on the reduced grid, end to end
    ExperimentConfig cfg = ExperimentConfig::defaults_for("darcy");
    cfg.grid_n = 32;
    cfg.n_train = 2000;
    cfg.train.epochs = 400;
    cfg.train.decay_epochs = {150, 250, 350};
    cfg.seed = 1;
    Problem prob = make_problem(cfg);
    train(prob.store, training_set(prob, cfg.seed), cfg.train, make_step_fn(prob));
    std::mt19937_64 rng(77);
    Eigen::VectorXd truth = prob.prior.sample(1, rng).row(0).transpose();
    ObservationSet obs = make_observations(prob, truth, 5);
    InvertOut inv = invert(prob, obs, 3);
    Matrix y = flow_forward_eval(prob.store, prob.flow, inv.draws.samples);
    fiber_worst = std::max(
        fiber_worst, (y.leftCols(prob.cfg.P).rowwise() - inv.c.transpose()).cwiseAbs().maxCoeff());
  }

  int wins = 0;
  std::string detail;
  {  // traveltime tomography on the reduced grid
    ExperimentConfig cfg = ExperimentConfig::defaults_for("tomography");
    cfg.grid_n = 51;
    cfg.n_train = 2000;
    cfg.train.epochs = 800;
    cfg.train.decay_epochs = {300, 500, 700};
    cfg.seed = 1;
    Problem prob = make_problem(cfg);
    train(prob.store, training_set(prob, cfg.seed), cfg.train, make_step_fn(prob));
    // a generating truth with a comfortably positive velocity profile
    std::mt19937_64 rng(88);
    Eigen::VectorXd truth;
    for (;;) {
      truth = prob.prior.sample(1, rng).row(0).transpose();
      double vmin = 1e9;
      for (double y = 0.0; y <= 4.0; y += 0.25) {
        Eigen::Vector2d x(2.0, y);
        vmin = std::min(vmin, prob.prior.field_value(truth, x));
      }
      if (vmin > 0.5) break;
    }
    ObservationSet obs = make_observations(prob, truth, 6);
    InvertOut inv = invert(prob, obs, 4);
    Matrix y2 = flow_forward_eval(prob.store, prob.flow, inv.draws.samples);
    fiber_worst = std::max(
        fiber_worst, (y2.leftCols(prob.cfg.P).rowwise() - inv.c.transpose()).cwiseAbs().maxCoeff());

    Matrix pts = evaluation_points(prob);
    Eigen::VectorXd truth_v = field_on(prob.prior, truth, pts);
    for (int s = 0; s < 5; ++s) {
      PosteriorDraws d = sample_posterior(prob.store, prob.flow, inv.c, 1000, 500 + s);
      FieldStats st = posterior_field_stats(prob.prior, d.samples, pts);
      const double rel = relative_l2(st.mean, truth_v);
      wins += rel <= 0.15;
      char b[32];
      std::snprintf(b, sizeof b, " %.3f", rel);
      detail += b;
    }
  }
  fiber_ok = fiber_worst <= 1e-9;
  const double el = seconds_since(t0);
  char buf[260];
  std::snprintf(buf, sizeof buf,
                "reduced-scale 2-d runs: fiber deviation %.1e (<=1e-9), velocity profile "
                "rel-L2 per seed%s (<=0.15 on >=4/5), %.0fs",
                fiber_worst, detail.c_str(), el);
  report(13, fiber_ok && wins >= 4, buf);
}

}  // namespace

int main(int argc, char** argv) {
  std::string group = "fast";
  for (int i = 1; i + 1 < argc; ++i)
    if (std::strcmp(argv[i], "--group") == 0) group = argv[i + 1];

  const bool all = group == "all";
  if (all || group == "fast") {
    criterion_invertibility();
    criterion_change_of_variables();
    criterion_normalization();
    criterion_gradients();
    criterion_unbiasedness();
    criterion_oracles();
    criterion_independence_contrast();
  }
  if (all || group == "kinematics") criterion_kinematics();
  if (all || group == "diffusion") {
    DiffusionRun run = run_diffusion();
    criterion_posterior_accuracy(run);
    criterion_convergence_ordering(run);
    criterion_factorization(run);
    criterion_noise_sweep(run);
  }
  if (all || group == "heavy2d") criterion_field_experiments();

  if (!(all || group == "fast" || group == "kinematics" || group == "diffusion" ||
        group == "heavy2d")) {
    std::cerr << "unknown group " << group << "\n";
    return 2;
  }
  return g_failures;
}
