#include "piflow/engine.hpp"

#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace piflow {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (batch < 1) throw std::invalid_argument("train: batch must be >= 1");
  if (lr <= 0.0) throw std::invalid_argument("train: lr must be > 0");
  if (decay_factor <= 0.0 || decay_factor > 1.0)
    throw std::invalid_argument("train: decay_factor must be in (0, 1]");
  if (grad_clip < 0.0) throw std::invalid_argument("train: grad_clip must be >= 0");
}

void AdamState::init(const ParamStore& store) {
  m.clear();
  v.clear();
  for (const Matrix& p : store.values) {
    m.push_back(Matrix::Zero(p.rows(), p.cols()));
    v.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
  t = 0;
}

void AdamState::step(ParamStore& store, const std::vector<Matrix>& grads, double lr,
                     const TrainConfig& cfg) {
  ++t;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < store.values.size(); ++i) {
    const Matrix& g = grads[i];
    if (g.size() == 0) continue;  // parameter unused by this loss
    m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g;
    v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g.array().square().matrix();
    store.values[i].array() -=
        lr * (m[i].array() / bc1) / ((v[i].array() / bc2).sqrt() + cfg.adam_eps);
  }
}

TrainResult train(ParamStore& store, const Matrix& training_set, const TrainConfig& cfg,
                  const StepFn& step) {
  cfg.validate();
  const int n = static_cast<int>(training_set.rows());
  if (n < 1) throw std::invalid_argument("train: empty training set");

  std::mt19937_64 rng(cfg.seed);
  AdamState adam;
  adam.init(store);

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  result.history.reserve(cfg.epochs);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    int n_decays = 0;
    for (int d : cfg.decay_epochs)
      if (epoch >= d) ++n_decays;
    const double lr = cfg.lr * std::pow(cfg.decay_factor, n_decays);

    std::shuffle(order.begin(), order.end(), rng);

    HistoryRow row;
    row.epoch = epoch;
    int n_batches = 0;
    for (int start = 0; start < n; start += cfg.batch) {
      const int bs = std::min(cfg.batch, n - start);
      std::vector<int> rows(order.begin() + start, order.begin() + start + bs);
      Matrix batch(bs, training_set.cols());
      for (int i = 0; i < bs; ++i) batch.row(i) = training_set.row(rows[i]);

      Tape tape;
      ParamBind bind = ParamBind::make(tape, store);
      StepResult sr;
      try {
        sr = step(tape, bind, batch, rows, rng);
      } catch (const std::exception& e) {
        throw std::runtime_error("train: epoch " + std::to_string(epoch) + ": " + e.what());
      }
      const double total = tape.scalar(sr.total);
      if (!std::isfinite(total))
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch));

      std::vector<Matrix> grads = tape.gradients(sr.total);
      std::vector<Matrix> param_grads(store.size());
      for (std::size_t i = 0; i < store.size(); ++i) {
        const Matrix& g = grads[bind[static_cast<int>(i)].id];
        if (g.size() != 0) param_grads[i] = g;
      }
      if (cfg.grad_clip > 0.0) {
        double sq = 0.0;
        for (const Matrix& g : param_grads) sq += g.squaredNorm();
        const double norm = std::sqrt(sq);
        if (norm > cfg.grad_clip)
          for (Matrix& g : param_grads) g *= cfg.grad_clip / norm;
      }
      adam.step(store, param_grads, lr, cfg);

      row.total += total;
      if (row.terms.empty())
        for (const WeightedTerm& t : sr.terms) row.terms.emplace_back(t.name, 0.0);
      for (std::size_t k = 0; k < sr.terms.size(); ++k)
        row.terms[k].second += tape.scalar(sr.terms[k].value);
      ++n_batches;
    }
    row.total /= n_batches;
    for (auto& [name, v] : row.terms) v /= n_batches;
    result.history.push_back(std::move(row));
  }
  return result;
}

Value log_marginal_c(Tape& tape, const ParamBind& bind, const FlowModel& model,
                     const LogDensityFn& log_prior, Value c_row, const Matrix& z_draws) {
  const int S = static_cast<int>(z_draws.rows());
  if (S < 1) throw std::invalid_argument("log_marginal_c: need at least one latent draw");
  if (tape.val(c_row).rows() != 1)
    throw std::invalid_argument("log_marginal_c: c must be a single row");

  // Replicate c across the draws so one inverse pass covers all of them.
  Matrix ones = Matrix::Ones(S, 1);
  Value c_rep = tape.matmul(tape.constant(ones), c_row);
  Value z = tape.constant(z_draws);
  Value lq = log_q_joint(tape, bind, model, log_prior, c_rep, z);  // S x 1
  Value lpz = std_normal_logpdf(tape, z);
  return tape.mean(tape.sub(lq, lpz));
}

double log_marginal_c(const ParamStore& store, const FlowModel& model,
                      const LogDensityFn& log_prior, const Eigen::VectorXd& c, int S,
                      uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Matrix z(S, model.F - model.P);
  for (int i = 0; i < z.rows(); ++i)
    for (int j = 0; j < z.cols(); ++j) z(i, j) = nd(rng);
  Tape tape;
  ParamBind bind = ParamBind::make(tape, store);
  Value c_row = tape.constant(Matrix(c.transpose()));
  return tape.scalar(log_marginal_c(tape, bind, model, log_prior, c_row, z));
}

Eigen::VectorXd fit_coefficients(const Matrix& design, const Eigen::VectorXd& obs,
                                 const ParamStore* store, const FlowModel* model,
                                 const LogDensityFn* log_prior, double rho, int steps,
                                 double lr, int S, uint64_t seed) {
  const int P = static_cast<int>(design.cols());
  if (design.rows() != obs.size())
    throw std::invalid_argument("fit_coefficients: design/observation size mismatch");

  Eigen::ColPivHouseholderQR<Matrix> qr(design);
  if (rho == 0.0 && qr.rank() < P)
    throw std::invalid_argument(
        "fit_coefficients: rank-deficient design with rho = 0; set rho > 0");
  Eigen::VectorXd c = qr.solve(obs);
  if (rho == 0.0 || steps == 0) return c;
  if (!store || !model || !log_prior)
    throw std::invalid_argument("fit_coefficients: rho > 0 needs a trained flow");

  // One fixed set of latent draws keeps the objective deterministic
  // across refinement steps.
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Matrix z(S, model->F - model->P);
  for (int i = 0; i < z.rows(); ++i)
    for (int j = 0; j < z.cols(); ++j) z(i, j) = nd(rng);

  Matrix m = Matrix::Zero(1, P), v = Matrix::Zero(1, P);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int t = 1; t <= steps; ++t) {
    Tape tape;
    ParamBind bind = ParamBind::make(tape, *store);
    Value c_row = tape.input(Matrix(c.transpose()));
    Value pred = tape.matmul(tape.constant(design), tape.transpose(c_row));  // O x 1
    Value resid = tape.sum(tape.square(tape.sub(tape.constant(Matrix(obs)), pred)));
    Value lp = log_marginal_c(tape, bind, *model, *log_prior, c_row, z);
    Value obj = tape.sub(resid, tape.scale(lp, rho));
    if (!std::isfinite(tape.scalar(obj)))
      throw std::runtime_error("fit_coefficients: non-finite objective at step " +
                               std::to_string(t));
    const Matrix g = tape.gradients(obj)[c_row.id];
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.array().square().matrix();
    const double bc1 = 1.0 - std::pow(b1, t), bc2 = 1.0 - std::pow(b2, t);
    Eigen::ArrayXXd upd = lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
    c -= upd.matrix().row(0).transpose();
  }
  return c;
}

PosteriorDraws sample_posterior(const ParamStore& store, const FlowModel& model,
                                const Eigen::VectorXd& c, int n, uint64_t seed) {
  if (c.size() != model.P)
    throw std::invalid_argument("sample_posterior: coefficient dimension mismatch");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  PosteriorDraws out;
  out.c = c;
  out.z.resize(n, model.F - model.P);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < out.z.cols(); ++j) out.z(i, j) = nd(rng);
  Matrix c_rep = c.transpose().replicate(n, 1);
  out.samples = flow_inverse_eval(store, model, c_rep, out.z);
  return out;
}

void importance_reweight(PosteriorDraws& draws, const ExactPosterior& exact,
                         const ParamStore& store, const FlowModel& model) {
  const int n = static_cast<int>(draws.samples.rows());
  if (n == 0) throw std::invalid_argument("importance_reweight: no draws");
  Eigen::VectorXd logdet(n);
  flow_forward_eval(store, model, draws.samples, &logdet);

  Eigen::VectorXd logw(n);
  for (int i = 0; i < n; ++i) {
    const double log_q = std_normal_logpdf(Eigen::VectorXd(draws.z.row(i))) + logdet(i);
    logw(i) = exact.log_target(Eigen::VectorXd(draws.samples.row(i))) - log_q;
  }
  const double shift = logw.maxCoeff();
  if (!std::isfinite(shift))
    throw std::runtime_error("importance_reweight: all weights vanished or diverged");
  Eigen::VectorXd w = (logw.array() - shift).exp();
  const double total = w.sum();
  draws.weights = w / total;
  draws.ess = total * total / w.squaredNorm();
}

FactorizationDiag factorization_diagnostic(const ParamStore& store, const FlowModel& model,
                                           const Matrix& lambda_samples) {
  const int n = static_cast<int>(lambda_samples.rows());
  if (n < 2) throw std::invalid_argument("factorization_diagnostic: need at least 2 samples");
  Matrix y = flow_forward_eval(store, model, lambda_samples);
  Matrix centered = y.rowwise() - y.colwise().mean();
  Eigen::VectorXd sd = (centered.array().square().colwise().sum() / n).sqrt();

  FactorizationDiag diag;
  for (int i = 0; i < model.P; ++i)
    for (int j = model.P; j < model.F; ++j) {
      const double cov = centered.col(i).dot(centered.col(j)) / n;
      const double corr = cov / (sd(i) * sd(j));
      diag.max_abs_corr = std::max(diag.max_abs_corr, std::abs(corr));
    }
  for (int j = model.P; j < model.F; ++j) {
    diag.max_abs_mean_z = std::max(diag.max_abs_mean_z, std::abs(y.col(j).mean()));
    diag.max_abs_std_dev = std::max(diag.max_abs_std_dev, std::abs(sd(j) - 1.0));
  }
  return diag;
}

}  // namespace piflow
