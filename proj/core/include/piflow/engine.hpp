#pragma once

#include "piflow/losses.hpp"
#include "piflow/samplers.hpp"

namespace piflow {

struct TrainConfig {
  int epochs = 1000;
  int batch = 64;
  double lr = 1e-3;
  std::vector<int> decay_epochs;
  double decay_factor = 0.8;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  double grad_clip = 0.0;  // global-norm cap per step, 0 disables
  uint64_t seed = 0;
  void validate() const;
};

/// Adam over the whole parameter store.
struct AdamState {
  std::vector<Matrix> m, v;
  long t = 0;
  void init(const ParamStore& store);
  void step(ParamStore& store, const std::vector<Matrix>& grads, double lr,
            const TrainConfig& cfg);
};

struct StepResult {
  Value total;
  std::vector<WeightedTerm> terms;
};

/// Builds the loss for one minibatch on a fresh tape. batch_rows holds
/// the training-set row indices of the batch (for per-sample field
/// lookups).
using StepFn = std::function<StepResult(Tape&, const ParamBind&, const Matrix& batch,
                                        const std::vector<int>& batch_rows, std::mt19937_64&)>;

struct HistoryRow {
  int epoch = 0;
  double total = 0.0;
  std::vector<std::pair<std::string, double>> terms;
};

struct TrainResult {
  std::vector<HistoryRow> history;
};

/// Minibatch training loop: shuffle, step, Adam, stepped learning-rate
/// decay. Deterministic for a fixed seed.
TrainResult train(ParamStore& store, const Matrix& training_set, const TrainConfig& cfg,
                  const StepFn& step);

/// Marginal density of c estimated from the independence assumption,
/// averaged over the given fresh latent draws (S x (F-P)). Returns 1x1.
Value log_marginal_c(Tape& tape, const ParamBind& bind, const FlowModel& model,
                     const LogDensityFn& log_prior, Value c_row, const Matrix& z_draws);
double log_marginal_c(const ParamStore& store, const FlowModel& model,
                      const LogDensityFn& log_prior, const Eigen::VectorXd& c, int S,
                      uint64_t seed);

/// Coefficient fit: ||obs - design*c||^2 - rho*log p(c) by Adam from the
/// least-squares initializer. With rho = 0 a rank-deficient design is an
/// error.
Eigen::VectorXd fit_coefficients(const Matrix& design, const Eigen::VectorXd& obs,
                                 const ParamStore* store, const FlowModel* model,
                                 const LogDensityFn* log_prior, double rho, int steps = 2000,
                                 double lr = 1e-2, int S = 16, uint64_t seed = 0);

struct PosteriorDraws {
  Eigen::VectorXd c;
  Matrix samples;          // n x F
  Matrix z;                // n x (F-P)
  Eigen::VectorXd weights; // empty until reweighted; normalized otherwise
  double ess = 0.0;
};

/// Runs the flow backwards over fresh latent draws at fixed c.
PosteriorDraws sample_posterior(const ParamStore& store, const FlowModel& model,
                                const Eigen::VectorXd& c, int n, uint64_t seed);

/// Importance weights against the exact posterior, with the proposal
/// density taken on the fixed-c fiber: q = p_z(z) * |det dg/dlambda|.
void importance_reweight(PosteriorDraws& draws, const ExactPosterior& exact,
                         const ParamStore& store, const FlowModel& model);

/// Sample correlation diagnostics of the pushforward (c, z) = g(lambda):
/// max |corr(c_i, z_j)|, max |mean(z)|, max |std(z) - 1|.
struct FactorizationDiag {
  double max_abs_corr = 0.0;
  double max_abs_mean_z = 0.0;
  double max_abs_std_dev = 0.0;
};
FactorizationDiag factorization_diagnostic(const ParamStore& store, const FlowModel& model,
                                           const Matrix& lambda_samples);

}  // namespace piflow
