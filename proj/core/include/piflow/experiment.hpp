#pragma once

#include <filesystem>

#include "piflow/checkpoint.hpp"
#include "piflow/engine.hpp"
#include "piflow/metrics.hpp"
#include "piflow/solvers.hpp"

namespace piflow {

/// One JSON document drives every stage. Defaults depend on the
/// experiment kind; unknown keys are rejected.
struct ExperimentConfig {
  std::string experiment = "diffusion1d";
  // invertible map
  int n_layers = 8;
  int flow_width = 100;
  int flow_depth = 1;
  // basis net (PDE experiments only)
  int nb_width = 64;
  int nb_depth = 6;
  int P = 5;
  // training
  int n_train = 4000;
  TrainConfig train;
  LossWeights weights;
  bool mmd_variant = false;  // kinematics: MMD losses instead of density independence
  double mmd_bandwidth = 1.2;
  double mmd_beta = 1.0, mmd_gamma = 1.0;
  int n_boxes = 32;
  double box_radius = 0.1;
  int n_colloc = 64;
  double source_exclude = 0.1;
  int n_boundary = 17;  // fixed points per boundary face
  // observations
  int n_sensors = 11;  // per axis in 2-d
  double sigma = 0.01;
  // prior / oracle grids
  int n_kle = 10;
  int grid_n = 201;  // FEM dof, Darcy cells per axis, FSM nodes per axis
  double v0 = 2.0;
  // inversion
  int n_posterior = 1000;
  int fit_steps = 2000;
  double fit_lr = 1e-2;
  int marginal_draws = 16;
  // baselines
  int mcmc_steps = 200000;
  int mcmc_burn_in = 50000;
  int mcmc_thin = 10;
  double mcmc_proposal = 0.01;
  double abc_eps = 0.035;
  int abc_accept = 2000;
  // evaluation
  std::vector<double> test_lambda;  // ground truth; kinematics: target endpoint
  std::vector<double> sweep_sigmas{0.005, 0.01, 0.025, 0.05};

  uint64_t seed = 0;
  std::string out_dir = "runs";

  static ExperimentConfig defaults_for(const std::string& experiment);
  static ExperimentConfig from_json_text(const std::string& text);
  std::string to_json_text() const;
  void validate() const;
};

/// Built model + prior + sensor layout for one config.
struct Problem {
  ExperimentConfig cfg;
  FieldPrior prior;
  ParamStore store;
  FlowModel flow;
  NeuralBasis basis;
  bool has_basis = false;
  int dim = 1;
  Matrix sensors;  // O x dim
};

Problem make_problem(const ExperimentConfig& cfg);

/// Prior draws forming the unlabeled training set (n_train x F).
Matrix training_set(const Problem& prob, uint64_t seed);

/// Per-experiment minibatch loss. The returned closure keeps a reference
/// to the problem, which must outlive it.
StepFn make_step_fn(const Problem& prob);

/// Reference forward map lambda -> sensor values via the oracle solver.
Eigen::VectorXd oracle_forward(const Problem& prob, const Eigen::VectorXd& lambda);

ObservationSet make_observations(const Problem& prob, const Eigen::VectorXd& lambda_true,
                                 uint64_t seed);

ExactPosterior exact_posterior(const Problem& prob, const ObservationSet& obs);

/// Sensor design matrix mapping coefficients to predicted observations
/// (traveltimes are rescaled by the fixed factored-eikonal prefactor).
Matrix assemble_design(const Problem& prob);

struct InvertOut {
  Eigen::VectorXd c;
  PosteriorDraws draws;
  double residual = 0.0;  // ||obs - design c|| after the fit
};

/// Coefficient fit plus reverse sampling (kinematics reads c straight
/// off the observation).
InvertOut invert(const Problem& prob, const ObservationSet& obs, uint64_t seed);

/// Points where posterior field statistics are evaluated and compared.
Matrix evaluation_points(const Problem& prob);

/// Runs one stage of the pipeline, writing artifacts under
/// <out>/<experiment>/<run-id>/. "all" chains
/// gen-data/train/invert/mcmc/evaluate. Returns the run directory.
std::filesystem::path run_stage(const ExperimentConfig& cfg, const std::string& stage,
                                const std::filesystem::path& out_root);

}  // namespace piflow
