#pragma once

#include <functional>
#include <random>

#include "piflow/tape.hpp"

namespace piflow {

/// Unnormalized exact posterior: prior density times a Gaussian
/// likelihood over sensor observations.
struct ExactPosterior {
  std::function<double(const Eigen::VectorXd&)> log_prior;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> forward;
  Eigen::VectorXd obs;
  double sigma = 0.01;

  double log_target(const Eigen::VectorXd& lambda) const {
    const double lp = log_prior(lambda);
    if (!std::isfinite(lp)) return lp;
    const Eigen::VectorXd pred = forward(lambda);
    return lp - (obs - pred).squaredNorm() / (2.0 * sigma * sigma);
  }
};

struct Chain {
  ad::Matrix samples;       // n_steps x dim (raw, no trimming)
  Eigen::VectorXd log_target;
  double accept_rate = 0.0;
};

/// Symmetric Gaussian random-walk Metropolis.
Chain metropolis_sample(const ExactPosterior& target, const Eigen::VectorXd& init,
                        double proposal_std, int n_steps, uint64_t seed);

/// Burn-in/thinning touch only the reported indices.
ad::Matrix trim_chain(const ad::Matrix& samples, int burn_in, int thin);

/// Crude integrated-autocorrelation ESS estimate on the first coordinate.
double chain_ess(const ad::Matrix& samples);

struct AbcResult {
  ad::Matrix accepted;
  double acceptance_fraction = 0.0;
};

/// Rejection ABC: accept prior draws whose forward image lands within
/// eps of the observation, until n_accept samples are collected.
AbcResult abc_rejection(const std::function<Eigen::VectorXd(std::mt19937_64&)>& prior_sampler,
                        const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& forward,
                        const Eigen::VectorXd& y_obs, double eps, int n_accept, uint64_t seed,
                        long safety_cap = 200000000L);

}  // namespace piflow
