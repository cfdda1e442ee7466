#include "piflow/samplers.hpp"

#include <cmath>
#include <stdexcept>

namespace piflow {

Chain metropolis_sample(const ExactPosterior& target, const Eigen::VectorXd& init,
                        double proposal_std, int n_steps, uint64_t seed) {
  if (proposal_std <= 0.0) throw std::invalid_argument("metropolis_sample: proposal_std must be > 0");
  if (n_steps < 1) throw std::invalid_argument("metropolis_sample: n_steps must be >= 1");
  double lp = target.log_target(init);
  if (!std::isfinite(lp))
    throw std::invalid_argument("metropolis_sample: init has non-finite target density");

  const int d = static_cast<int>(init.size());
  Chain chain;
  chain.samples.resize(n_steps, d);
  chain.log_target.resize(n_steps);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, proposal_std);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  Eigen::VectorXd cur = init;
  long accepted = 0;
  for (int s = 0; s < n_steps; ++s) {
    Eigen::VectorXd prop = cur;
    for (int k = 0; k < d; ++k) prop(k) += nd(rng);
    const double lp_prop = target.log_target(prop);
    if (std::log(u01(rng)) < lp_prop - lp) {
      cur = prop;
      lp = lp_prop;
      ++accepted;
    }
    chain.samples.row(s) = cur.transpose();
    chain.log_target(s) = lp;
  }
  chain.accept_rate = static_cast<double>(accepted) / n_steps;
  return chain;
}

ad::Matrix trim_chain(const ad::Matrix& samples, int burn_in, int thin) {
  if (burn_in < 0 || thin < 1 || burn_in >= samples.rows())
    throw std::invalid_argument("trim_chain: bad burn-in/thin");
  const int kept = static_cast<int>((samples.rows() - burn_in + thin - 1) / thin);
  ad::Matrix out(kept, samples.cols());
  for (int k = 0; k < kept; ++k) out.row(k) = samples.row(burn_in + k * thin);
  return out;
}

double chain_ess(const ad::Matrix& samples) {
  const int n = static_cast<int>(samples.rows());
  if (n < 10) return static_cast<double>(n);
  Eigen::VectorXd x = samples.col(0);
  const double mean = x.mean();
  x.array() -= mean;
  const double var = x.squaredNorm() / n;
  if (var == 0.0) return static_cast<double>(n);
  double tau = 1.0;
  for (int lag = 1; lag < n / 2; ++lag) {
    double acf = 0.0;
    for (int i = 0; i + lag < n; ++i) acf += x(i) * x(i + lag);
    acf /= (n - lag) * var;
    if (acf < 0.05) break;
    tau += 2.0 * acf;
  }
  return n / tau;
}

AbcResult abc_rejection(const std::function<Eigen::VectorXd(std::mt19937_64&)>& prior_sampler,
                        const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& forward,
                        const Eigen::VectorXd& y_obs, double eps, int n_accept, uint64_t seed,
                        long safety_cap) {
  if (eps <= 0.0) throw std::invalid_argument("abc_rejection: eps must be > 0");
  std::mt19937_64 rng(seed);
  AbcResult result;
  long tried = 0;
  int got = 0;
  std::vector<Eigen::VectorXd> kept;
  kept.reserve(n_accept);
  while (got < n_accept) {
    ++tried;
    Eigen::VectorXd lambda = prior_sampler(rng);
    if ((forward(lambda) - y_obs).norm() < eps) {
      kept.push_back(std::move(lambda));
      ++got;
    }
    if (tried >= safety_cap && static_cast<double>(got) / tried < 1e-6)
      throw std::runtime_error("abc_rejection: acceptance fraction below 1e-6; increase eps");
  }
  result.accepted.resize(n_accept, kept.front().size());
  for (int i = 0; i < n_accept; ++i) result.accepted.row(i) = kept[i].transpose();
  result.acceptance_fraction = static_cast<double>(got) / tried;
  return result;
}

}  // namespace piflow
