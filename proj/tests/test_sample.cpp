#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "piflow/samplers.hpp"
#include "piflow/solvers.hpp"
#include "test_util.hpp"

using namespace piflow;

namespace {

ExactPosterior std_normal_target() {
  ExactPosterior t;
  t.log_prior = [](const Eigen::VectorXd& x) { return -0.5 * x.squaredNorm(); };
  t.forward = [](const Eigen::VectorXd&) { return Eigen::VectorXd::Zero(0); };
  t.obs = Eigen::VectorXd::Zero(0);
  t.sigma = 1.0;
  return t;
}

}  // namespace

TEST_CASE("random walk recovers standard normal moments") {
  ExactPosterior target = std_normal_target();
  Chain chain = metropolis_sample(target, Eigen::VectorXd::Zero(1), 0.5, 100000, 1);
  CHECK(chain.accept_rate > 0.2);
  CHECK(chain.accept_rate < 0.95);
  Eigen::VectorXd x = chain.samples.col(0);
  const double mean = x.mean();
  const double sd = std::sqrt((x.array() - mean).square().sum() / (x.size() - 1));
  CHECK(std::abs(mean) <= 0.02);
  CHECK(std::abs(sd - 1.0) <= 0.02);
}

TEST_CASE("flat likelihood leaves the prior invariant") {
  ExactPosterior target;
  target.log_prior = [](const Eigen::VectorXd& x) {
    // N(1, 0.25) prior, empty data
    return -0.5 * (x(0) - 1.0) * (x(0) - 1.0) / 0.25;
  };
  target.forward = [](const Eigen::VectorXd&) { return Eigen::VectorXd::Zero(0); };
  target.obs = Eigen::VectorXd::Zero(0);
  Chain chain = metropolis_sample(target, Eigen::VectorXd::Ones(1), 0.4, 100000, 2);
  Matrix kept = trim_chain(chain.samples, 10000, 1);
  const double mean = kept.col(0).mean();
  const double var = (kept.col(0).array() - mean).square().sum() / (kept.rows() - 1);
  CHECK(std::abs(mean - 1.0) <= 0.02);
  CHECK(std::abs(var - 0.25) <= 0.02);
}

TEST_CASE("stationary histogram matches quadrature on a bimodal target") {
  ExactPosterior target;
  target.log_prior = [](const Eigen::VectorXd& x) {
    const double a = std::exp(-0.5 * (x(0) + 1.5) * (x(0) + 1.5));
    const double b = std::exp(-0.5 * (x(0) - 1.5) * (x(0) - 1.5));
    return std::log(0.3 * a + 0.7 * b);
  };
  target.forward = [](const Eigen::VectorXd&) { return Eigen::VectorXd::Zero(0); };
  target.obs = Eigen::VectorXd::Zero(0);

  Chain chain = metropolis_sample(target, Eigen::VectorXd::Zero(1), 1.2, 400000, 3);
  Matrix kept = trim_chain(chain.samples, 20000, 2);

  const double lo = -6.0, hi = 6.0;
  const int nb = 24;
  const double bw = (hi - lo) / nb;
  Eigen::VectorXd hist = Eigen::VectorXd::Zero(nb);
  for (int i = 0; i < kept.rows(); ++i) {
    const int b = std::clamp(static_cast<int>((kept(i, 0) - lo) / bw), 0, nb - 1);
    hist(b) += 1.0;
  }
  hist /= kept.rows() * bw;

  // quadrature of the normalized target over each bin
  const int sub = 200;
  Eigen::VectorXd qmass = Eigen::VectorXd::Zero(nb);
  double Z = 0.0;
  for (int b = 0; b < nb; ++b)
    for (int s = 0; s < sub; ++s) {
      Eigen::VectorXd x(1);
      x << lo + (b + (s + 0.5) / sub) * bw;
      const double p = std::exp(target.log_target(x));
      qmass(b) += p * bw / sub;
      Z += p * bw / sub;
    }
  qmass /= Z * bw;
  CHECK((hist - qmass).cwiseAbs().maxCoeff() <= 0.02);
}

TEST_CASE("trimming touches only the kept indices") {
  Matrix s(10, 2);
  for (int i = 0; i < 10; ++i) {
    s(i, 0) = i;
    s(i, 1) = 10 * i;
  }
  Matrix t = trim_chain(s, 4, 2);
  CHECK(t.rows() == 3);
  CHECK(t(0, 0) == 4.0);
  CHECK(t(1, 0) == 6.0);
  CHECK(t(2, 0) == 8.0);
  CHECK(t(2, 1) == 80.0);
  CHECK_THROWS(trim_chain(s, 10, 2));
  CHECK_THROWS(trim_chain(s, 2, 0));
}

TEST_CASE("effective sample size is sane") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  Matrix iid(5000, 1);
  for (int i = 0; i < 5000; ++i) iid(i, 0) = nd(rng);
  const double ess_iid = chain_ess(iid);
  CHECK(ess_iid > 2500.0);
  CHECK(ess_iid <= 5000.0);

  // strongly autocorrelated AR(1)
  Matrix ar(5000, 1);
  ar(0, 0) = 0.0;
  for (int i = 1; i < 5000; ++i) ar(i, 0) = 0.98 * ar(i - 1, 0) + 0.2 * nd(rng);
  CHECK(chain_ess(ar) < 1000.0);
}

TEST_CASE("huge tolerance reduces rejection to prior sampling") {
  auto prior = [](std::mt19937_64& rng) {
    std::normal_distribution<double> nd(2.0, 0.5);
    Eigen::VectorXd x(1);
    x << nd(rng);
    return x;
  };
  auto fwd = [](const Eigen::VectorXd& x) { return x; };
  AbcResult res = abc_rejection(prior, fwd, Eigen::VectorXd::Zero(1), 1e9, 20000, 5);
  CHECK(res.acceptance_fraction == doctest::Approx(1.0));
  const double mean = res.accepted.col(0).mean();
  CHECK(std::abs(mean - 2.0) <= 0.02);
}

TEST_CASE("accepted draws satisfy the tolerance") {
  auto prior = [](std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    Eigen::VectorXd x(2);
    x << nd(rng), nd(rng);
    return x;
  };
  auto fwd = [](const Eigen::VectorXd& x) { return x; };
  Eigen::VectorXd y(2);
  y << 0.5, -0.5;
  AbcResult res = abc_rejection(prior, fwd, y, 0.3, 200, 6);
  CHECK(res.accepted.rows() == 200);
  for (int i = 0; i < 200; ++i)
    CHECK((res.accepted.row(i).transpose() - y).norm() <= 0.3);
  CHECK(res.acceptance_fraction < 1.0);
}

TEST_CASE("arm posterior draws land near the target point") {
  std::mt19937_64 unused(0);
  Eigen::VectorXd sig(4);
  sig << 0.25, 0.5, 0.5, 0.5;
  auto prior = [sig](std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    Eigen::VectorXd x(4);
    for (int k = 0; k < 4; ++k) x(k) = sig(k) * nd(rng);
    return x;
  };
  auto fwd = [](const Eigen::VectorXd& x) {
    return Eigen::VectorXd(kinematics_forward(Eigen::Vector4d(x)));
  };
  Eigen::VectorXd y(2);
  y << 1.5, 0.5;
  AbcResult res = abc_rejection(prior, fwd, y, 0.035, 300, 7);
  for (int i = 0; i < 300; ++i) {
    Eigen::VectorXd img = fwd(res.accepted.row(i).transpose());
    CHECK((img - y).norm() <= 0.035);
  }
  CHECK(res.acceptance_fraction > 0.0);
}

TEST_CASE("sampler input validation") {
  ExactPosterior target = std_normal_target();
  CHECK_THROWS(metropolis_sample(target, Eigen::VectorXd::Zero(1), -0.1, 100, 1));
  CHECK_THROWS(metropolis_sample(target, Eigen::VectorXd::Zero(1), 0.1, 0, 1));
  auto prior = [](std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    Eigen::VectorXd x(1);
    x << nd(rng);
    return x;
  };
  auto fwd = [](const Eigen::VectorXd& x) { return x; };
  CHECK_THROWS(abc_rejection(prior, fwd, Eigen::VectorXd::Zero(1), -1.0, 10, 1));
  // unattainable tolerance trips the safety cap
  CHECK_THROWS(abc_rejection(prior, fwd, Eigen::VectorXd::Constant(1, 100.0), 1e-6, 10, 1,
                             20000));
}
