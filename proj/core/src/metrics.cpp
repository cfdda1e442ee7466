#include "piflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace piflow {

double relative_l2(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw std::invalid_argument("relative_l2: size mismatch");
  const double denom = b.norm();
  if (denom == 0.0) throw std::invalid_argument("relative_l2: zero reference");
  return (a - b).norm() / denom;
}

double mean_pointwise_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw std::invalid_argument("mean_pointwise_error: size mismatch");
  return (a - b).cwiseAbs().mean();
}

FieldStats weighted_stats(const Matrix& values, const Eigen::VectorXd& weights) {
  const Eigen::Index n = values.rows();
  if (n == 0) throw std::invalid_argument("weighted_stats: no draws");
  Eigen::VectorXd w;
  if (weights.size() == 0)
    w = Eigen::VectorXd::Constant(n, 1.0 / n);
  else if (weights.size() == n)
    w = weights / weights.sum();
  else
    throw std::invalid_argument("weighted_stats: weight length mismatch");

  FieldStats out;
  out.mean = values.transpose() * w;
  Matrix centered = values.rowwise() - out.mean.transpose();
  out.std_dev = (centered.array().square().matrix().transpose() * w).array().sqrt();
  return out;
}

FieldStats posterior_field_stats(const FieldPrior& prior, const Matrix& draws,
                                 const Matrix& eval_points, const Eigen::VectorXd& weights) {
  Matrix values(draws.rows(), eval_points.rows());
  for (Eigen::Index i = 0; i < draws.rows(); ++i) {
    const Eigen::VectorXd lambda = draws.row(i);
    for (Eigen::Index j = 0; j < eval_points.rows(); ++j)
      values(i, j) = prior.field_value(lambda, eval_points.row(j));
  }
  return weighted_stats(values, weights);
}

double quantile(Eigen::VectorXd data, double q) {
  if (data.size() == 0) throw std::invalid_argument("quantile: empty data");
  if (q < 0.0 || q > 1.0) throw std::invalid_argument("quantile: q outside [0,1]");
  std::sort(data.data(), data.data() + data.size());
  const double pos = q * (data.size() - 1);
  const auto lo = static_cast<Eigen::Index>(std::floor(pos));
  const auto hi = static_cast<Eigen::Index>(std::ceil(pos));
  return data(lo) + (pos - lo) * (data(hi) - data(lo));
}

std::vector<BoxplotRow> boxplot_summary(const Matrix& columns) {
  std::vector<BoxplotRow> rows;
  rows.reserve(columns.cols());
  for (Eigen::Index c = 0; c < columns.cols(); ++c) {
    Eigen::VectorXd col = columns.col(c);
    rows.push_back({col.minCoeff(), quantile(col, 0.25), quantile(col, 0.5),
                    quantile(col, 0.75), col.maxCoeff()});
  }
  return rows;
}

}  // namespace piflow
