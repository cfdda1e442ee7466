#pragma once

#include "piflow/prior.hpp"

namespace piflow {

/// ||a - b|| / ||b||.
double relative_l2(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Componentwise mean absolute difference.
double mean_pointwise_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

struct FieldStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd std_dev;
};

/// Pointwise mean/std of the prior's physical field over posterior draws
/// at the given evaluation points. Empty weights means equal weights.
FieldStats posterior_field_stats(const FieldPrior& prior, const Matrix& draws,
                                 const Matrix& eval_points,
                                 const Eigen::VectorXd& weights = {});

/// Same reduction applied directly to per-draw rows of precomputed
/// values (n_draws x n_points).
FieldStats weighted_stats(const Matrix& values, const Eigen::VectorXd& weights = {});

/// Linear-interpolation quantile of a copy of the data.
double quantile(Eigen::VectorXd data, double q);

/// min, q25, median, q75, max of each column.
struct BoxplotRow {
  double lo, q25, med, q75, hi;
};
std::vector<BoxplotRow> boxplot_summary(const Matrix& columns);

}  // namespace piflow
