#pragma once

#include <Eigen/Dense>
#include <vector>

namespace epde {

// Spearman rank correlation with average ranks for ties. Throws on length
// mismatch or n < 3; a constant input has no defined rank correlation and is
// reported as an Error.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

// ||pred - truth||_2 / ||truth||_2 over flattened fields.
double relative_l2(const std::vector<double>& pred, const std::vector<double>& truth);
double relative_l2(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth);

// Leave-one-out Gaussian-kernel local linear fit: row i of `predictors` is
// fitted from all other rows with weights exp(-||p_j - p_i||^2 / sigma^2).
// Returns the fitted values.
Eigen::VectorXd kernel_loo_fit(const Eigen::MatrixXd& predictors, const Eigen::VectorXd& target,
                               double sigma);

// Bandwidth rule shared by the harmonic filter and the evaluation metrics:
// 1/3 of the largest per-column range of the predictors.
double predictor_bandwidth(const Eigen::MatrixXd& predictors);

// R^2 of the leave-one-out local linear regression of y on the predictor
// columns (1 - SS_res/SS_tot).
double local_linear_r2(const Eigen::MatrixXd& predictors, const Eigen::VectorXd& y);

std::vector<double> ranks_with_ties(const std::vector<double>& v);

}  // namespace epde
