#include "epde/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "epde/common.hpp"

namespace epde {

std::vector<double> ranks_with_ties(const std::vector<double>& v) {
  size_t n = v.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error("spearman: length mismatch");
  if (a.size() < 3) throw Error("spearman: need at least 3 values");
  auto ra = ranks_with_ties(a);
  auto rb = ranks_with_ties(b);
  double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double da = ra[i] - ma, db = rb[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0)
    throw Error("spearman: rank correlation undefined for constant input");
  return sab / std::sqrt(saa * sbb);
}

double relative_l2(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size()) throw Error("relative_l2: shape mismatch");
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    double d = pred[i] - truth[i];
    num += d * d;
    den += truth[i] * truth[i];
  }
  if (den <= 0.0) throw Error("relative_l2: zero-norm truth");
  return std::sqrt(num / den);
}

double relative_l2(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
    throw Error("relative_l2: shape mismatch");
  double den = truth.norm();
  if (den <= 0.0) throw Error("relative_l2: zero-norm truth");
  return (pred - truth).norm() / den;
}

double predictor_bandwidth(const Eigen::MatrixXd& predictors) {
  double range = 0.0;
  for (Eigen::Index c = 0; c < predictors.cols(); ++c)
    range = std::max(range, predictors.col(c).maxCoeff() - predictors.col(c).minCoeff());
  return range / 3.0;
}

Eigen::VectorXd kernel_loo_fit(const Eigen::MatrixXd& predictors, const Eigen::VectorXd& target,
                               double sigma) {
  using Eigen::MatrixXd;
  using Eigen::VectorXd;
  Eigen::Index n = predictors.rows();
  Eigen::Index k = predictors.cols();
  if (target.size() != n) throw Error("kernel_loo_fit: size mismatch");
  if (n < k + 2) throw Error("kernel_loo_fit: too few samples");
  VectorXd fitted(n);
  if (sigma <= 0.0) {
    // Degenerate predictors: the best constant leave-one-out prediction.
    double total = target.sum();
    for (Eigen::Index i = 0; i < n; ++i)
      fitted(i) = (total - target(i)) / static_cast<double>(n - 1);
    return fitted;
  }
  double inv_s2 = 1.0 / (sigma * sigma);
  MatrixXd X(n, k + 1);
  X.col(0).setOnes();
  X.rightCols(k) = predictors;
  for (Eigen::Index i = 0; i < n; ++i) {
    MatrixXd A = MatrixXd::Zero(k + 1, k + 1);
    VectorXd b = VectorXd::Zero(k + 1);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      double w = std::exp(-(predictors.row(j) - predictors.row(i)).squaredNorm() * inv_s2);
      A.noalias() += w * X.row(j).transpose() * X.row(j);
      b.noalias() += w * target(j) * X.row(j).transpose();
    }
    // Tiny ridge keeps near-singular local systems well-posed.
    A.diagonal().array() += 1e-12 * (1.0 + A.diagonal().maxCoeff());
    VectorXd beta = A.ldlt().solve(b);
    fitted(i) = X.row(i) * beta;
  }
  return fitted;
}

double local_linear_r2(const Eigen::MatrixXd& predictors, const Eigen::VectorXd& y) {
  double sigma = predictor_bandwidth(predictors);
  Eigen::VectorXd fitted = kernel_loo_fit(predictors, y, sigma);
  double mean = y.mean();
  double ss_tot = (y.array() - mean).square().sum();
  if (ss_tot <= 0.0) throw Error("local_linear_r2: constant response");
  double ss_res = (y - fitted).squaredNorm();
  return 1.0 - ss_res / ss_tot;
}

}  // namespace epde
