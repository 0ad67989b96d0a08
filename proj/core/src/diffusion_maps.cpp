#include "epde/diffusion_maps.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "epde/metrics.hpp"

namespace epde {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

namespace {

void validate_distances(const MatrixXd& dist) {
  if (dist.rows() != dist.cols()) throw Error("distance matrix must be square");
  if (dist.rows() < 2) throw Error("distance matrix needs at least 2 points");
  double scale = std::max(1.0, dist.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < dist.rows(); ++i) {
    if (std::fabs(dist(i, i)) > 1e-12 * scale)
      throw Error("distance matrix has a nonzero diagonal");
    for (Eigen::Index j = i + 1; j < dist.cols(); ++j) {
      if (dist(i, j) < 0.0) throw Error("distance matrix has negative entries");
      if (std::fabs(dist(i, j) - dist(j, i)) > 1e-9 * scale)
        throw Error("distance matrix is not symmetric");
    }
  }
}

// Top-k eigenpairs of a symmetric matrix by Lanczos with full
// reorthogonalization. Deterministic start vector.
void lanczos_top_eigs(const MatrixXd& S, int k, VectorXd& values, MatrixXd& vectors) {
  Eigen::Index n = S.rows();
  int m = std::min<Eigen::Index>(n, 4 * k + 40);
  MatrixXd V(n, m);
  VectorXd alpha(m), beta(m);
  VectorXd v = VectorXd::Ones(n);
  v.normalize();
  V.col(0) = v;
  VectorXd w;
  double b = 0.0;
  for (int j = 0; j < m; ++j) {
    w = S * V.col(j);
    if (j > 0) w -= b * V.col(j - 1);
    alpha(j) = V.col(j).dot(w);
    w -= alpha(j) * V.col(j);
    // full reorthogonalization, twice for safety
    for (int pass = 0; pass < 2; ++pass)
      for (int i = 0; i <= j; ++i) w -= V.col(i).dot(w) * V.col(i);
    b = w.norm();
    beta(j) = b;
    if (j + 1 < m) {
      if (b < 1e-14) {
        m = j + 1;
        break;
      }
      V.col(j + 1) = w / b;
    }
  }
  MatrixXd T = MatrixXd::Zero(m, m);
  for (int j = 0; j < m; ++j) {
    T(j, j) = alpha(j);
    if (j + 1 < m) T(j, j + 1) = T(j + 1, j) = beta(j);
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(T);
  if (es.info() != Eigen::Success) throw NumericalError("Lanczos tridiagonal solve failed");
  // ascending order from Eigen; take the top k
  values.resize(k);
  vectors.resize(n, k);
  for (int i = 0; i < k; ++i) {
    int src = m - 1 - i;
    values(i) = es.eigenvalues()(src);
    vectors.col(i) = V.leftCols(m) * es.eigenvectors().col(src);
    vectors.col(i).normalize();
  }
}

void fix_sign(Eigen::Ref<VectorXd> v) {
  double maxabs = v.cwiseAbs().maxCoeff();
  if (maxabs <= 0.0) return;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::fabs(v(i)) > 1e-12 * maxabs) {
      if (v(i) < 0.0) v = -v;
      return;
    }
  }
}

}  // namespace

Eigen::MatrixXd Embedding::unique_coords() const {
  Eigen::Index n_unique = 0;
  for (uint8_t f : unique_flags) n_unique += (f != 0);
  MatrixXd out(coords.rows(), n_unique);
  Eigen::Index c = 0;
  for (Eigen::Index k = 0; k < coords.cols(); ++k)
    if (k < static_cast<Eigen::Index>(unique_flags.size()) && unique_flags[k])
      out.col(c++) = coords.col(k);
  return out;
}

MatrixXd kernel_matrix(const MatrixXd& dist, double epsilon) {
  if (epsilon <= 0.0) throw Error("kernel_matrix: epsilon must be positive");
  validate_distances(dist);
  double inv_e2 = 1.0 / (epsilon * epsilon);
  MatrixXd w = (-dist.array().square() * inv_e2).exp().matrix();
  // enforce exact symmetry and unit diagonal against roundoff
  w = 0.5 * (w + w.transpose()).eval();
  w.diagonal().setOnes();
  return w;
}

double choose_epsilon(const MatrixXd& dist) {
  validate_distances(dist);
  Eigen::Index n = dist.rows();
  size_t k = std::max<size_t>(7, static_cast<size_t>(std::ceil(0.01 * static_cast<double>(n))));
  std::vector<double> pool;
  pool.reserve(static_cast<size_t>(n));
  std::vector<double> row;
  for (Eigen::Index i = 0; i < n; ++i) {
    row.clear();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      if (dist(i, j) > 0.0) row.push_back(dist(i, j));
    }
    if (row.empty()) continue;  // duplicate-only neighbors carry no scale
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
    size_t idx = std::min(k, row.size()) - 1;
    pool.push_back(row[idx]);
  }
  if (pool.empty()) throw Error("choose_epsilon: all distances are zero");
  return percentile(pool, 0.5);
}

Embedding embed(const MatrixXd& dist, const DiffusionConfig& cfg) {
  validate_distances(dist);
  Eigen::Index n = dist.rows();
  if (cfg.n_eigs < 1) throw Error("embed: n_eigs must be >= 1");
  if (cfg.n_eigs + 1 > n)
    throw Error("embed: n_eigs must be smaller than the sample count");

  double eps = cfg.epsilon > 0.0 ? cfg.epsilon : choose_epsilon(dist);
  MatrixXd w = kernel_matrix(dist, eps);

  if (cfg.knn > 0) {
    // keep w_ij when j is among i's knn nearest or vice versa
    MatrixXd keep = MatrixXd::Zero(n, n);
    std::vector<Eigen::Index> order(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](Eigen::Index a, Eigen::Index b) { return dist(i, a) < dist(i, b); });
      int kept = 0;
      for (Eigen::Index j : order) {
        if (j == i) continue;
        keep(i, j) = 1.0;
        if (++kept >= cfg.knn) break;
      }
    }
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (i != j && keep(i, j) == 0.0 && keep(j, i) == 0.0) w(i, j) = 0.0;
  }

  if (cfg.density_alpha > 0.0) {
    VectorXd q = w.rowwise().sum();
    VectorXd qa = q.array().pow(-cfg.density_alpha).matrix();
    w = (qa.asDiagonal() * w * qa.asDiagonal()).eval();
  }

  VectorXd deg = w.rowwise().sum();
  if ((deg.array() <= 0.0).any()) throw NumericalError("embed: isolated point in the kernel");
  VectorXd dinv_sqrt = deg.array().rsqrt().matrix();
  MatrixXd S = (dinv_sqrt.asDiagonal() * w * dinv_sqrt.asDiagonal()).eval();
  S = 0.5 * (S + S.transpose()).eval();

  int want = cfg.n_eigs + 1;
  VectorXd vals;
  MatrixXd vecs;
  if (n <= cfg.dense_limit) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(S);
    if (es.info() != Eigen::Success) {
      std::ostringstream msg;
      msg << "embed: eigensolver failed to converge (n=" << n << ", degree range ["
          << deg.minCoeff() << ", " << deg.maxCoeff() << "], epsilon=" << eps << ")";
      throw NumericalError(msg.str());
    }
    vals.resize(want);
    vecs.resize(n, want);
    for (int i = 0; i < want; ++i) {
      Eigen::Index src = n - 1 - i;
      vals(i) = es.eigenvalues()(src);
      vecs.col(i) = es.eigenvectors().col(src);
    }
  } else {
    lanczos_top_eigs(S, want, vals, vecs);
  }

  // Degenerate input guard: a flat kernel makes every nontrivial eigenvalue
  // collapse and coordinates meaningless.
  if (!std::isfinite(vals(0))) throw NumericalError("embed: non-finite spectrum");

  Embedding e;
  e.epsilon_used = eps;
  e.eigenvalues.resize(static_cast<size_t>(cfg.n_eigs));
  e.coords.resize(n, cfg.n_eigs);
  for (int k = 0; k < cfg.n_eigs; ++k) {
    VectorXd phi;
    if (cfg.normalization == KernelNormalization::RowStochastic)
      phi = (dinv_sqrt.array() * vecs.col(k + 1).array()).matrix();
    else
      phi = vecs.col(k + 1);
    phi.normalize();
    fix_sign(phi);
    e.eigenvalues[static_cast<size_t>(k)] = vals(k + 1);
    e.coords.col(k) = vals(k + 1) * phi;
  }
  e.unique_flags = select_unique(e.coords, cfg.unique_threshold);
  return e;
}

std::vector<uint8_t> select_unique(const MatrixXd& coords, double threshold) {
  Eigen::Index n = coords.rows();
  Eigen::Index m = coords.cols();
  if (m < 1) throw Error("select_unique: no coordinates");
  std::vector<uint8_t> flags(static_cast<size_t>(m), 0);
  flags[0] = 1;  // first coordinate always unique
  for (Eigen::Index k = 1; k < m; ++k) {
    MatrixXd predictors = coords.leftCols(k);
    VectorXd target = coords.col(k);
    double denom = target.squaredNorm();
    if (denom <= 0.0) {
      flags[static_cast<size_t>(k)] = 0;
      continue;
    }
    double sigma = predictor_bandwidth(predictors);
    if (sigma <= 0.0) {
      // constant predictors cannot explain a varying coordinate
      flags[static_cast<size_t>(k)] = 1;
      continue;
    }
    if (n < k + 2) {
      flags[static_cast<size_t>(k)] = 1;
      continue;
    }
    VectorXd fitted = kernel_loo_fit(predictors, target, sigma);
    double r = std::sqrt((target - fitted).squaredNorm() / denom);
    flags[static_cast<size_t>(k)] = (r >= threshold) ? 1 : 0;
  }
  return flags;
}

MatrixXd pairwise_distances(const MatrixXd& points) {
  Eigen::Index n = points.rows();
  MatrixXd d(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double v = (points.row(i) - points.row(j)).norm();
      d(i, j) = d(j, i) = v;
    }
  }
  return d;
}

void save_embedding(const Embedding& e, const std::string& csv_path,
                    const std::string& json_path) {
  std::ofstream cs(csv_path);
  if (!cs) throw Error("save_embedding: cannot open " + csv_path);
  cs.precision(17);
  for (Eigen::Index i = 0; i < e.coords.rows(); ++i) {
    for (Eigen::Index k = 0; k < e.coords.cols(); ++k) {
      if (k) cs << ",";
      cs << e.coords(i, k);
    }
    cs << "\n";
  }
  json j;
  j["eigenvalues"] = e.eigenvalues;
  j["unique_flags"] = e.unique_flags;
  j["epsilon_used"] = e.epsilon_used;
  std::ofstream js(json_path);
  if (!js) throw Error("save_embedding: cannot open " + json_path);
  js << j.dump(2) << "\n";
}

Embedding load_embedding(const std::string& csv_path, const std::string& json_path) {
  std::ifstream cs(csv_path);
  if (!cs) throw Error("load_embedding: cannot open " + csv_path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(cs, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error("load_embedding: empty CSV");
  Embedding e;
  e.coords.resize(static_cast<Eigen::Index>(rows.size()),
                  static_cast<Eigen::Index>(rows[0].size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw Error("load_embedding: ragged CSV");
    for (size_t k = 0; k < rows[i].size(); ++k)
      e.coords(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
  }
  std::ifstream js(json_path);
  if (!js) throw Error("load_embedding: cannot open " + json_path);
  json j;
  js >> j;
  e.eigenvalues = j.value("eigenvalues", std::vector<double>{});
  e.unique_flags = j.value("unique_flags", std::vector<uint8_t>{});
  e.epsilon_used = j.value("epsilon_used", 0.0);
  return e;
}

}  // namespace epde
