#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "epde/common.hpp"

namespace epde {

enum class KernelNormalization { RowStochastic, Symmetric };

struct DiffusionConfig {
  double epsilon = 0.0;  // <= 0 selects choose_epsilon(dist)
  int n_eigs = 10;       // nontrivial coordinates to keep
  KernelNormalization normalization = KernelNormalization::RowStochastic;
  int knn = 0;               // > 0 sparsifies the kernel to k nearest neighbors
  double density_alpha = 0;  // 1 enables the density-invariant pre-normalization
  double unique_threshold = 0.5;
  int dense_limit = 2000;  // above this, a Lanczos solver replaces the dense one
};

// Per-axis spectral coordinates. coords column k holds lambda_k * phi_k with
// eigenvaluesdescending and the trivial top mode removed. Eigenvector sign is
// fixed so the first non-negligible entry is positive.
struct Embedding {
  Eigen::MatrixXd coords;        // N x n_eigs
  std::vector<double> eigenvalues;
  std::vector<uint8_t> unique_flags;
  double epsilon_used = 0.0;

  Eigen::Index size() const { return coords.rows(); }
  Eigen::Index n_coords() const { return coords.cols(); }
  // Columns flagged unique, in spectral order.
  Eigen::MatrixXd unique_coords() const;
};

// w_ij = exp(-d_ij^2 / eps^2). Validates symmetry, zero diagonal and
// nonnegativity.
Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& dist, double epsilon);

// Median over points of the k-th smallest *distinct* positive neighbor
// distance, k = max(7, ceil(0.01*N)) (capped at the available count).
// Throws on all-zero distances.
double choose_epsilon(const Eigen::MatrixXd& dist);

// Full pipeline: kernel, normalization via the symmetric conjugate,
// eigendecomposition, constant-mode removal, eigenvalue weighting, sign fix,
// and harmonic filtering via select_unique.
Embedding embed(const Eigen::MatrixXd& dist, const DiffusionConfig& cfg);

// Local-linear-regression harmonic filter: coordinate k is flagged unique iff
// its normalized leave-one-out residual against coordinates 0..k-1 is at or
// above the threshold. The first coordinate is always unique.
std::vector<uint8_t> select_unique(const Eigen::MatrixXd& coords, double threshold = 0.5);

// Pairwise Euclidean distances between rows.
Eigen::MatrixXd pairwise_distances(const Eigen::MatrixXd& points);

// Embeddings serialize as CSV (rows = channels) plus a JSON file with
// eigenvalues, flags, and the kernel scale.
void save_embedding(const Embedding& e, const std::string& csv_path,
                    const std::string& json_path);
Embedding load_embedding(const std::string& csv_path, const std::string& json_path);

}  // namespace epde
