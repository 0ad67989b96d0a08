#pragma once

#include <Eigen/Dense>
#include <array>
#include <optional>
#include <string>
#include <vector>

#include "epde/diffusion_maps.hpp"
#include "epde/tensor.hpp"

namespace epde {

// One level of the bottom-up hierarchy: a partition of the channel set plus
// the join threshold that produced it. Level 0 is all singletons; the last
// level is the single root cluster.
struct ClusterLevel {
  std::vector<std::vector<int>> clusters;
  double threshold = 0.0;
};

struct ClusterTree {
  std::vector<ClusterLevel> levels;

  size_t n_channels() const { return levels.empty() ? 0 : levels.front().clusters.size(); }
  size_t total_clusters() const;
  void validate() const;
};

// Bottom-up joining: at each level every cluster gets one join attempt; the
// globally closest (average-linkage) pair goes first, a cluster may join an
// existing this-level supercluster, and a join happens only below the level's
// threshold q*growth^level (q = 25th percentile of pairwise distances). Ties
// break toward individual partners, then the smallest member index.
ClusterTree hierarchical_cluster(const Eigen::MatrixXd& dist, double threshold_growth = 2.0);

struct QuestConfig {
  double threshold_growth = 2.0;
  // Level-l cluster sums are weighted by level_weight_decay^l; the default is
  // 2^(-1/2) per level. 3-D pair coordinates use the product of both levels'
  // weights.
  double level_weight_decay = 0.70710678118654752440;
  int max_sweeps = 6;
  double convergence_tol = 1e-3;  // relative Frobenius change per axis matrix
  DiffusionConfig embed_cfg;
  int threads = 1;
};

// Multiscale cluster-sum features. The 2-D transform emits one coordinate per
// (level, cluster); the 3-D transform emits one per cluster pair across the
// two other axes' trees. Level-0 blocks reproduce the raw vector.
Eigen::VectorXd transform_2d(const Eigen::VectorXd& y, const ClusterTree& other_tree,
                             double level_weight_decay);
Eigen::VectorXd transform_3d(const Eigen::MatrixXd& y, const ClusterTree& tree_b,
                             const ClusterTree& tree_c, double level_weight_decay);

// Questionnaire distance: mean|dy| + mean|dF(y)| (both terms normalized by
// their vector lengths so magnitudes stay comparable across axis sizes).
double quest_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                      const ClusterTree& other_tree, double level_weight_decay);
double quest_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                      const ClusterTree& tree_b, const ClusterTree& tree_c,
                      double level_weight_decay);

struct AxisResult {
  std::optional<Embedding> embedding;
  std::string error;  // nonempty when the axis was degenerate or embed failed
  Eigen::MatrixXd distances;
  ClusterTree tree;
  std::vector<double> change_history;  // relative Frobenius change per sweep
};

struct Organize2dResult {
  AxisResult rows, cols;
  int sweeps = 0;
};

struct Organize3dResult {
  std::array<AxisResult, 3> axes;  // indexed by Axis
  int sweeps = 0;
};

// Alternating informed-metric organization of a matrix: uninformed column
// clustering, informed rows, then (a) rows inform columns / (b) columns inform
// rows until convergence. Embeddings come from the final informed metrics.
Organize2dResult organize_2d(const Eigen::MatrixXd& m, const QuestConfig& cfg);

// 3-D variant: uninformed parameter and space clustering initializes an
// informed time metric, then sweeps (a) parameters, (b) space, (c) time.
Organize3dResult organize_3d(const DataTensor& t, const QuestConfig& cfg);

// Debug dump of trees/distance matrices (CLI --dump-intermediate).
void dump_axis_state(const AxisResult& r, const std::string& prefix);

}  // namespace epde
