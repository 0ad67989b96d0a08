#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "epde/emergent_coords.hpp"
#include "epde/mlp.hpp"

namespace epde {

enum class NodeTag { Interior, BoundaryCorridor, SourceCorridor };

// Per-node inputs for the learned right-hand side: the field value and its
// first four emergent-space derivatives, with the emergent-time derivative as
// the regression target. Only stencil-interior nodes carry features.
struct FeatureSet {
  Eigen::MatrixXd X;  // n_samples x 5: c, dc, d2c, d3c, d4c
  Eigen::VectorXd y;  // dc/dphi
  std::vector<NodeTag> tag;
  std::vector<std::pair<int, int>> node;  // (psi index, phi index)
  int n_psi = 0, n_phi = 0;
  double dpsi = 0.0, dphi = 0.0;
};

// Central stencils: 2nd-order for orders 1-2, 5-point for orders 3-4; the
// time derivative is 2nd-order central (one-sided at the ends).
FeatureSet fd_features(const EmergentChart& chart);

// Right-hand-side network: 5 -> 126 x 6 -> 1, swish. Trains on interior
// nodes outside the source corridor; the last validation_snapshots time
// columns are held out as overfitting telemetry.
TrainResult train_rhs(const FeatureSet& f, const TrainConfig& cfg);

// Projector onto the leading left-singular subspace holding `energy` of the
// spectral energy of the training snapshot matrix (columns = snapshots).
struct SvdProjector {
  Eigen::MatrixXd basis;  // n_psi x rank
  int rank() const { return static_cast<int>(basis.cols()); }
  Eigen::VectorXd project(const Eigen::VectorXd& snapshot) const {
    return basis * (basis.transpose() * snapshot);
  }
};

SvdProjector make_svd_projector(const Eigen::MatrixXd& snapshots, double energy = 0.999);

// Source network g(psi, phi), hard-clamped to zero outside the corridor.
struct SourceModel {
  MlpModel net;  // 2 -> 64 x 3 -> 1, swish
  double psi_lo = 0.0, psi_hi = -1.0;

  double eval(double psi, double phi) const;
};

struct IntegrateOptions {
  int substeps = 4;      // RK4 steps per chart time interval
  bool rk4 = true;       // false selects forward Euler
  double svd_energy = 0.999;
  double blowup_factor = 10.0;
};

// Explicit integration of the learned PDE in emergent time. Boundary-corridor
// nodes are overwritten from chart data after every accepted step;
// source-corridor nodes are overwritten too unless a source model supplies
// g. Every accepted step is projected by the SVD regularizer.
Eigen::MatrixXd integrate(const MlpModel& rhs, const EmergentChart& chart,
                          const Eigen::VectorXd& initial, const SourceModel* source = nullptr,
                          const IntegrateOptions& opt = {});

// Fits g on the corridor residual (true dc/dphi minus the fixed rhs
// prediction) inside the source corridor.
struct SourceTrainResult {
  SourceModel model;
  std::vector<double> loss_history;
};
SourceTrainResult train_source(const MlpModel& rhs, const EmergentChart& chart,
                               const TrainConfig& cfg);

// Solution surrogate: intensity regressed directly on
// (param coord 1, param coord 2, space coord, time coord); 4 -> 12 x 8 -> 1,
// tanh. Requires at least 1000 voxels.
TrainResult train_surrogate(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets,
                            const TrainConfig& cfg);

std::vector<int> rhs_architecture();        // {5, 126 x 6, 1}
std::vector<int> source_architecture();     // {2, 64 x 3, 1}
std::vector<int> surrogate_architecture();  // {4, 12 x 8, 1}

}  // namespace epde
