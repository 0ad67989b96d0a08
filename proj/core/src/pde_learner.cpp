#include "epde/pde_learner.hpp"

#include <algorithm>
#include <cmath>

namespace epde {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::vector<int> rhs_architecture() { return {5, 126, 126, 126, 126, 126, 126, 1}; }
std::vector<int> source_architecture() { return {2, 64, 64, 64, 1}; }
std::vector<int> surrogate_architecture() { return {4, 12, 12, 12, 12, 12, 12, 12, 12, 1}; }

FeatureSet fd_features(const EmergentChart& chart) {
  int n_psi = static_cast<int>(chart.psi_grid.size());
  int n_phi = static_cast<int>(chart.phi_grid.size());
  if (n_psi < 7) throw Error("fd_features: need at least 7 space grid points");
  if (n_phi < 3) throw Error("fd_features: need at least 3 time grid points");
  FeatureSet f;
  f.n_psi = n_psi;
  f.n_phi = n_phi;
  f.dpsi = chart.psi_grid[1] - chart.psi_grid[0];
  f.dphi = chart.phi_grid[1] - chart.phi_grid[0];
  double h = f.dpsi, k = f.dphi;
  double h2 = h * h, h3 = h2 * h, h4 = h2 * h2;

  int n_interior = n_psi - 4;
  f.X.resize(static_cast<Eigen::Index>(n_interior) * n_phi, 5);
  f.y.resize(f.X.rows());
  f.tag.reserve(static_cast<size_t>(f.X.rows()));
  f.node.reserve(static_cast<size_t>(f.X.rows()));

  const MatrixXd& c = chart.field;
  Eigen::Index row = 0;
  for (int j = 0; j < n_phi; ++j) {
    for (int i = 2; i <= n_psi - 3; ++i) {
      f.X(row, 0) = c(i, j);
      f.X(row, 1) = (c(i + 1, j) - c(i - 1, j)) / (2.0 * h);
      f.X(row, 2) = (c(i + 1, j) - 2.0 * c(i, j) + c(i - 1, j)) / h2;
      f.X(row, 3) = (-c(i - 2, j) + 2.0 * c(i - 1, j) - 2.0 * c(i + 1, j) + c(i + 2, j)) /
                    (2.0 * h3);
      f.X(row, 4) =
          (c(i - 2, j) - 4.0 * c(i - 1, j) + 6.0 * c(i, j) - 4.0 * c(i + 1, j) + c(i + 2, j)) / h4;
      if (j == 0)
        f.y(row) = (-3.0 * c(i, 0) + 4.0 * c(i, 1) - c(i, 2)) / (2.0 * k);
      else if (j == n_phi - 1)
        f.y(row) = (3.0 * c(i, j) - 4.0 * c(i, j - 1) + c(i, j - 2)) / (2.0 * k);
      else
        f.y(row) = (c(i, j + 1) - c(i, j - 1)) / (2.0 * k);
      NodeTag tag = NodeTag::Interior;
      if (chart.in_boundary(i))
        tag = NodeTag::BoundaryCorridor;
      else if (chart.in_source(i))
        tag = NodeTag::SourceCorridor;
      f.tag.push_back(tag);
      f.node.push_back({i, j});
      ++row;
    }
  }
  return f;
}

TrainResult train_rhs(const FeatureSet& f, const TrainConfig& cfg) {
  // training set: interior nodes outside the source corridor, thinned in time
  std::vector<Eigen::Index> train_rows, val_rows;
  int val_start = f.n_phi - cfg.validation_snapshots;
  for (Eigen::Index r = 0; r < f.X.rows(); ++r) {
    if (f.tag[static_cast<size_t>(r)] != NodeTag::Interior) continue;
    int j = f.node[static_cast<size_t>(r)].second;
    if (j >= val_start)
      val_rows.push_back(r);
    else if (cfg.time_stride <= 1 || j % cfg.time_stride == 0)
      train_rows.push_back(r);
  }
  if (train_rows.size() < static_cast<size_t>(cfg.batch))
    throw Error("train_rhs: fewer training samples than one batch");
  auto gather = [&](const std::vector<Eigen::Index>& rows, MatrixXd& X, VectorXd& y) {
    X.resize(static_cast<Eigen::Index>(rows.size()), f.X.cols());
    y.resize(static_cast<Eigen::Index>(rows.size()));
    for (size_t r = 0; r < rows.size(); ++r) {
      X.row(static_cast<Eigen::Index>(r)) = f.X.row(rows[r]);
      y(static_cast<Eigen::Index>(r)) = f.y(rows[r]);
    }
  };
  MatrixXd Xt, Xv;
  VectorXd yt, yv;
  gather(train_rows, Xt, yt);
  gather(val_rows, Xv, yv);
  return train_mlp(Xt, yt, rhs_architecture(), Activation::Swish, cfg,
                   val_rows.empty() ? nullptr : &Xv, val_rows.empty() ? nullptr : &yv);
}

SvdProjector make_svd_projector(const MatrixXd& snapshots, double energy) {
  if (snapshots.cols() < 2) throw Error("make_svd_projector: need at least 2 snapshots");
  Eigen::BDCSVD<MatrixXd> svd(snapshots, Eigen::ComputeThinU);
  const VectorXd& s = svd.singularValues();
  double total = s.squaredNorm();
  if (total <= 0.0) throw Error("make_svd_projector: rank-0 snapshot data");
  double acc = 0.0;
  int rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    acc += s(i) * s(i);
    ++rank;
    if (acc >= energy * total) break;
  }
  SvdProjector p;
  p.basis = svd.matrixU().leftCols(rank);
  return p;
}

double SourceModel::eval(double psi, double phi) const {
  if (psi < psi_lo || psi > psi_hi) return 0.0;
  VectorXd x(2);
  x << psi, phi;
  return mlp_forward(net, x);
}

namespace {

// rhs of the learned PDE on the full grid state: f applied to stencil-interior
// nodes, zero elsewhere; the corridor overwrites handle the rest.
VectorXd learned_rhs(const MlpModel& rhs, const EmergentChart& chart, const VectorXd& state,
                     double phi, const SourceModel* source) {
  int n = static_cast<int>(state.size());
  double h = chart.psi_grid[1] - chart.psi_grid[0];
  double h2 = h * h, h3 = h2 * h, h4 = h2 * h2;
  int n_inner = n - 4;
  MatrixXd X(n_inner, 5);
  for (int i = 2; i <= n - 3; ++i) {
    Eigen::Index r = i - 2;
    X(r, 0) = state(i);
    X(r, 1) = (state(i + 1) - state(i - 1)) / (2.0 * h);
    X(r, 2) = (state(i + 1) - 2.0 * state(i) + state(i - 1)) / h2;
    X(r, 3) = (-state(i - 2) + 2.0 * state(i - 1) - 2.0 * state(i + 1) + state(i + 2)) /
              (2.0 * h3);
    X(r, 4) = (state(i - 2) - 4.0 * state(i - 1) + 6.0 * state(i) - 4.0 * state(i + 1) +
               state(i + 2)) /
              h4;
  }
  VectorXd out = VectorXd::Zero(n);
  VectorXd pred = mlp_forward_batch(rhs, X);
  for (int i = 2; i <= n - 3; ++i) out(i) = pred(i - 2);
  if (source) {
    for (int i = chart.source_lo; i <= chart.source_hi && i >= 0; ++i)
      if (i < n) out(i) += source->eval(chart.psi_grid[static_cast<size_t>(i)], phi);
  }
  return out;
}

}  // namespace

MatrixXd integrate(const MlpModel& rhs, const EmergentChart& chart, const VectorXd& initial,
                   const SourceModel* source, const IntegrateOptions& opt) {
  int n_psi = static_cast<int>(chart.psi_grid.size());
  int n_phi = static_cast<int>(chart.phi_grid.size());
  if (initial.size() != n_psi) throw Error("integrate: initial snapshot size mismatch");
  if (opt.substeps < 1) throw Error("integrate: substeps must be >= 1");

  SvdProjector proj = make_svd_projector(chart.field, opt.svd_energy);
  double data_range = std::max(std::fabs(chart.field.maxCoeff()),
                               std::fabs(chart.field.minCoeff()));
  double limit = opt.blowup_factor * std::max(data_range, 1e-12);

  auto data_at = [&](double w, int j, int i) {
    // linear interpolation between data columns j and j+1
    return (1.0 - w) * chart.field(i, j) + w * chart.field(i, std::min(j + 1, n_phi - 1));
  };
  auto pin_corridors = [&](VectorXd& state, double w, int j) {
    for (int i = 0; i < chart.boundary_width; ++i) {
      state(i) = data_at(w, j, i);
      state(n_psi - 1 - i) = data_at(w, j, n_psi - 1 - i);
    }
    if (!source) {
      for (int i = std::max(0, chart.source_lo); i <= chart.source_hi && i < n_psi; ++i)
        state(i) = data_at(w, j, i);
    }
  };

  MatrixXd out(n_psi, n_phi);
  VectorXd state = initial;
  out.col(0) = state;
  double dphi = chart.phi_grid[1] - chart.phi_grid[0];
  double dt = dphi / static_cast<double>(opt.substeps);

  for (int j = 0; j + 1 < n_phi; ++j) {
    for (int sub = 0; sub < opt.substeps; ++sub) {
      double phi = chart.phi_grid[static_cast<size_t>(j)] + sub * dt;
      if (opt.rk4) {
        VectorXd k1 = learned_rhs(rhs, chart, state, phi, source);
        VectorXd k2 = learned_rhs(rhs, chart, state + 0.5 * dt * k1, phi + 0.5 * dt, source);
        VectorXd k3 = learned_rhs(rhs, chart, state + 0.5 * dt * k2, phi + 0.5 * dt, source);
        VectorXd k4 = learned_rhs(rhs, chart, state + dt * k3, phi + dt, source);
        state += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      } else {
        state += dt * learned_rhs(rhs, chart, state, phi, source);
      }
      state = proj.project(state);
      double w = static_cast<double>(sub + 1) / static_cast<double>(opt.substeps);
      pin_corridors(state, w, j);
      double amax = state.cwiseAbs().maxCoeff();
      if (!std::isfinite(amax) || amax > limit)
        throw NumericalError("integrate: blow-up at time step " + std::to_string(j) +
                             " substep " + std::to_string(sub));
    }
    out.col(j + 1) = state;
  }
  return out;
}

SourceTrainResult train_source(const MlpModel& rhs, const EmergentChart& chart,
                               const TrainConfig& cfg) {
  if (chart.source_hi < chart.source_lo)
    throw Error("train_source: the source corridor is empty");
  FeatureSet f = fd_features(chart);
  std::vector<Eigen::Index> rows;
  for (Eigen::Index r = 0; r < f.X.rows(); ++r)
    if (f.tag[static_cast<size_t>(r)] == NodeTag::SourceCorridor) rows.push_back(r);
  if (rows.empty()) throw Error("train_source: the source corridor is empty");

  MatrixXd Xf(static_cast<Eigen::Index>(rows.size()), 5);
  VectorXd yt(static_cast<Eigen::Index>(rows.size()));
  MatrixXd Xg(static_cast<Eigen::Index>(rows.size()), 2);
  for (size_t r = 0; r < rows.size(); ++r) {
    Xf.row(static_cast<Eigen::Index>(r)) = f.X.row(rows[r]);
    yt(static_cast<Eigen::Index>(r)) = f.y(rows[r]);
    auto [i, j] = f.node[static_cast<size_t>(rows[r])];
    Xg(static_cast<Eigen::Index>(r), 0) = chart.psi_grid[static_cast<size_t>(i)];
    Xg(static_cast<Eigen::Index>(r), 1) = chart.phi_grid[static_cast<size_t>(j)];
  }
  VectorXd residual = yt - mlp_forward_batch(rhs, Xf);

  TrainConfig gcfg = cfg;
  gcfg.batch = std::min<int>(cfg.batch, static_cast<int>(rows.size()));
  TrainResult tr = train_mlp(Xg, residual, source_architecture(), Activation::Swish, gcfg);
  SourceTrainResult out;
  out.model.net = std::move(tr.model);
  out.model.psi_lo = chart.psi_grid[static_cast<size_t>(std::max(0, chart.source_lo))];
  out.model.psi_hi = chart.psi_grid[static_cast<size_t>(
      std::min(static_cast<int>(chart.psi_grid.size()) - 1, chart.source_hi))];
  out.loss_history = std::move(tr.loss_history);
  return out;
}

TrainResult train_surrogate(const MatrixXd& inputs, const VectorXd& targets,
                            const TrainConfig& cfg) {
  if (inputs.rows() < 1000) throw Error("train_surrogate: need at least 1000 voxels");
  if (inputs.cols() != 4) throw Error("train_surrogate: expected 4 input coordinates");
  return train_mlp(inputs, targets, surrogate_architecture(), Activation::Tanh, cfg);
}

}  // namespace epde
