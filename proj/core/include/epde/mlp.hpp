#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "epde/common.hpp"

namespace epde {

enum class Activation { Swish, Tanh };

inline double swish(double z) { return z / (1.0 + std::exp(-z)); }

// Fully connected network with a linear output layer. Inputs are z-scored
// with the stored statistics when feature_mean is nonempty.
struct MlpModel {
  std::vector<int> layer_dims;           // input, hidden..., output
  std::vector<Eigen::MatrixXd> weights;  // weights[l] is dims[l+1] x dims[l]
  std::vector<Eigen::VectorXd> biases;
  Activation activation = Activation::Swish;
  Eigen::VectorXd feature_mean, feature_std;
  uint64_t seed = 0;

  size_t param_count() const;
  void validate() const;
};

// Scaled-uniform fan-in initialization, bound sqrt(1/fan_in), seeded.
MlpModel make_mlp(const std::vector<int>& layer_dims, Activation act, uint64_t seed);

double mlp_forward(const MlpModel& m, const Eigen::VectorXd& x);
// X: n_samples x in_dim; returns one output per sample.
Eigen::VectorXd mlp_forward_batch(const MlpModel& m, const Eigen::MatrixXd& X);

struct MlpGradients {
  std::vector<Eigen::MatrixXd> dW;
  std::vector<Eigen::VectorXd> db;
  double loss = 0.0;  // mean squared error over the batch
};

// Analytic backprop of the batch MSE.
MlpGradients mlp_loss_grad(const MlpModel& m, const Eigen::MatrixXd& X,
                           const Eigen::VectorXd& y);

// Central finite differences on randomly probed parameters vs backprop;
// returns the max relative error. The oracle for every architecture used.
double gradient_check(const MlpModel& m, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                      int n_probes, uint64_t seed, double h = 1e-5);

struct TrainConfig {
  double lr0 = 0.005;
  int plateau_patience = 75;  // epochs without training-loss improvement
  int epochs = 1500;
  int batch = 128;
  uint64_t seed = 0;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  int validation_snapshots = 10;  // last time snapshots held out by train_rhs
  bool standardize = true;
  int time_stride = 1;  // train_rhs keeps every time_stride-th snapshot
};

struct TrainResult {
  MlpModel model;
  std::vector<double> loss_history;  // epoch-mean training MSE
  std::vector<double> val_history;   // per-epoch validation MSE (empty if none)
};

// Adam on batch MSE with the plateau-halving learning rate schedule.
// Deterministic for a fixed seed: bit-identical init and batch order.
TrainResult train_mlp(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                      const std::vector<int>& layer_dims, Activation act, const TrainConfig& cfg,
                      const Eigen::MatrixXd* X_val = nullptr,
                      const Eigen::VectorXd* y_val = nullptr);

// Model file: magic "EPNN", u16 version, u32 JSON header length, header
// (dims, activation, normalization stats, seed), then the little-endian f64
// weight payload (per layer: W row-major, then b).
void save_model(const MlpModel& m, const std::string& path);
MlpModel load_model(const std::string& path);

void save_history_csv(const TrainResult& r, const std::string& path);

}  // namespace epde
