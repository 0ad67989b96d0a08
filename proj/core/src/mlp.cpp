#include "epde/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

namespace epde {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

size_t MlpModel::param_count() const {
  size_t n = 0;
  for (size_t l = 0; l + 1 < layer_dims.size(); ++l)
    n += static_cast<size_t>(layer_dims[l]) * static_cast<size_t>(layer_dims[l + 1]) +
         static_cast<size_t>(layer_dims[l + 1]);
  return n;
}

void MlpModel::validate() const {
  if (layer_dims.size() < 2) throw Error("MlpModel: need at least input and output dims");
  if (weights.size() != layer_dims.size() - 1 || biases.size() != weights.size())
    throw Error("MlpModel: layer count mismatch");
  for (size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].rows() != layer_dims[l + 1] || weights[l].cols() != layer_dims[l])
      throw Error("MlpModel: weight shape mismatch at layer " + std::to_string(l));
    if (biases[l].size() != layer_dims[l + 1])
      throw Error("MlpModel: bias shape mismatch at layer " + std::to_string(l));
    if (!weights[l].allFinite() || !biases[l].allFinite())
      throw Error("MlpModel: non-finite parameters");
  }
  if (feature_mean.size() != feature_std.size())
    throw Error("MlpModel: normalization stats mismatch");
  if (feature_mean.size() != 0 && feature_mean.size() != layer_dims.front())
    throw Error("MlpModel: normalization stats do not match the input dim");
}

MlpModel make_mlp(const std::vector<int>& layer_dims, Activation act, uint64_t seed) {
  if (layer_dims.size() < 2) throw Error("make_mlp: need at least input and output dims");
  MlpModel m;
  m.layer_dims = layer_dims;
  m.activation = act;
  m.seed = seed;
  Rng rng(seed);
  for (size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    double bound = std::sqrt(1.0 / static_cast<double>(layer_dims[l]));
    MatrixXd w(layer_dims[l + 1], layer_dims[l]);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c)
        w(r, c) = bound * (2.0 * rng.next_unit() - 1.0);
    VectorXd b(layer_dims[l + 1]);
    for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = bound * (2.0 * rng.next_unit() - 1.0);
    m.weights.push_back(std::move(w));
    m.biases.push_back(std::move(b));
  }
  return m;
}

namespace {

MatrixXd apply_norm(const MlpModel& m, const MatrixXd& X) {
  if (m.feature_mean.size() == 0) return X;
  MatrixXd out = X;
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    double sd = m.feature_std(c);
    out.col(c) = (out.col(c).array() - m.feature_mean(c)) / (sd > 0.0 ? sd : 1.0);
  }
  return out;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void activate(Activation act, MatrixXd& z) {
  if (act == Activation::Swish)
    z = z.unaryExpr([](double v) { return v * sigmoid(v); });
  else
    z = z.array().tanh().matrix();
}

MatrixXd activate_grad(Activation act, const MatrixXd& z) {
  if (act == Activation::Swish)
    return z.unaryExpr([](double v) {
      double s = sigmoid(v);
      return s * (1.0 + v * (1.0 - s));
    });
  return (1.0 - z.array().tanh().square()).matrix();
}

}  // namespace

VectorXd mlp_forward_batch(const MlpModel& m, const MatrixXd& X) {
  m.validate();
  if (X.cols() != m.layer_dims.front()) throw Error("mlp_forward: input dimension mismatch");
  // columns are samples internally
  MatrixXd a = apply_norm(m, X).transpose();
  for (size_t l = 0; l < m.weights.size(); ++l) {
    MatrixXd z = (m.weights[l] * a).colwise() + m.biases[l];
    if (l + 1 < m.weights.size()) activate(m.activation, z);
    a = std::move(z);
  }
  return a.row(0).transpose();
}

double mlp_forward(const MlpModel& m, const VectorXd& x) {
  MatrixXd X = x.transpose();
  return mlp_forward_batch(m, X)(0);
}

MlpGradients mlp_loss_grad(const MlpModel& m, const MatrixXd& X, const VectorXd& y) {
  m.validate();
  if (X.rows() != y.size()) throw Error("mlp_loss_grad: sample count mismatch");
  Eigen::Index n = X.rows();
  size_t L = m.weights.size();
  std::vector<MatrixXd> zs(L), as(L + 1);
  as[0] = apply_norm(m, X).transpose();
  for (size_t l = 0; l < L; ++l) {
    zs[l] = (m.weights[l] * as[l]).colwise() + m.biases[l];
    as[l + 1] = zs[l];
    if (l + 1 < L) activate(m.activation, as[l + 1]);
  }
  Eigen::RowVectorXd out = as[L].row(0);
  Eigen::RowVectorXd resid = out - y.transpose();
  MlpGradients g;
  g.loss = resid.squaredNorm() / static_cast<double>(n);
  g.dW.resize(L);
  g.db.resize(L);
  MatrixXd delta = (2.0 / static_cast<double>(n)) * resid;  // 1 x n
  for (size_t l = L; l-- > 0;) {
    g.dW[l] = delta * as[l].transpose();
    g.db[l] = delta.rowwise().sum();
    if (l > 0) {
      MatrixXd da = m.weights[l].transpose() * delta;
      delta = da.cwiseProduct(activate_grad(m.activation, zs[l - 1]));
    }
  }
  return g;
}

double gradient_check(const MlpModel& m, const MatrixXd& X, const VectorXd& y, int n_probes,
                      uint64_t seed, double h) {
  MlpGradients g = mlp_loss_grad(m, X, y);
  // flatten parameter addressing: (layer, is_bias, row, col)
  struct Slot {
    size_t layer;
    bool bias;
    Eigen::Index r, c;
  };
  std::vector<Slot> slots;
  for (size_t l = 0; l < m.weights.size(); ++l) {
    for (Eigen::Index r = 0; r < m.weights[l].rows(); ++r)
      for (Eigen::Index c = 0; c < m.weights[l].cols(); ++c) slots.push_back({l, false, r, c});
    for (Eigen::Index r = 0; r < m.biases[l].size(); ++r) slots.push_back({l, true, r, 0});
  }
  Rng rng(seed);
  double worst = 0.0;
  MlpModel probe = m;
  auto loss_at = [&]() {
    VectorXd out = mlp_forward_batch(probe, X);
    return (out - y).squaredNorm() / static_cast<double>(X.rows());
  };
  for (int p = 0; p < n_probes; ++p) {
    const Slot& s = slots[static_cast<size_t>(rng.next_below(slots.size()))];
    double* v = s.bias ? &probe.biases[s.layer](s.r) : &probe.weights[s.layer](s.r, s.c);
    double orig = *v;
    *v = orig + h;
    double lp = loss_at();
    *v = orig - h;
    double lm = loss_at();
    *v = orig;
    double numeric = (lp - lm) / (2.0 * h);
    double analytic = s.bias ? g.db[s.layer](s.r) : g.dW[s.layer](s.r, s.c);
    double rel = std::fabs(analytic - numeric) /
                 std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
    worst = std::max(worst, rel);
  }
  return worst;
}

TrainResult train_mlp(const MatrixXd& X, const VectorXd& y, const std::vector<int>& layer_dims,
                      Activation act, const TrainConfig& cfg, const MatrixXd* X_val,
                      const VectorXd* y_val) {
  if (X.rows() != y.size()) throw Error("train_mlp: sample count mismatch");
  if (X.rows() < 1) throw Error("train_mlp: no samples");
  if (layer_dims.front() != X.cols()) throw Error("train_mlp: input dim mismatch");

  TrainResult res;
  res.model = make_mlp(layer_dims, act, cfg.seed);
  MlpModel& m = res.model;
  if (cfg.standardize) {
    m.feature_mean = X.colwise().mean();
    VectorXd var = ((X.rowwise() - m.feature_mean.transpose()).array().square().colwise().sum() /
                    static_cast<double>(X.rows()))
                       .matrix();
    m.feature_std = var.array().sqrt();
  }

  // Adam state
  std::vector<MatrixXd> mW, vW;
  std::vector<VectorXd> mB, vB;
  for (size_t l = 0; l < m.weights.size(); ++l) {
    mW.push_back(MatrixXd::Zero(m.weights[l].rows(), m.weights[l].cols()));
    vW.push_back(MatrixXd::Zero(m.weights[l].rows(), m.weights[l].cols()));
    mB.push_back(VectorXd::Zero(m.biases[l].size()));
    vB.push_back(VectorXd::Zero(m.biases[l].size()));
  }

  Rng shuffle_rng(Rng(cfg.seed).derive("batch-order"));
  std::vector<Eigen::Index> idx(static_cast<size_t>(X.rows()));
  std::iota(idx.begin(), idx.end(), 0);

  double lr = cfg.lr0;
  double best_loss = std::numeric_limits<double>::infinity();
  int stall = 0;
  long t = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(idx);
    double epoch_loss = 0.0;
    long n_batches = 0;
    for (size_t start = 0; start < idx.size(); start += static_cast<size_t>(cfg.batch)) {
      size_t len = std::min<size_t>(static_cast<size_t>(cfg.batch), idx.size() - start);
      MatrixXd xb(static_cast<Eigen::Index>(len), X.cols());
      VectorXd yb(static_cast<Eigen::Index>(len));
      for (size_t r = 0; r < len; ++r) {
        xb.row(static_cast<Eigen::Index>(r)) = X.row(idx[start + r]);
        yb(static_cast<Eigen::Index>(r)) = y(idx[start + r]);
      }
      MlpGradients g = mlp_loss_grad(m, xb, yb);
      if (!std::isfinite(g.loss))
        throw NumericalError("train_mlp: NaN loss at epoch " + std::to_string(epoch));
      epoch_loss += g.loss;
      ++n_batches;
      ++t;
      double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t));
      double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t));
      for (size_t l = 0; l < m.weights.size(); ++l) {
        mW[l] = cfg.adam_beta1 * mW[l] + (1.0 - cfg.adam_beta1) * g.dW[l];
        vW[l] = cfg.adam_beta2 * vW[l] + (1.0 - cfg.adam_beta2) * g.dW[l].cwiseAbs2();
        m.weights[l] -=
            (lr / bc1) * mW[l].cwiseQuotient(((vW[l] / bc2).cwiseSqrt().array() + cfg.adam_eps)
                                                 .matrix());
        mB[l] = cfg.adam_beta1 * mB[l] + (1.0 - cfg.adam_beta1) * g.db[l];
        vB[l] = cfg.adam_beta2 * vB[l] + (1.0 - cfg.adam_beta2) * g.db[l].cwiseAbs2();
        m.biases[l] -=
            (lr / bc1) * mB[l].cwiseQuotient(((vB[l] / bc2).cwiseSqrt().array() + cfg.adam_eps)
                                                 .matrix());
      }
    }
    epoch_loss /= static_cast<double>(std::max<long>(1, n_batches));
    res.loss_history.push_back(epoch_loss);
    if (X_val && y_val && X_val->rows() > 0) {
      VectorXd pv = mlp_forward_batch(m, *X_val);
      res.val_history.push_back((pv - *y_val).squaredNorm() /
                                static_cast<double>(X_val->rows()));
    }
    // plateau schedule on the training loss
    if (epoch_loss < best_loss - 1e-15) {
      best_loss = epoch_loss;
      stall = 0;
    } else if (++stall >= cfg.plateau_patience) {
      lr *= 0.5;
      stall = 0;
    }
  }
  return res;
}

namespace {

template <typename T>
void write_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!is) throw Error("model file truncated");
  T v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
  return v;
}

void write_f64(std::ostream& os, double d) {
  uint64_t u;
  std::memcpy(&u, &d, sizeof(u));
  write_le<uint64_t>(os, u);
}

double read_f64(std::istream& is) {
  uint64_t u = read_le<uint64_t>(is);
  double d;
  std::memcpy(&d, &u, sizeof(d));
  return d;
}

}  // namespace

void save_model(const MlpModel& m, const std::string& path) {
  m.validate();
  json header;
  header["layer_dims"] = m.layer_dims;
  header["activation"] = m.activation == Activation::Swish ? "swish" : "tanh";
  header["seed"] = m.seed;
  header["feature_mean"] = std::vector<double>(m.feature_mean.data(),
                                               m.feature_mean.data() + m.feature_mean.size());
  header["feature_std"] =
      std::vector<double>(m.feature_std.data(), m.feature_std.data() + m.feature_std.size());
  std::string hs = header.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("save_model: cannot open " + path);
  os.write("EPNN", 4);
  write_le<uint16_t>(os, 1);
  write_le<uint32_t>(os, static_cast<uint32_t>(hs.size()));
  os.write(hs.data(), static_cast<long>(hs.size()));
  for (size_t l = 0; l < m.weights.size(); ++l) {
    for (Eigen::Index r = 0; r < m.weights[l].rows(); ++r)
      for (Eigen::Index c = 0; c < m.weights[l].cols(); ++c) write_f64(os, m.weights[l](r, c));
    for (Eigen::Index r = 0; r < m.biases[l].size(); ++r) write_f64(os, m.biases[l](r));
  }
  if (!os) throw Error("save_model: write failed");
}

MlpModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("load_model: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "EPNN", 4) != 0) throw Error("load_model: bad magic");
  uint16_t version = read_le<uint16_t>(is);
  if (version != 1) throw Error("load_model: unsupported version");
  uint32_t hlen = read_le<uint32_t>(is);
  std::string hs(hlen, '\0');
  is.read(hs.data(), static_cast<long>(hlen));
  if (!is) throw Error("model file truncated");
  json header = json::parse(hs);
  MlpModel m;
  m.layer_dims = header.at("layer_dims").get<std::vector<int>>();
  m.activation = header.at("activation") == "swish" ? Activation::Swish : Activation::Tanh;
  m.seed = header.value("seed", uint64_t{0});
  auto fm = header.value("feature_mean", std::vector<double>{});
  auto fs = header.value("feature_std", std::vector<double>{});
  m.feature_mean = Eigen::Map<VectorXd>(fm.data(), static_cast<Eigen::Index>(fm.size()));
  m.feature_std = Eigen::Map<VectorXd>(fs.data(), static_cast<Eigen::Index>(fs.size()));
  for (size_t l = 0; l + 1 < m.layer_dims.size(); ++l) {
    MatrixXd w(m.layer_dims[l + 1], m.layer_dims[l]);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = read_f64(is);
    VectorXd b(m.layer_dims[l + 1]);
    for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = read_f64(is);
    m.weights.push_back(std::move(w));
    m.biases.push_back(std::move(b));
  }
  m.validate();
  return m;
}

void save_history_csv(const TrainResult& r, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("save_history_csv: cannot open " + path);
  os.precision(17);
  os << "epoch,train_mse" << (r.val_history.empty() ? "" : ",val_mse") << "\n";
  for (size_t e = 0; e < r.loss_history.size(); ++e) {
    os << e << "," << r.loss_history[e];
    if (!r.val_history.empty()) os << "," << r.val_history[e];
    os << "\n";
  }
}

}  // namespace epde
