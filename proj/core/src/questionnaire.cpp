#include "epde/questionnaire.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace epde {

using Eigen::MatrixXd;
using Eigen::VectorXd;

size_t ClusterTree::total_clusters() const {
  size_t n = 0;
  for (const auto& lvl : levels) n += lvl.clusters.size();
  return n;
}

void ClusterTree::validate() const {
  if (levels.empty()) throw Error("ClusterTree: empty");
  size_t n = n_channels();
  for (size_t l = 0; l < levels.size(); ++l) {
    std::vector<uint8_t> seen(n, 0);
    for (const auto& c : levels[l].clusters) {
      if (c.empty()) throw Error("ClusterTree: empty cluster");
      for (int ch : c) {
        if (ch < 0 || static_cast<size_t>(ch) >= n || seen[static_cast<size_t>(ch)])
          throw Error("ClusterTree: level is not a partition");
        seen[static_cast<size_t>(ch)] = 1;
      }
    }
    for (uint8_t s : seen)
      if (!s) throw Error("ClusterTree: level is not a partition");
    if (l > 0 && levels[l].threshold <= levels[l - 1].threshold)
      throw Error("ClusterTree: thresholds must increase with level");
  }
  if (levels.back().clusters.size() != 1) throw Error("ClusterTree: missing root");
}

ClusterTree hierarchical_cluster(const MatrixXd& dist, double threshold_growth) {
  if (dist.rows() != dist.cols()) throw Error("hierarchical_cluster: matrix must be square");
  int n = static_cast<int>(dist.rows());
  if (n == 0) throw Error("hierarchical_cluster: no channels");
  if (threshold_growth <= 1.0)
    throw Error("hierarchical_cluster: threshold_growth must exceed 1");

  ClusterTree tree;
  ClusterLevel base;
  base.threshold = 0.0;
  for (int i = 0; i < n; ++i) base.clusters.push_back({i});
  tree.levels.push_back(base);
  if (n == 1) return tree;  // a singleton is its own root

  std::vector<double> offdiag;
  offdiag.reserve(static_cast<size_t>(n) * (n - 1) / 2);
  double maxd = 0.0;
  double min_pos = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double d = dist(i, j);
      offdiag.push_back(d);
      maxd = std::max(maxd, d);
      if (d > 0.0) min_pos = std::min(min_pos, d);
    }
  double q = percentile(offdiag, 0.25);
  if (q <= 0.0) q = std::isfinite(min_pos) ? min_pos : 1.0;

  // Working clusters carried between levels, each kept sorted; identified by
  // their smallest member for deterministic ordering.
  std::vector<std::vector<int>> current = base.clusters;

  // Pairwise distance *sums* between clusters; avg = sum/(|u|*|v|).
  auto pair_sum = [&](const std::vector<int>& u, const std::vector<int>& v) {
    double s = 0.0;
    for (int a : u)
      for (int b : v) s += dist(a, b);
    return s;
  };

  int exponent = 1;
  int guard = 0;
  while (current.size() > 1) {
    if (++guard > n + 1000)
      throw NumericalError("hierarchical_cluster: failed to terminate");
    double T = q * std::pow(threshold_growth, exponent);
    bool force = T > maxd && guard > n;  // safety valve; normally unreachable

    size_t m = current.size();
    MatrixXd sums(m, m);
    for (size_t i = 0; i < m; ++i) {
      sums(i, i) = 0.0;
      for (size_t j = i + 1; j < m; ++j)
        sums(i, j) = sums(j, i) = pair_sum(current[i], current[j]);
    }

    // state: -1 = untouched individual, -2 = attempted (stays alone),
    // s >= 0 = absorbed into supercluster s
    std::vector<int> state(m, -1);
    std::vector<std::vector<int>> supers;          // members
    std::vector<std::vector<size_t>> super_src;    // source cluster ids
    bool any_join = false;

    for (;;) {
      // Globally closest (cluster with an unspent attempt, partner). Ties
      // break toward individual partners, then the smallest member index of
      // the picked cluster, then of the partner.
      int best_c = -1, best_p = -1, best_super = -1;
      double best_avg = std::numeric_limits<double>::infinity();
      bool best_partner_individual = false;
      auto consider = [&](size_t c, int p, int super, double avg, bool individual) {
        int c_key = current[c].front();
        int p_key = individual ? current[static_cast<size_t>(p)].front()
                               : supers[static_cast<size_t>(super)].front();
        if (best_c >= 0) {
          int bc_key = current[static_cast<size_t>(best_c)].front();
          int bp_key = best_partner_individual
                           ? current[static_cast<size_t>(best_p)].front()
                           : supers[static_cast<size_t>(best_super)].front();
          if (avg > best_avg) return;
          if (avg == best_avg) {
            if (best_partner_individual && !individual) return;
            if (best_partner_individual == individual) {
              if (c_key > bc_key) return;
              if (c_key == bc_key && p_key >= bp_key) return;
            }
          }
        }
        best_avg = avg;
        best_c = static_cast<int>(c);
        best_p = p;
        best_super = super;
        best_partner_individual = individual;
      };
      for (size_t c = 0; c < m; ++c) {
        if (state[c] != -1) continue;
        double sc = static_cast<double>(current[c].size());
        // individual partners (attempted-but-alone ones remain joinable)
        for (size_t p = 0; p < m; ++p) {
          if (p == c || state[p] >= 0) continue;
          double avg = sums(c, p) / (sc * static_cast<double>(current[p].size()));
          consider(c, static_cast<int>(p), -1, avg, true);
        }
        // this-level superclusters
        for (size_t s = 0; s < supers.size(); ++s) {
          double ssum = 0.0;
          for (size_t src : super_src[s]) ssum += sums(c, src);
          double avg = ssum / (sc * static_cast<double>(supers[s].size()));
          consider(c, -1, static_cast<int>(s), avg, false);
        }
      }
      if (best_c < 0) break;  // every cluster has spent its attempt
      if (best_avg <= T || force) {
        any_join = true;
        if (best_partner_individual) {
          std::vector<int> merged = current[static_cast<size_t>(best_c)];
          merged.insert(merged.end(), current[static_cast<size_t>(best_p)].begin(),
                        current[static_cast<size_t>(best_p)].end());
          std::sort(merged.begin(), merged.end());
          supers.push_back(std::move(merged));
          super_src.push_back({static_cast<size_t>(best_c), static_cast<size_t>(best_p)});
          state[static_cast<size_t>(best_c)] = static_cast<int>(supers.size() - 1);
          state[static_cast<size_t>(best_p)] = static_cast<int>(supers.size() - 1);
        } else {
          auto& s = supers[static_cast<size_t>(best_super)];
          s.insert(s.end(), current[static_cast<size_t>(best_c)].begin(),
                   current[static_cast<size_t>(best_c)].end());
          std::sort(s.begin(), s.end());
          super_src[static_cast<size_t>(best_super)].push_back(static_cast<size_t>(best_c));
          state[static_cast<size_t>(best_c)] = best_super;
        }
      } else {
        // the global best failed the threshold, so every other candidate
        // fails too
        for (size_t c = 0; c < m; ++c)
          if (state[c] == -1) state[c] = -2;
        break;
      }
    }

    if (any_join) {
      std::vector<std::vector<int>> next;
      for (auto& s : supers) next.push_back(std::move(s));
      for (size_t c = 0; c < m; ++c)
        if (state[c] < 0) next.push_back(current[c]);
      std::sort(next.begin(), next.end(),
                [](const std::vector<int>& a, const std::vector<int>& b) {
                  return a.front() < b.front();
                });
      current = std::move(next);
      ClusterLevel lvl;
      lvl.clusters = current;
      lvl.threshold = T;
      tree.levels.push_back(std::move(lvl));
    }
    ++exponent;
  }
  return tree;
}

namespace {

struct FlatCluster {
  const std::vector<int>* members;
  double weight;
};

std::vector<FlatCluster> flatten(const ClusterTree& tree, double decay) {
  std::vector<FlatCluster> out;
  out.reserve(tree.total_clusters());
  double w = 1.0;
  for (const auto& lvl : tree.levels) {
    for (const auto& c : lvl.clusters) out.push_back({&c, w});
    w *= decay;
  }
  return out;
}

double mean_abs_diff(const double* a, const double* b, Eigen::Index n) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) s += std::fabs(a[i] - b[i]);
  return s / static_cast<double>(n);
}

// Row-major storage so mean_abs_diff can walk contiguous memory.
using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Batched 2-D transform: raw is N_channels x B; result N_channels x total_clusters.
RowMajorMatrix batch_transform_2d(const RowMajorMatrix& raw, const ClusterTree& tree,
                                  double decay) {
  if (static_cast<size_t>(raw.cols()) != tree.n_channels())
    throw Error("transform_2d: vector length does not match the tree's channel count");
  auto flat = flatten(tree, decay);
  RowMajorMatrix f(raw.rows(), static_cast<Eigen::Index>(flat.size()));
  for (size_t k = 0; k < flat.size(); ++k) {
    VectorXd acc = VectorXd::Zero(raw.rows());
    for (int ch : *flat[k].members) acc += raw.col(ch);
    f.col(static_cast<Eigen::Index>(k)) = flat[k].weight * acc;
  }
  return f;
}

// Batched 3-D transform: raw rows are channel matrices flattened row-major as
// (b*C + c); result has one column per (cluster_b, cluster_c) pair.
RowMajorMatrix batch_transform_3d(const RowMajorMatrix& raw, int B, int C,
                                  const ClusterTree& tree_b, const ClusterTree& tree_c,
                                  double decay) {
  if (raw.cols() != static_cast<Eigen::Index>(B) * C)
    throw Error("transform_3d: vector length does not match the other axes' channel counts");
  if (tree_b.n_channels() != static_cast<size_t>(B) ||
      tree_c.n_channels() != static_cast<size_t>(C))
    throw Error("transform_3d: trees do not match the other axes' channel counts");
  auto flat_b = flatten(tree_b, decay);
  auto flat_c = flatten(tree_c, decay);
  Eigen::Index n = raw.rows();
  Eigen::Index nb = static_cast<Eigen::Index>(flat_b.size());
  Eigen::Index nc = static_cast<Eigen::Index>(flat_c.size());

  // stage 1: sum over b-clusters for every c column
  RowMajorMatrix s1(n, nb * C);
  s1.setZero();
  for (Eigen::Index k = 0; k < nb; ++k) {
    for (int bch : *flat_b[static_cast<size_t>(k)].members)
      s1.middleCols(k * C, C) += raw.middleCols(static_cast<Eigen::Index>(bch) * C, C);
    s1.middleCols(k * C, C) *= flat_b[static_cast<size_t>(k)].weight;
  }
  // stage 2: sum over c-clusters
  RowMajorMatrix f(n, nb * nc);
  for (Eigen::Index k = 0; k < nb; ++k)
    for (Eigen::Index l = 0; l < nc; ++l) {
      VectorXd acc = VectorXd::Zero(n);
      for (int cch : *flat_c[static_cast<size_t>(l)].members) acc += s1.col(k * C + cch);
      f.col(k * nc + l) = flat_c[static_cast<size_t>(l)].weight * acc;
    }
  return f;
}

MatrixXd informed_distances_rm(const RowMajorMatrix& raw, const RowMajorMatrix& f, int threads) {
  Eigen::Index n = raw.rows();
  MatrixXd d = MatrixXd::Zero(n, n);
  parallel_for(static_cast<size_t>(n), threads, [&](size_t ii) {
    Eigen::Index i = static_cast<Eigen::Index>(ii);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double v = mean_abs_diff(raw.data() + i * raw.cols(), raw.data() + j * raw.cols(),
                               raw.cols());
      if (f.cols() > 0)
        v += mean_abs_diff(f.data() + i * f.cols(), f.data() + j * f.cols(), f.cols());
      d(i, j) = v;
      d(j, i) = v;
    }
  });
  return d;
}

bool degenerate_distances(const MatrixXd& d, double data_scale) {
  return d.maxCoeff() <= 1e-14 * std::max(1.0, data_scale);
}

AxisResult finish_axis(const MatrixXd& distances, const ClusterTree& tree,
                       const std::vector<double>& history, const QuestConfig& cfg,
                       double data_scale) {
  AxisResult r;
  r.distances = distances;
  r.tree = tree;
  r.change_history = history;
  if (degenerate_distances(distances, data_scale)) {
    r.error = "axis is degenerate: all questionnaire distances are (near) zero";
    return r;
  }
  DiffusionConfig ec = cfg.embed_cfg;
  ec.n_eigs = std::min<int>(ec.n_eigs, static_cast<int>(distances.rows()) - 1);
  try {
    r.embedding = embed(distances, ec);
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

}  // namespace

VectorXd transform_2d(const VectorXd& y, const ClusterTree& tree, double decay) {
  if (static_cast<size_t>(y.size()) != tree.n_channels())
    throw Error("transform_2d: vector length does not match the tree's channel count");
  auto flat = flatten(tree, decay);
  VectorXd f(static_cast<Eigen::Index>(flat.size()));
  for (size_t k = 0; k < flat.size(); ++k) {
    double s = 0.0;
    for (int ch : *flat[k].members) s += y(ch);
    f(static_cast<Eigen::Index>(k)) = flat[k].weight * s;
  }
  return f;
}

VectorXd transform_3d(const MatrixXd& y, const ClusterTree& tree_b, const ClusterTree& tree_c,
                      double decay) {
  if (static_cast<size_t>(y.rows()) != tree_b.n_channels() ||
      static_cast<size_t>(y.cols()) != tree_c.n_channels())
    throw Error("transform_3d: matrix shape does not match the trees' channel counts");
  RowMajorMatrix rm(1, y.size());
  Eigen::Index c = y.cols();
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    for (Eigen::Index j = 0; j < c; ++j) rm(0, i * c + j) = y(i, j);
  MatrixXd f = batch_transform_3d(rm, static_cast<int>(y.rows()), static_cast<int>(y.cols()),
                                  tree_b, tree_c, decay);
  return f.row(0).transpose();
}

double quest_distance(const VectorXd& a, const VectorXd& b, const ClusterTree& tree,
                      double decay) {
  if (a.size() != b.size()) throw Error("quest_distance: shape mismatch");
  VectorXd fa = transform_2d(a, tree, decay);
  VectorXd fb = transform_2d(b, tree, decay);
  return (a - b).cwiseAbs().mean() + (fa - fb).cwiseAbs().mean();
}

double quest_distance(const MatrixXd& a, const MatrixXd& b, const ClusterTree& tree_b,
                      const ClusterTree& tree_c, double decay) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error("quest_distance: shape mismatch");
  VectorXd fa = transform_3d(a, tree_b, tree_c, decay);
  VectorXd fb = transform_3d(b, tree_b, tree_c, decay);
  return (a - b).cwiseAbs().mean() + (fa - fb).cwiseAbs().mean();
}

namespace {

double rel_change(const MatrixXd& old_m, const MatrixXd& new_m) {
  double base = old_m.norm();
  if (base <= 0.0) return new_m.norm() <= 0.0 ? 0.0 : 1.0;
  return (new_m - old_m).norm() / base;
}

}  // namespace

Organize2dResult organize_2d(const MatrixXd& m, const QuestConfig& cfg) {
  if (m.rows() < 4 || m.cols() < 4)
    throw Error("organize_2d: need at least 4 channels per axis");
  double scale = m.cwiseAbs().maxCoeff();

  RowMajorMatrix rows = m;               // row channels
  RowMajorMatrix cols = m.transpose();   // column channels

  // step 1: uninformed column clustering
  MatrixXd d_cols = informed_distances_rm(cols, RowMajorMatrix(static_cast<Eigen::Index>(m.cols()), 0), cfg.threads);
  ClusterTree tree_cols = hierarchical_cluster(d_cols, cfg.threshold_growth);
  // step 2: informed rows
  MatrixXd d_rows = informed_distances_rm(
      rows, batch_transform_2d(rows, tree_cols, cfg.level_weight_decay),
      cfg.threads);
  ClusterTree tree_rows = hierarchical_cluster(d_rows, cfg.threshold_growth);

  std::vector<double> hist_rows, hist_cols;
  int sweeps = 0;
  for (int sweep = 0; sweep < cfg.max_sweeps; ++sweep) {
    ++sweeps;
    MatrixXd d_cols_new = informed_distances_rm(
        cols, batch_transform_2d(cols, tree_rows, cfg.level_weight_decay),
        cfg.threads);
    tree_cols = hierarchical_cluster(d_cols_new, cfg.threshold_growth);
    double ch_c = rel_change(d_cols, d_cols_new);
    d_cols = std::move(d_cols_new);

    MatrixXd d_rows_new = informed_distances_rm(
        rows, batch_transform_2d(rows, tree_cols, cfg.level_weight_decay),
        cfg.threads);
    tree_rows = hierarchical_cluster(d_rows_new, cfg.threshold_growth);
    double ch_r = rel_change(d_rows, d_rows_new);
    d_rows = std::move(d_rows_new);

    hist_cols.push_back(ch_c);
    hist_rows.push_back(ch_r);
    if (ch_c < cfg.convergence_tol && ch_r < cfg.convergence_tol) break;
  }

  Organize2dResult out;
  out.sweeps = sweeps;
  out.rows = finish_axis(d_rows, tree_rows, hist_rows, cfg, scale);
  out.cols = finish_axis(d_cols, tree_cols, hist_cols, cfg, scale);
  return out;
}

Organize3dResult organize_3d(const DataTensor& t, const QuestConfig& cfg) {
  t.validate();
  for (size_t a = 0; a < 3; ++a)
    if (t.dims[a] < 4)
      throw Error(std::string("organize_3d: axis ") + axis_name(static_cast<Axis>(a)) +
                  " needs at least 4 channels");
  double scale = 0.0;
  for (double v : t.values) scale = std::max(scale, std::fabs(v));

  // channel matrices: param -> (time x space), time -> (param x space),
  // space -> (param x time); flattened row-major over the two other axes.
  std::array<RowMajorMatrix, 3> raw;
  std::array<std::pair<int, int>, 3> bc{};
  for (size_t a = 0; a < 3; ++a) {
    auto vecs = axis_channel_vectors(t, static_cast<Axis>(a));
    raw[a].resize(static_cast<Eigen::Index>(vecs.size()),
                  static_cast<Eigen::Index>(vecs[0].size()));
    for (size_t i = 0; i < vecs.size(); ++i)
      for (size_t j = 0; j < vecs[i].size(); ++j)
        raw[a](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = vecs[i][j];
    std::array<int, 2> others{};
    int oi = 0;
    for (size_t b = 0; b < 3; ++b)
      if (b != a) others[oi++] = static_cast<int>(t.dims[b]);
    bc[a] = {others[0], others[1]};
  }
  constexpr size_t P = 0, T = 1, S = 2;

  auto informed = [&](size_t axis, const ClusterTree& tb, const ClusterTree& tc) {
    RowMajorMatrix f = batch_transform_3d(raw[axis], bc[axis].first, bc[axis].second, tb, tc,
                                          cfg.level_weight_decay);
    return informed_distances_rm(raw[axis], f, cfg.threads);
  };
  auto uninformed = [&](size_t axis) {
    return informed_distances_rm(raw[axis], RowMajorMatrix(raw[axis].rows(), 0), cfg.threads);
  };

  // init: uninformed parameter + space clustering, informed time
  std::array<MatrixXd, 3> d;
  std::array<ClusterTree, 3> tree;
  d[P] = uninformed(P);
  tree[P] = hierarchical_cluster(d[P], cfg.threshold_growth);
  d[S] = uninformed(S);
  tree[S] = hierarchical_cluster(d[S], cfg.threshold_growth);
  d[T] = informed(T, tree[P], tree[S]);
  tree[T] = hierarchical_cluster(d[T], cfg.threshold_growth);

  std::array<std::vector<double>, 3> hist;
  int sweeps = 0;
  for (int sweep = 0; sweep < cfg.max_sweeps; ++sweep) {
    ++sweeps;
    // (a) space + time inform parameters
    MatrixXd dp = informed(P, tree[T], tree[S]);
    tree[P] = hierarchical_cluster(dp, cfg.threshold_growth);
    double ch_p = rel_change(d[P], dp);
    d[P] = std::move(dp);
    // (b) parameters + time inform space
    MatrixXd ds = informed(S, tree[P], tree[T]);
    tree[S] = hierarchical_cluster(ds, cfg.threshold_growth);
    double ch_s = rel_change(d[S], ds);
    d[S] = std::move(ds);
    // (c) parameters + space inform time
    MatrixXd dt = informed(T, tree[P], tree[S]);
    tree[T] = hierarchical_cluster(dt, cfg.threshold_growth);
    double ch_t = rel_change(d[T], dt);
    d[T] = std::move(dt);

    hist[P].push_back(ch_p);
    hist[S].push_back(ch_s);
    hist[T].push_back(ch_t);
    if (ch_p < cfg.convergence_tol && ch_s < cfg.convergence_tol && ch_t < cfg.convergence_tol)
      break;
  }

  Organize3dResult out;
  out.sweeps = sweeps;
  for (size_t a = 0; a < 3; ++a) out.axes[a] = finish_axis(d[a], tree[a], hist[a], cfg, scale);
  return out;
}

void dump_axis_state(const AxisResult& r, const std::string& prefix) {
  {
    std::ofstream os(prefix + ".distances.csv");
    os.precision(17);
    for (Eigen::Index i = 0; i < r.distances.rows(); ++i) {
      for (Eigen::Index j = 0; j < r.distances.cols(); ++j) {
        if (j) os << ",";
        os << r.distances(i, j);
      }
      os << "\n";
    }
  }
  std::ofstream os(prefix + ".tree.txt");
  for (size_t l = 0; l < r.tree.levels.size(); ++l) {
    os << "level " << l << " threshold " << r.tree.levels[l].threshold << "\n";
    for (const auto& c : r.tree.levels[l].clusters) {
      os << " ";
      for (int ch : c) os << " " << ch;
      os << "\n";
    }
  }
}

}  // namespace epde
