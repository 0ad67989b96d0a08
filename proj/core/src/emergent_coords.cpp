#include "epde/emergent_coords.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <queue>

#include <nlohmann/json.hpp>

#include "epde/diffusion_maps.hpp"
#include "epde/metrics.hpp"

namespace epde {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

CubicSpline::CubicSpline(std::vector<double> xs, std::vector<double> ys)
    : x_(std::move(xs)), y_(std::move(ys)) {
  size_t n = x_.size();
  if (n != y_.size() || n < 2) throw Error("CubicSpline: need >= 2 matching nodes");
  for (size_t i = 1; i < n; ++i)
    if (!(x_[i] > x_[i - 1])) throw Error("CubicSpline: nodes must strictly increase");
  m_.assign(n, 0.0);
  if (n == 2) return;  // linear segment, natural BC already zero
  // Thomas algorithm for the natural-spline tridiagonal system.
  std::vector<double> sub(n, 0.0), diag(n, 0.0), sup(n, 0.0), rhs(n, 0.0);
  diag[0] = diag[n - 1] = 1.0;
  for (size_t i = 1; i + 1 < n; ++i) {
    double h0 = x_[i] - x_[i - 1], h1 = x_[i + 1] - x_[i];
    sub[i] = h0 / 6.0;
    diag[i] = (h0 + h1) / 3.0;
    sup[i] = h1 / 6.0;
    rhs[i] = (y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0;
  }
  for (size_t i = 1; i < n; ++i) {
    double w = sub[i] / diag[i - 1];
    diag[i] -= w * sup[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  m_[n - 1] = rhs[n - 1] / diag[n - 1];
  for (size_t i = n - 1; i-- > 0;) m_[i] = (rhs[i] - sup[i] * m_[i + 1]) / diag[i];
}

double CubicSpline::operator()(double x) const {
  size_t n = x_.size();
  // Clamp to the node range; charts never extrapolate.
  if (x <= x_.front()) x = x_.front();
  if (x >= x_.back()) x = x_.back();
  size_t hi = static_cast<size_t>(
      std::upper_bound(x_.begin() + 1, x_.end() - 1, x) - x_.begin());
  size_t lo = hi - 1;
  double h = x_[hi] - x_[lo];
  double a = (x_[hi] - x) / h, b = (x - x_[lo]) / h;
  return a * y_[lo] + b * y_[hi] +
         ((a * a * a - a) * m_[lo] + (b * b * b - b) * m_[hi]) * h * h / 6.0;
}

namespace {

// Pool-adjacent-violators: L2 isotonic (non-decreasing) fit.
std::vector<double> isotonic_fit(const std::vector<double>& v) {
  size_t n = v.size();
  std::vector<double> level(n), weight(n);
  std::vector<size_t> count(n);
  size_t m = 0;
  for (size_t i = 0; i < n; ++i) {
    level[m] = v[i];
    weight[m] = 1.0;
    count[m] = 1;
    ++m;
    while (m > 1 && level[m - 2] > level[m - 1]) {
      double w = weight[m - 2] + weight[m - 1];
      level[m - 2] = (level[m - 2] * weight[m - 2] + level[m - 1] * weight[m - 1]) / w;
      weight[m - 2] = w;
      count[m - 2] += count[m - 1];
      --m;
    }
  }
  std::vector<double> out;
  out.reserve(n);
  for (size_t b = 0; b < m; ++b) out.insert(out.end(), count[b], level[b]);
  return out;
}

std::vector<double> dijkstra(const std::vector<std::vector<std::pair<int, double>>>& adj,
                             int start) {
  std::vector<double> dist(adj.size(), std::numeric_limits<double>::infinity());
  using Node = std::pair<double, int>;
  std::priority_queue<Node, std::vector<Node>, std::greater<Node>> pq;
  dist[static_cast<size_t>(start)] = 0.0;
  pq.push({0.0, start});
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    if (d > dist[static_cast<size_t>(u)]) continue;
    for (auto [v, w] : adj[static_cast<size_t>(u)]) {
      double nd = d + w;
      if (nd < dist[static_cast<size_t>(v)]) {
        dist[static_cast<size_t>(v)] = nd;
        pq.push({nd, v});
      }
    }
  }
  return dist;
}

}  // namespace

EmergentCoordinate extract_arclength(const MatrixXd& points, std::optional<size_t> anchor_in) {
  Eigen::Index n = points.rows();
  if (n < 4) throw Error("extract_arclength: need at least 4 points");
  MatrixXd dist = pairwise_distances(points);
  double eps = choose_epsilon(dist);

  // epsilon-ball neighbor graph, growing the radius until connected
  std::vector<std::vector<std::pair<int, double>>> adj;
  double tau = eps;
  bool connected = false;
  for (int attempt = 0; attempt < 6 && !connected; ++attempt, tau *= 1.5) {
    adj.assign(static_cast<size_t>(n), {});
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j)
        if (dist(i, j) <= tau) {
          adj[static_cast<size_t>(i)].push_back({static_cast<int>(j), dist(i, j)});
          adj[static_cast<size_t>(j)].push_back({static_cast<int>(i), dist(i, j)});
        }
    auto d0 = dijkstra(adj, 0);
    connected = std::all_of(d0.begin(), d0.end(), [](double d) { return std::isfinite(d); });
  }
  if (!connected) throw NumericalError("extract_arclength: disconnected neighbor graph");

  size_t anchor = 0;
  if (anchor_in) {
    anchor = *anchor_in;
    if (anchor >= static_cast<size_t>(n)) throw Error("extract_arclength: anchor out of range");
  } else {
    Eigen::Index amin = 0;
    points.col(0).minCoeff(&amin);
    anchor = static_cast<size_t>(amin);
  }

  std::vector<double> geo = dijkstra(adj, static_cast<int>(anchor));

  DiffusionConfig cfg;
  cfg.epsilon = eps;
  cfg.n_eigs = static_cast<int>(std::min<Eigen::Index>(2, n - 2));
  Embedding sec = embed(dist, cfg);
  VectorXd xi = sec.coords.col(0);

  // order by geodesic distance from the anchor, ties by channel index
  std::vector<size_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return geo[a] < geo[b]; });

  std::vector<double> seq(static_cast<size_t>(n));
  for (size_t r = 0; r < order.size(); ++r) seq[r] = xi(static_cast<Eigen::Index>(order[r]));
  // orient the secondary coordinate along the geodesic order
  {
    std::vector<double> idx(seq.size());
    std::iota(idx.begin(), idx.end(), 0.0);
    bool flip = false;
    try {
      flip = spearman(seq, idx) < 0.0;
    } catch (const Error&) {
      flip = false;  // constant coordinate; isotonic fit will flatten anyway
    }
    if (flip)
      for (double& v : seq) v = -v;
  }
  std::vector<double> mono = isotonic_fit(seq);

  EmergentCoordinate out;
  out.orientation_anchor = anchor;
  out.source_coord_count = static_cast<int>(points.cols());
  out.values.assign(static_cast<size_t>(n), 0.0);
  double lo = mono.front(), hi = mono.back();
  if (hi - lo <= 0.0) {
    // Degenerate monotone fit; fall back to normalized geodesic rank.
    for (size_t r = 0; r < order.size(); ++r)
      out.values[order[r]] = static_cast<double>(r) / static_cast<double>(n - 1);
    return out;
  }
  for (size_t r = 0; r < order.size(); ++r)
    out.values[order[r]] = (mono[r] - lo) / (hi - lo);
  return out;
}

EmergentChart resample(const MatrixXd& field, const std::vector<double>& coord_a,
                       const std::vector<double>& coord_b, size_t n_a, size_t n_b) {
  if (static_cast<size_t>(field.rows()) != coord_a.size() ||
      static_cast<size_t>(field.cols()) != coord_b.size())
    throw Error("resample: field shape does not match the coordinates");
  if (n_a < 4 || n_b < 4) throw Error("resample: output grids need >= 4 points");

  // Sort and collapse coincident coordinates (averaged nodes).
  auto collapse = [](const std::vector<double>& coord)
      -> std::pair<std::vector<double>, std::vector<std::vector<size_t>>> {
    std::vector<size_t> order(coord.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return coord[a] < coord[b]; });
    double range = coord[order.back()] - coord[order.front()];
    double tol = 1e-9 * std::max(range, 1e-300);
    std::vector<double> nodes;
    std::vector<std::vector<size_t>> groups;
    for (size_t idx : order) {
      if (!nodes.empty() && coord[idx] - nodes.back() <= tol) {
        groups.back().push_back(idx);
      } else {
        nodes.push_back(coord[idx]);
        groups.push_back({idx});
      }
    }
    return {nodes, groups};
  };

  auto [nodes_a, groups_a] = collapse(coord_a);
  auto [nodes_b, groups_b] = collapse(coord_b);
  if (nodes_a.size() < 4 || nodes_b.size() < 4)
    throw Error("resample: need >= 4 distinct coordinate values per axis");

  MatrixXd grid0(nodes_a.size(), nodes_b.size());
  for (size_t i = 0; i < groups_a.size(); ++i)
    for (size_t j = 0; j < groups_b.size(); ++j) {
      double acc = 0.0;
      for (size_t r : groups_a[i])
        for (size_t c : groups_b[j]) acc += field(static_cast<Eigen::Index>(r),
                                                  static_cast<Eigen::Index>(c));
      grid0(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          acc / static_cast<double>(groups_a[i].size() * groups_b[j].size());
    }

  EmergentChart chart;
  chart.psi_grid.resize(n_a);
  chart.phi_grid.resize(n_b);
  for (size_t i = 0; i < n_a; ++i)
    chart.psi_grid[i] = nodes_a.front() + (nodes_a.back() - nodes_a.front()) *
                                              static_cast<double>(i) /
                                              static_cast<double>(n_a - 1);
  for (size_t j = 0; j < n_b; ++j)
    chart.phi_grid[j] = nodes_b.front() + (nodes_b.back() - nodes_b.front()) *
                                              static_cast<double>(j) /
                                              static_cast<double>(n_b - 1);

  // fit along a per b-slice, then along b
  MatrixXd stage(static_cast<Eigen::Index>(n_a), grid0.cols());
  for (Eigen::Index j = 0; j < grid0.cols(); ++j) {
    std::vector<double> ys(nodes_a.size());
    for (size_t i = 0; i < nodes_a.size(); ++i) ys[i] = grid0(static_cast<Eigen::Index>(i), j);
    CubicSpline sp(nodes_a, ys);
    for (size_t i = 0; i < n_a; ++i) stage(static_cast<Eigen::Index>(i), j) = sp(chart.psi_grid[i]);
  }
  chart.field.resize(static_cast<Eigen::Index>(n_a), static_cast<Eigen::Index>(n_b));
  for (size_t i = 0; i < n_a; ++i) {
    std::vector<double> ys(nodes_b.size());
    for (size_t j = 0; j < nodes_b.size(); ++j)
      ys[j] = stage(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    CubicSpline sp(nodes_b, ys);
    for (size_t j = 0; j < n_b; ++j)
      chart.field(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          sp(chart.phi_grid[j]);
  }
  for (Eigen::Index i = 0; i < chart.field.size(); ++i)
    if (!std::isfinite(chart.field.data()[i]))
      throw NumericalError("resample: non-finite value in the resampled field");
  return chart;
}

void detect_source_corridor(EmergentChart& chart, double threshold) {
  Eigen::Index n_psi = chart.field.rows();
  Eigen::Index n_phi = chart.field.cols();
  Eigen::Index late_start = n_phi / 4;
  VectorXd late_max(n_psi);
  for (Eigen::Index i = 0; i < n_psi; ++i)
    late_max(i) = chart.field.row(i).tail(n_phi - late_start).maxCoeff();
  double global = late_max.maxCoeff();
  chart.source_lo = 0;
  chart.source_hi = -1;
  if (global <= 0.0) return;
  int lo = -1, hi = -1;
  for (Eigen::Index i = 0; i < n_psi; ++i) {
    if (late_max(i) >= threshold * global) {
      if (lo < 0) lo = static_cast<int>(i);
      hi = static_cast<int>(i);
    }
  }
  if (lo < 0) return;
  chart.source_lo = std::max(0, lo - 2);
  chart.source_hi = std::min(static_cast<int>(n_psi) - 1, hi + 2);
}

ImputeResult impute(const DataTensor& t, const std::array<std::vector<double>, 3>& coords) {
  t.validate();
  ImputeResult res;
  res.tensor = t;
  if (t.mask.empty()) return res;  // nothing to do
  DataTensor& out = res.tensor;

  auto axis_coord = [&](size_t a, size_t i) {
    return coords[a].empty() ? static_cast<double>(i) : coords[a][i];
  };

  // Pass 1: channels fully missing along one axis.
  for (size_t a = 0; a < 3; ++a) {
    size_t n = out.dims[a];
    if (!coords[a].empty() && coords[a].size() != n)
      throw Error("impute: coordinate length mismatch on axis " +
                  std::string(axis_name(static_cast<Axis>(a))));
    std::vector<uint8_t> fully_masked(n, 1);
    for (size_t p = 0; p < out.dims[0]; ++p)
      for (size_t ti = 0; ti < out.dims[1]; ++ti)
        for (size_t s = 0; s < out.dims[2]; ++s) {
          std::array<size_t, 3> idx{p, ti, s};
          if (out.mask[out.index(p, ti, s)]) fully_masked[idx[a]] = 0;
        }
    std::vector<size_t> observed, missing;
    for (size_t i = 0; i < n; ++i) (fully_masked[i] ? missing : observed).push_back(i);
    if (missing.empty()) continue;
    if (observed.size() < 2)
      throw Error("impute: fewer than 2 observed channels on axis " +
                  std::string(axis_name(static_cast<Axis>(a))));
    std::vector<double> obs_coord;
    for (size_t i : observed) obs_coord.push_back(axis_coord(a, i));
    // coordinate-sorted view of the observed channels
    std::vector<size_t> ord(observed.size());
    std::iota(ord.begin(), ord.end(), 0);
    std::stable_sort(ord.begin(), ord.end(),
                     [&](size_t u, size_t v) { return obs_coord[u] < obs_coord[v]; });
    std::vector<double> xs;
    std::vector<size_t> xchan;
    for (size_t r : ord) {
      double c = obs_coord[r];
      if (!xs.empty() && c <= xs.back()) c = xs.back() + 1e-12 * std::max(1.0, std::fabs(c));
      xs.push_back(c);
      xchan.push_back(observed[r]);
    }

    size_t rest = out.size() / n;
    for (size_t miss : missing) {
      double cm = axis_coord(a, miss);
      bool extreme = cm < xs.front() || cm > xs.back();
      if (extreme)
        res.warnings.push_back(std::string("axis ") + axis_name(static_cast<Axis>(a)) +
                               " channel " + std::to_string(miss) +
                               " lies at a coordinate extreme; nearest-neighbor fill");
      for (size_t line = 0; line < rest; ++line) {
        // decode `line` into the fixed indices of the other axes
        std::array<size_t, 3> idx{};
        size_t rem = line;
        for (size_t b = 3; b-- > 0;) {
          if (b == a) continue;
          idx[b] = rem % out.dims[b];
          rem /= out.dims[b];
        }
        std::vector<double> ys(xs.size());
        for (size_t r = 0; r < xs.size(); ++r) {
          idx[a] = xchan[r];
          ys[r] = out.values[out.index(idx[0], idx[1], idx[2])];
        }
        idx[a] = miss;
        size_t oi = out.index(idx[0], idx[1], idx[2]);
        if (extreme || xs.size() < 3) {
          size_t nearest = cm <= xs.front() ? 0 : xs.size() - 1;
          if (!extreme) nearest = std::fabs(cm - xs.front()) < std::fabs(cm - xs.back())
                                      ? 0
                                      : xs.size() - 1;
          out.values[oi] = ys[nearest];
        } else {
          CubicSpline sp(xs, ys);
          out.values[oi] = sp(cm);
        }
        out.mask[oi] = 1;
      }
    }
  }

  // Pass 2: leftover scattered entries, interpolated along emergent time.
  constexpr size_t TA = static_cast<size_t>(Axis::Time);
  for (size_t p = 0; p < out.dims[0]; ++p)
    for (size_t s = 0; s < out.dims[2]; ++s) {
      std::vector<size_t> miss_t;
      std::vector<double> xs, ys;
      for (size_t ti = 0; ti < out.dims[1]; ++ti) {
        size_t i = out.index(p, ti, s);
        if (out.mask[i])
          xs.push_back(axis_coord(TA, ti)), ys.push_back(out.values[i]);
        else
          miss_t.push_back(ti);
      }
      if (miss_t.empty()) continue;
      if (xs.size() < 2) throw Error("impute: a time line has fewer than 2 observed entries");
      for (size_t ti : miss_t) {
        double cm = axis_coord(TA, ti);
        size_t oi = out.index(p, ti, s);
        if (xs.size() >= 3 && cm >= xs.front() && cm <= xs.back()) {
          CubicSpline sp(xs, ys);
          out.values[oi] = sp(cm);
        } else {
          out.values[oi] = std::fabs(cm - xs.front()) < std::fabs(cm - xs.back()) ? ys.front()
                                                                                  : ys.back();
          res.warnings.push_back("entry (" + std::to_string(p) + "," + std::to_string(ti) + "," +
                                 std::to_string(s) + ") filled by nearest neighbor");
        }
        out.mask[oi] = 1;
      }
    }

  bool all = std::all_of(out.mask.begin(), out.mask.end(), [](uint8_t m) { return m != 0; });
  if (all) out.mask.clear();
  return res;
}

void save_chart(const EmergentChart& chart, const std::string& path) {
  DataTensor t = DataTensor::zeros(1, chart.phi_grid.size(), chart.psi_grid.size());
  for (size_t j = 0; j < chart.phi_grid.size(); ++j)
    for (size_t i = 0; i < chart.psi_grid.size(); ++i)
      t.at(0, j, i) = chart.field(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  t.axis_meta[static_cast<size_t>(Axis::Time)]["phi"] = chart.phi_grid;
  t.axis_meta[static_cast<size_t>(Axis::Space)]["psi"] = chart.psi_grid;
  save_tensor(t, path);
  // append the corridor block to the sidecar
  std::string side = path + ".meta.json";
  json j;
  {
    std::ifstream is(side);
    if (!is) throw Error("save_chart: missing sidecar " + side);
    is >> j;
  }
  j["chart"] = {{"source_lo", chart.source_lo},
                {"source_hi", chart.source_hi},
                {"boundary_width", chart.boundary_width}};
  std::ofstream os(side);
  os << j.dump(2) << "\n";
}

EmergentChart load_chart(const std::string& path) {
  DataTensor t = load_tensor(path);
  if (t.dims[0] != 1) throw Error("load_chart: not a chart tensor");
  EmergentChart chart;
  chart.phi_grid = t.axis_meta[static_cast<size_t>(Axis::Time)].at("phi");
  chart.psi_grid = t.axis_meta[static_cast<size_t>(Axis::Space)].at("psi");
  chart.field.resize(static_cast<Eigen::Index>(chart.psi_grid.size()),
                     static_cast<Eigen::Index>(chart.phi_grid.size()));
  for (size_t j = 0; j < chart.phi_grid.size(); ++j)
    for (size_t i = 0; i < chart.psi_grid.size(); ++i)
      chart.field(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t.at(0, j, i);
  std::ifstream is(path + ".meta.json");
  if (is) {
    json j;
    is >> j;
    if (j.contains("chart")) {
      chart.source_lo = j["chart"].value("source_lo", 0);
      chart.source_hi = j["chart"].value("source_hi", -1);
      chart.boundary_width = j["chart"].value("boundary_width", 2);
    }
  }
  return chart;
}

}  // namespace epde
