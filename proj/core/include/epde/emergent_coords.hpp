#pragma once

#include <Eigen/Dense>
#include <array>
#include <optional>
#include <string>
#include <vector>

#include "epde/tensor.hpp"

namespace epde {

// Natural cubic spline interpolation on strictly increasing nodes.
class CubicSpline {
public:
  CubicSpline(std::vector<double> xs, std::vector<double> ys);
  double operator()(double x) const;

private:
  std::vector<double> x_, y_, m_;  // m_ = second derivatives at the nodes
};

// One real value per axis channel, range-normalized to [0, 1], with the
// anchor channel mapped to 0.
struct EmergentCoordinate {
  std::vector<double> values;
  size_t orientation_anchor = 0;
  int source_coord_count = 0;  // embedding columns consumed
};

// Turns a curve-shaped embedding into a 1-D coordinate: a secondary
// diffusion-maps pass over the points (epsilon from choose_epsilon of their
// pairwise distances), the leading coordinate monotonized against the
// graph-geodesic order from the anchor, rescaled to [0, 1]. The default
// anchor is the channel minimizing the first input column. Throws on a
// disconnected neighbor graph.
EmergentCoordinate extract_arclength(const Eigen::MatrixXd& points,
                                     std::optional<size_t> anchor = std::nullopt);

// Field resampled onto uniform emergent grids, with the corridor bookkeeping
// the learner needs. field(i, j) = c(psi_grid[i], phi_grid[j]).
struct EmergentChart {
  std::vector<double> psi_grid;  // emergent space, uniform ascending
  std::vector<double> phi_grid;  // emergent time, uniform ascending
  Eigen::MatrixXd field;         // n_psi x n_phi
  int source_lo = 0, source_hi = -1;  // inclusive psi-index interval; empty if lo > hi
  int boundary_width = 2;             // cells pinned to data at each psi end

  bool in_source(int i) const { return i >= source_lo && i <= source_hi; }
  bool in_boundary(int i) const {
    return i < boundary_width || i >= static_cast<int>(psi_grid.size()) - boundary_width;
  }
};

// Scattered-to-grid fit with separable natural cubic splines: per b-slice
// along a, then along b. Coincident coordinates (within 1e-9 of the range)
// collapse to averaged nodes.
EmergentChart resample(const Eigen::MatrixXd& field, const std::vector<double>& coord_a,
                       const std::vector<double>& coord_b, size_t n_a, size_t n_b);

// Marks the psi interval whose late-time maximum exceeds `threshold` of the
// global late-time maximum, dilated by two grid cells.
void detect_source_corridor(EmergentChart& chart, double threshold = 0.9);

struct ImputeResult {
  DataTensor tensor;
  std::vector<std::string> warnings;
};

// Fills masked entries by 1-D natural-cubic interpolation along the emergent
// coordinate of their axis (channels fully missing along an axis first, then
// leftover entries along emergent time). Extremes fall back to
// nearest-neighbor with a warning. Axes without a supplied coordinate use
// channel order.
ImputeResult impute(const DataTensor& t, const std::array<std::vector<double>, 3>& coords);

// Chart serialization: the field goes through the tensor format as a
// (1 x n_phi x n_psi) tensor; corridors live in the JSON sidecar.
void save_chart(const EmergentChart& chart, const std::string& path);
EmergentChart load_chart(const std::string& path);

}  // namespace epde
