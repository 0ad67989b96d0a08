#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "epde/common.hpp"

namespace epde {

// Ring of N_c quadrilateral cells sharing lateral edges. Vertex i < N_c is
// apical vertex i; vertex N_c + i is the basal vertex below it. Cell i is the
// counterclockwise quadrilateral (a_i, a_{i+1}, b_{i+1}, b_i).
struct VertexState {
  size_t n_cells = 0;
  std::vector<double> positions;  // x,y interleaved, length 4*n_cells

  size_t n_vertices() const { return 2 * n_cells; }
  double x(size_t v) const { return positions[2 * v]; }
  double y(size_t v) const { return positions[2 * v + 1]; }
  double& x(size_t v) { return positions[2 * v]; }
  double& y(size_t v) { return positions[2 * v + 1]; }

  size_t apical(size_t i) const { return i % n_cells; }
  size_t basal(size_t i) const { return n_cells + i % n_cells; }
  // (apical pair, basal pair) for cell i, counterclockwise.
  std::array<size_t, 4> cell_vertices(size_t i) const {
    size_t j = (i + 1) % n_cells;
    return {apical(i), apical(j), basal(j), basal(i)};
  }

  void validate() const;
};

struct MechParams {
  double sigma_a0 = 2.6418;
  double sigma_b0 = 2.6418;
  double sigma_l = 1.0;
  double B = 20.0;        // cell area modulus
  double A_c0 = 0.0;      // target cell area (set from the initial geometry)
  double B_Y = 0.01;      // yolk modulus
  double A_Y0 = 0.0;      // yolk target area
  double eps_mem = 1e-10; // membrane stiffness
  int n_rep = 4;          // repulsion exponent
  double R_c = 0.0;       // confining radius (set from the initial geometry)
  double P = 0.2;         // apical patterning amplitude
  double G_width = 4.0;   // apical patterning width
  double f_basal = 0.7;   // basal tension reduction factor
  double eta = 1.0;       // mobility
  double dt = 0.01;

  void validate() const;
};

struct EnergyBreakdown {
  double apical = 0.0, basal = 0.0, lateral = 0.0;
  double cell_area = 0.0, yolk = 0.0, membrane = 0.0;
  double total() const { return apical + basal + lateral + cell_area + yolk + membrane; }
};

// Ring of identical trapezoids on two concentric circles; R_b = R_a - l_l.
VertexState init_homogeneous(size_t n_cells, double lateral_length, double apical_radius);

// Sets A_c0/A_Y0 to the state's measured areas and R_c to 1.05x the apical
// radius, so the passed geometry is at its area targets.
void set_targets_from_state(MechParams& p, const VertexState& s);

// sigma_a0 * (1 + P * exp(-theta^2 / G^2)) inside |theta| < pi/4, else
// sigma_a0. theta in (-pi, pi].
double apical_tension(double theta, const MechParams& p);

double cell_area(const VertexState& s, size_t i);
double yolk_area(const VertexState& s);

EnergyBreakdown energy_breakdown(const VertexState& s, const MechParams& p);
// Returns +infinity when an apical vertex reaches the membrane.
double energy(const VertexState& s, const MechParams& p);

// F = -grad E, analytic (edge-length, shoelace-area, radial and patterning
// derivatives). Length 2*n_vertices, interleaved like positions.
std::vector<double> forces(const VertexState& s, const MechParams& p);
// Central finite differences of the energy; the cross-check oracle.
std::vector<double> forces_fd(const VertexState& s, const MechParams& p, double h = 1e-6);

struct StepResult {
  VertexState state;
  double dt_used = 0.0;
};

// One overdamped forward-Euler step x += (dt/eta) * F. On membrane
// penetration the step is retried with halved dt up to 10 times.
StepResult step(const VertexState& s, const MechParams& p);

struct RelaxResult {
  VertexState state;
  size_t iterations = 0;
  double max_force = 0.0;  // max per-vertex force norm at exit
};

// Gradient descent with adaptive dt until the largest per-vertex force norm
// drops below tol.
RelaxResult relax(const VertexState& s, const MechParams& p, double tol = 1e-7,
                  size_t max_iters = 200000);

struct BackboneCurve {
  std::vector<std::array<double, 2>> points;  // lateral-edge midpoints
  std::vector<double> arclength;              // cumulative, starts at 0
  bool closed = false;
  double total_length = 0.0;  // includes the closing segment when closed
};

// Ordered lateral-edge midpoints whose angle lies in [sector_lo, sector_hi]
// (radians; the full circle is [-pi, pi]).
BackboneCurve backbone_curve(const VertexState& s, double sector_lo, double sector_hi);

// Snapshot export: per-vertex positions then per-cell vertex ids and
// concentration.
void export_snapshot_csv(const VertexState& s, const std::vector<double>& concentrations,
                         const std::string& path);
// Filled cell polygons, red intensity proportional to concentration/scale_max.
std::string render_snapshot_svg(const VertexState& s, const std::vector<double>& concentrations,
                                double scale_max);

}  // namespace epde
