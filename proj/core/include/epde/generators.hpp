#pragma once

#include <cstdint>
#include <vector>

#include "epde/tensor.hpp"

namespace epde {

// u_t = u - u^3 + nu*u_xx on [0,1], u = 0 clamped at both ends, method of
// lines with a second-order central Laplacian and forward-Euler steps.
struct ChafeeInfanteConfig {
  double nu = 0.16;
  size_t n_x = 101;       // grid points including both boundary points
  double t_end = 10.0;
  double dt = 0.0;        // <= 0 selects 0.4*dx^2/nu
  double u0 = 0.1;        // initial interior value
  size_t n_out_times = 200;

  void validate() const;
};

// Output tensor has dims (1, n_out_times, n_x); axis_meta carries the output
// times and grid positions (as "arclength").
DataTensor solve_chafee_infante(const ChafeeInfanteConfig& cfg);

// Ring-of-cells chemical signal model: per-cell concentration driven by
// nearest-neighbor exchange, a localized time-dependent source, and first
// order degradation.
struct SignalParams {
  double D_e = 0.2;    // effective diffusivity (per cell^2)
  double d = 0.08;     // degradation rate
  double t_s = 40.0;   // production stopping time
  double k = 5e-5;     // production prefactor
  double alpha = 0.03; // post-t_s decay coefficient
  size_t n_cells = 80;
  std::vector<size_t> source_cells;  // 1-based cell indices with G(i)=1
  double dt = 0.01;
  double t_end = 60.0;

  void validate() const;
  // Appendix-style default source layout for an n=80 ring.
  static std::vector<size_t> default_source_cells();
};

// r(t) = k*t^2 for t < t_s, k*t_s^2*exp(-alpha*(t-t_s)) afterwards.
double production_rate(double t, const SignalParams& p);

// Forward-Euler integration of
//   dC_i/dt = D_e*(C_{i+1} - 2 C_i + C_{i-1}) + r(t)*G(i) - d*C_i
// with periodic wraparound and C_i(0) = 0, recorded at out_times. Result is
// row-major (n_times x n_cells). Aborts with NumericalError on blow-up.
std::vector<double> simulate_signal(const SignalParams& p, const std::vector<double>& out_times);

struct ParameterSample {
  double D_e = 0.0;
  double d = 0.0;
  double t_s = 0.0;
};

// t_s = ts_base + ts_de_slope*(D_e - de_mean) + ts_d_slope*(d - d_mean),
// clipped to [ts_min, ts_max]. Stored in config so experiments can swap it.
struct ParameterDistribution {
  double de_mean = 0.2, de_sd = 0.04;
  double d_mean = 0.075, d_sd = 0.005;
  double ts_base = 40.0, ts_de_slope = 20.0, ts_d_slope = -400.0;
  double ts_min = 35.0, ts_max = 45.0;
};

double stopping_time_fn(double D_e, double d, const ParameterDistribution& dist);

// Draws (D_e, d) from independent normals, redrawing anything beyond two
// standard deviations, then sets t_s = stopping_time_fn(D_e, d).
std::vector<ParameterSample> sample_parameters(size_t n, uint64_t seed,
                                               const ParameterDistribution& dist = {});

struct EnsembleConfig {
  SignalParams base;
  size_t n_out_times = 61;
  // Observation window: channels are cells [first_cell, first_cell+n_channels)
  // (0-based). n_channels = 0 observes the whole ring.
  size_t first_cell = 0;
  size_t n_channels = 0;
  int threads = 1;
};

// (N_p x N_t x N_s) tensor of concentrations; axis_meta holds the true
// parameters, output times, and observed-cell arclengths (cell centers,
// unit cell spacing scaled by 2*pi*R/n via ring_radius).
DataTensor generate_ensemble(const std::vector<ParameterSample>& samples,
                             const EnsembleConfig& cfg);

}  // namespace epde
