#include "epde/generators.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace epde {

void ChafeeInfanteConfig::validate() const {
  if (n_x < 3) throw UsageError("ChafeeInfanteConfig: n_x must be >= 3");
  if (nu <= 0.0) throw UsageError("ChafeeInfanteConfig: nu must be positive");
  if (t_end <= 0.0) throw UsageError("ChafeeInfanteConfig: t_end must be positive");
  if (n_out_times < 2) throw UsageError("ChafeeInfanteConfig: need at least 2 output times");
  double dx = 1.0 / static_cast<double>(n_x - 1);
  if (dt > 0.0 && dt > dx * dx / (2.0 * nu))
    throw UsageError("ChafeeInfanteConfig: dt violates the explicit stability bound dx^2/(2*nu)");
}

DataTensor solve_chafee_infante(const ChafeeInfanteConfig& cfg) {
  cfg.validate();
  size_t n = cfg.n_x;
  double dx = 1.0 / static_cast<double>(n - 1);
  double dt = cfg.dt > 0.0 ? cfg.dt : 0.4 * dx * dx / cfg.nu;

  std::vector<double> u(n, cfg.u0), unew(n);
  u.front() = 0.0;
  u.back() = 0.0;

  DataTensor out = DataTensor::zeros(1, cfg.n_out_times, n);
  std::vector<double> out_times(cfg.n_out_times);
  for (size_t i = 0; i < cfg.n_out_times; ++i)
    out_times[i] = cfg.t_end * static_cast<double>(i) / static_cast<double>(cfg.n_out_times - 1);

  double inv_dx2 = 1.0 / (dx * dx);
  size_t next_out = 0;
  double t = 0.0;
  auto record = [&](size_t slot) {
    for (size_t j = 0; j < n; ++j) out.at(0, slot, j) = u[j];
  };
  // record t=0 snapshot(s) due
  while (next_out < cfg.n_out_times && out_times[next_out] <= 0.0) record(next_out++);

  while (next_out < cfg.n_out_times) {
    double step = dt;
    bool hits_output = t + step >= out_times[next_out] - 1e-15;
    if (hits_output) step = out_times[next_out] - t;
    if (step > 0.0) {
      unew.front() = 0.0;
      unew.back() = 0.0;
      for (size_t j = 1; j + 1 < n; ++j) {
        double lap = (u[j + 1] - 2.0 * u[j] + u[j - 1]) * inv_dx2;
        unew[j] = u[j] + step * (u[j] - u[j] * u[j] * u[j] + cfg.nu * lap);
      }
      u.swap(unew);
      t += step;
      for (double v : u)
        if (!std::isfinite(v) || std::fabs(v) > 10.0)
          throw NumericalError("solve_chafee_infante: instability at t=" + std::to_string(t) +
                               " (|u| exceeded 10); reduce dt");
    }
    if (hits_output) record(next_out++);
  }

  out.axis_meta[static_cast<size_t>(Axis::Time)]["t"] = out_times;
  std::vector<double> xs(n);
  for (size_t j = 0; j < n; ++j) xs[j] = static_cast<double>(j) * dx;
  out.axis_meta[static_cast<size_t>(Axis::Space)]["arclength"] = xs;
  return out;
}

void SignalParams::validate() const {
  if (D_e < 0.0 || d < 0.0 || k < 0.0 || alpha < 0.0)
    throw UsageError("SignalParams: rates must be nonnegative");
  if (n_cells < 3) throw UsageError("SignalParams: need at least 3 cells");
  if (t_s <= 0.0 || t_s >= t_end)
    throw UsageError("SignalParams: t_s must lie in (0, t_end)");
  if (dt <= 0.0) throw UsageError("SignalParams: dt must be positive");
  if (dt > 1.0 / (2.0 * D_e + d + 1e-300) && (D_e > 0.0 || d > 0.0))
    throw UsageError("SignalParams: dt violates the forward-Euler bound 1/(2*D_e + d)");
  for (size_t c : source_cells)
    if (c < 1 || c > n_cells)
      throw UsageError("SignalParams: source cell index " + std::to_string(c) +
                       " outside [1, n_cells]");
}

std::vector<size_t> SignalParams::default_source_cells() {
  std::vector<size_t> g;
  for (size_t i = 13; i <= 19; ++i) g.push_back(i);
  for (size_t i = 61; i <= 67; ++i) g.push_back(i);
  return g;
}

double production_rate(double t, const SignalParams& p) {
  if (t < 0.0) throw Error("production_rate: t must be nonnegative");
  if (t < p.t_s) return p.k * t * t;
  return p.k * p.t_s * p.t_s * std::exp(-p.alpha * (t - p.t_s));
}

std::vector<double> simulate_signal(const SignalParams& p, const std::vector<double>& out_times) {
  p.validate();
  if (out_times.empty()) throw UsageError("simulate_signal: no output times");
  if (!std::is_sorted(out_times.begin(), out_times.end()))
    throw UsageError("simulate_signal: output times must be ascending");
  size_t n = p.n_cells;
  std::vector<uint8_t> G(n, 0);
  for (size_t c : p.source_cells) G[c - 1] = 1;

  std::vector<double> c(n, 0.0), cnew(n);
  std::vector<double> out(out_times.size() * n, 0.0);
  size_t next_out = 0;
  double t = 0.0;
  auto record = [&](size_t slot) {
    std::copy(c.begin(), c.end(), out.begin() + static_cast<long>(slot * n));
  };
  while (next_out < out_times.size() && out_times[next_out] <= 0.0) record(next_out++);

  while (next_out < out_times.size()) {
    double step = p.dt;
    bool hits_output = t + step >= out_times[next_out] - 1e-15;
    if (hits_output) step = out_times[next_out] - t;
    if (step > 0.0) {
      double r = production_rate(t, p);
      for (size_t i = 0; i < n; ++i) {
        double left = c[(i + n - 1) % n];
        double right = c[(i + 1) % n];
        double dc = p.D_e * (right - 2.0 * c[i] + left) + r * (G[i] ? 1.0 : 0.0) - p.d * c[i];
        cnew[i] = c[i] + step * dc;
      }
      c.swap(cnew);
      t += step;
      for (double v : c)
        if (!std::isfinite(v) || v < -1e-9 || v > 1e6)
          throw NumericalError("simulate_signal: blow-up at t=" + std::to_string(t));
    }
    if (hits_output) record(next_out++);
  }
  return out;
}

double stopping_time_fn(double D_e, double d, const ParameterDistribution& dist) {
  double ts = dist.ts_base + dist.ts_de_slope * (D_e - dist.de_mean) +
              dist.ts_d_slope * (d - dist.d_mean);
  return std::clamp(ts, dist.ts_min, dist.ts_max);
}

std::vector<ParameterSample> sample_parameters(size_t n, uint64_t seed,
                                               const ParameterDistribution& dist) {
  if (n < 1) throw UsageError("sample_parameters: n must be >= 1");
  Rng rng(seed);
  std::vector<ParameterSample> out;
  out.reserve(n);
  auto truncated_normal = [&](double mean, double sd) {
    for (;;) {
      double v = mean + sd * rng.next_normal();
      if (std::fabs(v - mean) <= 2.0 * sd) return v;
    }
  };
  for (size_t i = 0; i < n; ++i) {
    ParameterSample s;
    s.D_e = truncated_normal(dist.de_mean, dist.de_sd);
    s.d = truncated_normal(dist.d_mean, dist.d_sd);
    s.t_s = stopping_time_fn(s.D_e, s.d, dist);
    out.push_back(s);
  }
  return out;
}

DataTensor generate_ensemble(const std::vector<ParameterSample>& samples,
                             const EnsembleConfig& cfg) {
  if (samples.empty()) throw UsageError("generate_ensemble: need at least one sample");
  size_t n_cells = cfg.base.n_cells;
  size_t first = cfg.first_cell;
  size_t n_ch = cfg.n_channels == 0 ? n_cells : cfg.n_channels;
  if (first + n_ch > n_cells)
    throw UsageError("generate_ensemble: observation window exceeds the ring");

  std::vector<double> out_times(cfg.n_out_times);
  double t_end = cfg.base.t_end;
  for (size_t i = 0; i < cfg.n_out_times; ++i)
    out_times[i] = t_end * static_cast<double>(i) / static_cast<double>(cfg.n_out_times - 1);

  DataTensor t = DataTensor::zeros(samples.size(), cfg.n_out_times, n_ch);
  std::string first_error;
  std::vector<std::string> errors(samples.size());
  parallel_for(samples.size(), cfg.threads, [&](size_t pi) {
    SignalParams p = cfg.base;
    p.D_e = samples[pi].D_e;
    p.d = samples[pi].d;
    p.t_s = samples[pi].t_s;
    try {
      std::vector<double> field = simulate_signal(p, out_times);
      for (size_t ti = 0; ti < cfg.n_out_times; ++ti)
        for (size_t s = 0; s < n_ch; ++s)
          t.at(pi, ti, s) = field[ti * n_cells + first + s];
    } catch (const std::exception& e) {
      errors[pi] = e.what();
    }
  });
  for (size_t pi = 0; pi < samples.size(); ++pi)
    if (!errors[pi].empty())
      throw NumericalError("generate_ensemble: sample " + std::to_string(pi) + ": " + errors[pi]);

  auto& pmeta = t.axis_meta[static_cast<size_t>(Axis::Param)];
  std::vector<double> des, ds, tss;
  for (const auto& s : samples) {
    des.push_back(s.D_e);
    ds.push_back(s.d);
    tss.push_back(s.t_s);
  }
  pmeta["D_e"] = des;
  pmeta["d"] = ds;
  pmeta["t_s"] = tss;
  t.axis_meta[static_cast<size_t>(Axis::Time)]["t"] = out_times;
  std::vector<double> arcs(n_ch);
  for (size_t s = 0; s < n_ch; ++s)
    arcs[s] = static_cast<double>(first + s) + 0.5;  // cell centers, unit spacing
  t.axis_meta[static_cast<size_t>(Axis::Space)]["arclength"] = arcs;
  return t;
}

}  // namespace epde
