#include "epde/vertex_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace epde {

namespace {

constexpr double kPi = 3.14159265358979323846;

double norm2(double dx, double dy) { return std::sqrt(dx * dx + dy * dy); }

double wrap_angle(double a) {
  while (a <= -kPi) a += 2.0 * kPi;
  while (a > kPi) a -= 2.0 * kPi;
  return a;
}

// d sigma_a / d theta inside the patterned sector.
double apical_tension_dtheta(double theta, const MechParams& p) {
  if (std::fabs(theta) >= kPi / 4.0) return 0.0;
  double g2 = p.G_width * p.G_width;
  return p.sigma_a0 * p.P * std::exp(-theta * theta / g2) * (-2.0 * theta / g2);
}

}  // namespace

void VertexState::validate() const {
  if (n_cells < 3) throw Error("VertexState: need at least 3 cells");
  if (positions.size() != 4 * n_cells) throw Error("VertexState: positions length mismatch");
  for (double v : positions)
    if (!std::isfinite(v)) throw Error("VertexState: non-finite vertex position");
}

void MechParams::validate() const {
  if (sigma_a0 < 0 || sigma_b0 < 0 || sigma_l < 0 || B < 0 || B_Y < 0 || eps_mem < 0)
    throw Error("MechParams: moduli must be nonnegative");
  if (f_basal >= 1.0 + 1e-12 && f_basal != 1.0)
    throw Error("MechParams: f_basal must be < 1 (or exactly 1 to disable)");
  if (eta <= 0) throw Error("MechParams: eta must be positive");
  if (dt <= 0) throw Error("MechParams: dt must be positive");
  if (n_rep < 1) throw Error("MechParams: n_rep must be >= 1");
}

VertexState init_homogeneous(size_t n_cells, double lateral_length, double apical_radius) {
  if (n_cells < 3) throw Error("init_homogeneous: need at least 3 cells");
  if (apical_radius <= lateral_length)
    throw Error("init_homogeneous: apical radius must exceed the lateral edge length");
  double rb = apical_radius - lateral_length;
  VertexState s;
  s.n_cells = n_cells;
  s.positions.resize(4 * n_cells);
  for (size_t i = 0; i < n_cells; ++i) {
    double th = 2.0 * kPi * static_cast<double>(i) / static_cast<double>(n_cells);
    s.x(i) = apical_radius * std::cos(th);
    s.y(i) = apical_radius * std::sin(th);
    s.x(n_cells + i) = rb * std::cos(th);
    s.y(n_cells + i) = rb * std::sin(th);
  }
  return s;
}

void set_targets_from_state(MechParams& p, const VertexState& s) {
  p.A_c0 = cell_area(s, 0);
  p.A_Y0 = yolk_area(s);
  double rmax = 0.0;
  for (size_t i = 0; i < s.n_cells; ++i) rmax = std::max(rmax, norm2(s.x(i), s.y(i)));
  p.R_c = 1.05 * rmax;
}

double apical_tension(double theta, const MechParams& p) {
  if (theta <= -kPi || theta > kPi + 1e-12)
    throw Error("apical_tension: theta must lie in (-pi, pi]");
  if (std::fabs(theta) >= kPi / 4.0) return p.sigma_a0;
  double g2 = p.G_width * p.G_width;
  return p.sigma_a0 * (1.0 + p.P * std::exp(-theta * theta / g2));
}

double cell_area(const VertexState& s, size_t i) {
  auto v = s.cell_vertices(i);
  double a = 0.0;
  for (size_t k = 0; k < 4; ++k) {
    size_t u = v[k], w = v[(k + 1) % 4];
    a += s.x(u) * s.y(w) - s.x(w) * s.y(u);
  }
  return 0.5 * a;
}

double yolk_area(const VertexState& s) {
  size_t n = s.n_cells;
  double a = 0.0;
  for (size_t i = 0; i < n; ++i) {
    size_t u = s.basal(i), w = s.basal(i + 1);
    a += s.x(u) * s.y(w) - s.x(w) * s.y(u);
  }
  return 0.5 * a;
}

EnergyBreakdown energy_breakdown(const VertexState& s, const MechParams& p) {
  s.validate();
  p.validate();
  size_t n = s.n_cells;
  EnergyBreakdown e;
  double sigma_b = p.f_basal * p.sigma_b0;
  for (size_t i = 0; i < n; ++i) {
    size_t a0 = s.apical(i), a1 = s.apical(i + 1);
    size_t b0 = s.basal(i), b1 = s.basal(i + 1);
    double la = norm2(s.x(a1) - s.x(a0), s.y(a1) - s.y(a0));
    double mx = 0.5 * (s.x(a0) + s.x(a1)), my = 0.5 * (s.y(a0) + s.y(a1));
    double theta = wrap_angle(std::atan2(my, mx));
    e.apical += apical_tension(theta, p) * la;
    e.basal += sigma_b * norm2(s.x(b1) - s.x(b0), s.y(b1) - s.y(b0));
    e.lateral += p.sigma_l * norm2(s.x(a0) - s.x(b0), s.y(a0) - s.y(b0));
    double da = cell_area(s, i) - p.A_c0;
    e.cell_area += p.B * da * da;
  }
  double dy = yolk_area(s) - p.A_Y0;
  e.yolk = p.B_Y * dy * dy;
  if (p.eps_mem > 0.0) {
    for (size_t i = 0; i < n; ++i) {
      double r = norm2(s.x(i), s.y(i));
      double gap = p.R_c - r;
      if (gap <= 0.0) {
        e.membrane = std::numeric_limits<double>::infinity();
        return e;
      }
      e.membrane += p.eps_mem / std::pow(gap, p.n_rep);
    }
  }
  return e;
}

double energy(const VertexState& s, const MechParams& p) { return energy_breakdown(s, p).total(); }

std::vector<double> forces(const VertexState& s, const MechParams& p) {
  s.validate();
  p.validate();
  size_t n = s.n_cells;
  std::vector<double> grad(2 * s.n_vertices(), 0.0);
  auto add = [&](size_t v, double gx, double gy) {
    grad[2 * v] += gx;
    grad[2 * v + 1] += gy;
  };
  double sigma_b = p.f_basal * p.sigma_b0;

  for (size_t i = 0; i < n; ++i) {
    size_t a0 = s.apical(i), a1 = s.apical(i + 1);
    size_t b0 = s.basal(i), b1 = s.basal(i + 1);

    // apical edge, position-dependent tension through the midpoint angle
    {
      double ex = s.x(a1) - s.x(a0), ey = s.y(a1) - s.y(a0);
      double len = norm2(ex, ey);
      double mx = 0.5 * (s.x(a0) + s.x(a1)), my = 0.5 * (s.y(a0) + s.y(a1));
      double theta = wrap_angle(std::atan2(my, mx));
      double sig = apical_tension(theta, p);
      if (len > 0.0) {
        add(a0, -sig * ex / len, -sig * ey / len);
        add(a1, sig * ex / len, sig * ey / len);
      }
      double dsig = apical_tension_dtheta(theta, p);
      if (dsig != 0.0) {
        double m2 = mx * mx + my * my;
        if (m2 > 0.0) {
          // dtheta/dm = (-my, mx)/|m|^2; dm/da = I/2 for both endpoints
          double cx = dsig * len * (-my / m2) * 0.5;
          double cy = dsig * len * (mx / m2) * 0.5;
          add(a0, cx, cy);
          add(a1, cx, cy);
        }
      }
    }
    // basal edge
    {
      double ex = s.x(b1) - s.x(b0), ey = s.y(b1) - s.y(b0);
      double len = norm2(ex, ey);
      if (len > 0.0) {
        add(b0, -sigma_b * ex / len, -sigma_b * ey / len);
        add(b1, sigma_b * ex / len, sigma_b * ey / len);
      }
    }
    // lateral edge i (belongs to the shared boundary; summed once)
    {
      double ex = s.x(a0) - s.x(b0), ey = s.y(a0) - s.y(b0);
      double len = norm2(ex, ey);
      if (len > 0.0) {
        add(a0, p.sigma_l * ex / len, p.sigma_l * ey / len);
        add(b0, -p.sigma_l * ex / len, -p.sigma_l * ey / len);
      }
    }
    // cell area penalty via shoelace derivatives
    {
      auto v = s.cell_vertices(i);
      double coeff = 2.0 * p.B * (cell_area(s, i) - p.A_c0);
      for (size_t k = 0; k < 4; ++k) {
        size_t prev = v[(k + 3) % 4], cur = v[k], next = v[(k + 1) % 4];
        add(cur, coeff * 0.5 * (s.y(next) - s.y(prev)), coeff * 0.5 * (s.x(prev) - s.x(next)));
      }
    }
  }
  // yolk area (basal polygon)
  {
    double coeff = 2.0 * p.B_Y * (yolk_area(s) - p.A_Y0);
    for (size_t i = 0; i < n; ++i) {
      size_t prev = s.basal(i + n - 1), cur = s.basal(i), next = s.basal(i + 1);
      add(cur, coeff * 0.5 * (s.y(next) - s.y(prev)), coeff * 0.5 * (s.x(prev) - s.x(next)));
    }
  }
  // membrane on apical vertices
  if (p.eps_mem > 0.0) {
    for (size_t i = 0; i < n; ++i) {
      double r = norm2(s.x(i), s.y(i));
      double gap = p.R_c - r;
      if (gap <= 0.0) throw NumericalError("forces: apical vertex at or beyond the membrane");
      if (r > 0.0) {
        double c = p.eps_mem * static_cast<double>(p.n_rep) /
                   std::pow(gap, p.n_rep + 1);
        add(i, c * s.x(i) / r, c * s.y(i) / r);
      }
    }
  }
  for (double& g : grad) g = -g;
  return grad;
}

std::vector<double> forces_fd(const VertexState& s, const MechParams& p, double h) {
  std::vector<double> f(2 * s.n_vertices(), 0.0);
  VertexState w = s;
  for (size_t i = 0; i < w.positions.size(); ++i) {
    double orig = w.positions[i];
    w.positions[i] = orig + h;
    double ep = energy(w, p);
    w.positions[i] = orig - h;
    double em = energy(w, p);
    w.positions[i] = orig;
    f[i] = -(ep - em) / (2.0 * h);
  }
  return f;
}

StepResult step(const VertexState& s, const MechParams& p) {
  double e0 = energy(s, p);
  if (!std::isfinite(e0)) throw NumericalError("step: starting energy is not finite");
  std::vector<double> f = forces(s, p);
  double dt = p.dt;
  for (int attempt = 0; attempt < 10; ++attempt) {
    VertexState next = s;
    for (size_t i = 0; i < next.positions.size(); ++i)
      next.positions[i] += dt / p.eta * f[i];
    bool penetrated = false;
    if (p.eps_mem > 0.0) {
      for (size_t i = 0; i < next.n_cells; ++i) {
        if (norm2(next.x(i), next.y(i)) >= p.R_c) {
          penetrated = true;
          break;
        }
      }
    }
    if (!penetrated) return {std::move(next), dt};
    dt *= 0.5;
  }
  throw NumericalError("step: membrane penetration persisted after 10 dt halvings");
}

RelaxResult relax(const VertexState& s, const MechParams& p, double tol, size_t max_iters) {
  VertexState cur = s;
  MechParams pp = p;
  double e = energy(cur, pp);
  RelaxResult out;
  for (out.iterations = 0; out.iterations < max_iters; ++out.iterations) {
    std::vector<double> f = forces(cur, pp);
    double fmax = 0.0;
    for (size_t v = 0; v < cur.n_vertices(); ++v)
      fmax = std::max(fmax, norm2(f[2 * v], f[2 * v + 1]));
    out.max_force = fmax;
    if (fmax <= tol) break;
    StepResult st = step(cur, pp);
    double en = energy(st.state, pp);
    if (en <= e) {
      cur = std::move(st.state);
      e = en;
      pp.dt = std::min(pp.dt * 1.1, p.dt * 10.0);
    } else {
      pp.dt *= 0.5;
      if (pp.dt < 1e-15 * p.dt)
        throw NumericalError("relax: step size underflow before reaching tolerance");
    }
  }
  out.state = std::move(cur);
  return out;
}

BackboneCurve backbone_curve(const VertexState& s, double sector_lo, double sector_hi) {
  s.validate();
  if (sector_hi <= sector_lo) throw Error("backbone_curve: empty sector");
  size_t n = s.n_cells;
  std::vector<std::pair<double, std::array<double, 2>>> mids;
  for (size_t i = 0; i < n; ++i) {
    double mx = 0.5 * (s.x(s.apical(i)) + s.x(s.basal(i)));
    double my = 0.5 * (s.y(s.apical(i)) + s.y(s.basal(i)));
    double th = std::atan2(my, mx);
    if (th >= sector_lo - 1e-12 && th <= sector_hi + 1e-12) mids.push_back({th, {mx, my}});
  }
  if (mids.empty()) throw Error("backbone_curve: empty sector");
  std::stable_sort(mids.begin(), mids.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  BackboneCurve c;
  c.points.reserve(mids.size());
  for (auto& m : mids) c.points.push_back(m.second);
  c.arclength.resize(c.points.size(), 0.0);
  for (size_t i = 1; i < c.points.size(); ++i)
    c.arclength[i] = c.arclength[i - 1] + norm2(c.points[i][0] - c.points[i - 1][0],
                                                c.points[i][1] - c.points[i - 1][1]);
  c.closed = mids.size() == n && sector_hi - sector_lo >= 2.0 * kPi - 1e-9;
  c.total_length = c.arclength.back();
  if (c.closed && c.points.size() > 2)
    c.total_length += norm2(c.points.front()[0] - c.points.back()[0],
                            c.points.front()[1] - c.points.back()[1]);
  return c;
}

void export_snapshot_csv(const VertexState& s, const std::vector<double>& concentrations,
                         const std::string& path) {
  if (!concentrations.empty() && concentrations.size() != s.n_cells)
    throw Error("export_snapshot_csv: concentration count != cell count");
  std::ofstream os(path);
  if (!os) throw Error("export_snapshot_csv: cannot open " + path);
  os.precision(17);
  os << "section,id,x,y\n";
  for (size_t v = 0; v < s.n_vertices(); ++v)
    os << "vertex," << v << "," << s.x(v) << "," << s.y(v) << "\n";
  os << "section,cell,v0,v1,v2,v3,concentration\n";
  for (size_t i = 0; i < s.n_cells; ++i) {
    auto v = s.cell_vertices(i);
    os << "cell," << i << "," << v[0] << "," << v[1] << "," << v[2] << "," << v[3] << ","
       << (concentrations.empty() ? 0.0 : concentrations[i]) << "\n";
  }
}

std::string render_snapshot_svg(const VertexState& s, const std::vector<double>& concentrations,
                                double scale_max) {
  if (!concentrations.empty() && concentrations.size() != s.n_cells)
    throw Error("render_snapshot_svg: concentration count != cell count");
  double rmax = 0.0;
  for (size_t v = 0; v < s.n_vertices(); ++v)
    rmax = std::max(rmax, std::max(std::fabs(s.x(v)), std::fabs(s.y(v))));
  double span = 2.2 * std::max(rmax, 1e-9);
  double pix = 480.0;
  auto px = [&](double x) { return (x / span + 0.5) * pix; };
  auto py = [&](double y) { return (0.5 - y / span) * pix; };
  std::ostringstream os;
  os.precision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << pix << "\" height=\"" << pix
     << "\" viewBox=\"0 0 " << pix << " " << pix << "\">\n";
  for (size_t i = 0; i < s.n_cells; ++i) {
    double c = concentrations.empty() ? 0.0 : concentrations[i];
    double intensity = scale_max > 0.0 ? std::clamp(c / scale_max, 0.0, 1.0) : 0.0;
    int red = static_cast<int>(std::lround(255.0 * intensity));
    auto v = s.cell_vertices(i);
    os << "<polygon points=\"";
    for (size_t k = 0; k < 4; ++k) {
      if (k) os << " ";
      os << px(s.x(v[k])) << "," << py(s.y(v[k]));
    }
    os << "\" fill=\"rgb(" << red << ",0,0)\" stroke=\"#888888\" stroke-width=\"0.5\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace epde
