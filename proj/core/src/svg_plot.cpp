#include "epde/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "epde/common.hpp"

namespace epde {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// compact viridis-like ramp, fixed stops
void colormap(double t, int& r, int& g, int& b) {
  static const double stops[6][3] = {{0.267, 0.005, 0.329}, {0.283, 0.141, 0.458},
                                     {0.254, 0.265, 0.530}, {0.164, 0.471, 0.558},
                                     {0.478, 0.821, 0.318}, {0.993, 0.906, 0.144}};
  t = std::clamp(t, 0.0, 1.0) * 5.0;
  int lo = std::min(4, static_cast<int>(t));
  double w = t - lo;
  r = static_cast<int>(std::lround(255.0 * (stops[lo][0] * (1 - w) + stops[lo + 1][0] * w)));
  g = static_cast<int>(std::lround(255.0 * (stops[lo][1] * (1 - w) + stops[lo + 1][1] * w)));
  b = static_cast<int>(std::lround(255.0 * (stops[lo][2] * (1 - w) + stops[lo + 1][2] * w)));
}

std::string svg_open(double w, double h) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(w) << "\" height=\""
     << fmt(h) << "\" viewBox=\"0 0 " << fmt(w) << " " << fmt(h) << "\">\n";
  return os.str();
}

std::string text_at(double x, double y, const std::string& s, int size = 12) {
  std::ostringstream os;
  os << "<text x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" font-family=\"monospace\" font-size=\""
     << size << "\">" << s << "</text>\n";
  return os.str();
}

}  // namespace

std::string svg_heatmap(const Eigen::MatrixXd& field, const std::string& title,
                        const std::string& x_label, const std::string& y_label) {
  if (field.size() == 0) throw Error("svg_heatmap: empty field");
  double lo = field.minCoeff(), hi = field.maxCoeff();
  double span = hi - lo > 0 ? hi - lo : 1.0;
  const double margin = 40.0, plot = 480.0;
  double cw = plot / static_cast<double>(field.cols());
  double ch = plot / static_cast<double>(field.rows());
  std::ostringstream os;
  os << svg_open(plot + 2 * margin, plot + 2 * margin);
  os << text_at(margin, margin - 16, title);
  os << text_at(margin + plot / 2, plot + 2 * margin - 8, x_label);
  os << text_at(8, margin - 4, y_label);
  for (Eigen::Index i = 0; i < field.rows(); ++i)
    for (Eigen::Index j = 0; j < field.cols(); ++j) {
      int r, g, b;
      colormap((field(i, j) - lo) / span, r, g, b);
      os << "<rect class=\"cell\" x=\"" << fmt(margin + j * cw) << "\" y=\""
         << fmt(margin + i * ch) << "\" width=\"" << fmt(cw + 0.01) << "\" height=\""
         << fmt(ch + 0.01) << "\" fill=\"rgb(" << r << "," << g << "," << b << ")\"/>\n";
    }
  os << "</svg>\n";
  return os.str();
}

std::string svg_scatter(const Eigen::MatrixXd& points, const std::vector<double>& color,
                        const std::string& title, const std::string& color_label) {
  if (points.rows() == 0) throw Error("svg_scatter: no points");
  Eigen::VectorXd xs = points.col(0);
  Eigen::VectorXd ys = points.cols() > 1
                           ? Eigen::VectorXd(points.col(1))
                           : Eigen::VectorXd::LinSpaced(points.rows(), 0, points.rows() - 1);
  double xlo = xs.minCoeff(), xhi = xs.maxCoeff(), ylo = ys.minCoeff(), yhi = ys.maxCoeff();
  double xspan = xhi - xlo > 0 ? xhi - xlo : 1.0, yspan = yhi - ylo > 0 ? yhi - ylo : 1.0;
  double clo = 0, cspan = 1;
  if (!color.empty()) {
    if (color.size() != static_cast<size_t>(points.rows()))
      throw Error("svg_scatter: color column length mismatch");
    clo = *std::min_element(color.begin(), color.end());
    double chi = *std::max_element(color.begin(), color.end());
    cspan = chi - clo > 0 ? chi - clo : 1.0;
  }
  const double margin = 40.0, plot = 480.0;
  std::ostringstream os;
  os << svg_open(plot + 2 * margin, plot + 2 * margin);
  os << text_at(margin, margin - 16, title);
  if (!color_label.empty()) os << text_at(margin + plot - 120, margin - 16, color_label);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    int r = 31, g = 119, b = 180;
    if (!color.empty()) colormap((color[static_cast<size_t>(i)] - clo) / cspan, r, g, b);
    double px = margin + (xs(i) - xlo) / xspan * plot;
    double py = margin + (1.0 - (ys(i) - ylo) / yspan) * plot;
    os << "<circle cx=\"" << fmt(px) << "\" cy=\"" << fmt(py) << "\" r=\"3\" fill=\"rgb(" << r
       << "," << g << "," << b << ")\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string svg_curves(const std::vector<std::vector<double>>& series,
                       const std::vector<std::string>& labels, const std::string& title) {
  if (series.empty()) throw Error("svg_curves: no series");
  double lo = 1e300, hi = -1e300;
  size_t n = 0;
  for (const auto& s : series) {
    n = std::max(n, s.size());
    for (double v : s) {
      double lv = std::log10(std::max(v, 1e-300));
      lo = std::min(lo, lv);
      hi = std::max(hi, lv);
    }
  }
  if (n < 2) throw Error("svg_curves: series too short");
  double span = hi - lo > 0 ? hi - lo : 1.0;
  const double margin = 40.0, plot = 480.0;
  std::ostringstream os;
  os << svg_open(plot + 2 * margin, plot + 2 * margin);
  os << text_at(margin, margin - 16, title + " (log10 scale)");
  static const char* palette[4] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  for (size_t s = 0; s < series.size(); ++s) {
    if (series[s].size() < 2) continue;
    os << "<polyline fill=\"none\" stroke=\"" << palette[s % 4] << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < series[s].size(); ++i) {
      double x = margin + static_cast<double>(i) / static_cast<double>(n - 1) * plot;
      double lv = std::log10(std::max(series[s][i], 1e-300));
      double y = margin + (1.0 - (lv - lo) / span) * plot;
      if (i) os << " ";
      os << fmt(x) << "," << fmt(y);
    }
    os << "\"/>\n";
    if (s < labels.size())
      os << text_at(margin + 8, margin + 16 + 16 * static_cast<double>(s), labels[s]);
  }
  os << "</svg>\n";
  return os.str();
}

std::string svg_table(const std::vector<std::pair<std::string, std::string>>& rows,
                      const std::string& title) {
  const double rowh = 22.0, width = 560.0, margin = 30.0;
  double height = margin * 2 + rowh * static_cast<double>(rows.size() + 1);
  std::ostringstream os;
  os << svg_open(width, height);
  os << text_at(margin, margin, title, 14);
  for (size_t i = 0; i < rows.size(); ++i) {
    double y = margin + rowh * static_cast<double>(i + 1);
    os << text_at(margin, y, rows[i].first);
    os << text_at(margin + 300, y, rows[i].second);
  }
  os << "</svg>\n";
  return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("write_text_file: cannot open " + path);
  os.write(content.data(), static_cast<long>(content.size()));
  if (!os) throw Error("write_text_file: write failed for " + path);
}

}  // namespace epde
