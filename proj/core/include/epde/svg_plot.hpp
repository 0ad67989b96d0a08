#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace epde {

// Deterministic SVG emitters: same input, byte-identical output. No
// timestamps, no randomness, fixed number formatting.

// Heat map with one rect per matrix cell (rows = vertical axis, drawn top to
// bottom).
std::string svg_heatmap(const Eigen::MatrixXd& field, const std::string& title,
                        const std::string& x_label, const std::string& y_label);

// 2-D scatter of the first two columns (or the only column against index),
// colored by `color` when nonempty.
std::string svg_scatter(const Eigen::MatrixXd& points, const std::vector<double>& color,
                        const std::string& title, const std::string& color_label);

// Loss curves on a log10 y-axis; one polyline per series.
std::string svg_curves(const std::vector<std::vector<double>>& series,
                       const std::vector<std::string>& labels, const std::string& title);

// Simple two-column table.
std::string svg_table(const std::vector<std::pair<std::string, std::string>>& rows,
                      const std::string& title);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace epde
