// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace rna::plot {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct LinePlot {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_y = false;
  std::vector<Series> series;
};

/// Standalone SVG document. Non-finite points (and non-positive ones on a
/// log axis) are skipped.
std::string to_svg(const LinePlot& plot, int width = 640, int height = 400);

std::string escape_xml(const std::string& s);

}  // namespace rna::plot
