#pragma once

#include <string>
#include <vector>

namespace lcp::cli {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  int width = 720;
  int height = 440;
};

/// Standalone SVG line chart with axes, ticks and a legend. Non-finite
/// points are dropped.
std::string line_plot_svg(const PlotSpec& spec, const std::vector<Series>& series);

}  // namespace lcp::cli
