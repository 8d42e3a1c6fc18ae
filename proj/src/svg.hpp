#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace tempest::detail {

struct SvgSeries {
  std::string label;
  std::vector<double> y;
  std::string color;
  double width = 1.0;
  bool dashed = false;
};

/// Line plot over log10(x) with an optional vertical marker at x == 1.
void write_line_plot(const std::filesystem::path& path, const std::string& title, const std::string& y_label,
                     const std::vector<double>& x, const std::vector<SvgSeries>& series);

std::string xml_escape(const std::string& s);

}  // namespace tempest::detail
