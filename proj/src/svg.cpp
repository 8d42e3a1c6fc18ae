#include "svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "tempest/errors.hpp"

namespace tempest::detail {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 400.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 20.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 50.0;

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string short_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

void write_line_plot(const std::filesystem::path& path, const std::string& title, const std::string& y_label,
                     const std::vector<double>& x, const std::vector<SvgSeries>& series) {
  std::vector<double> lx;
  for (double v : x) lx.push_back(std::log10(v));
  double x_lo = lx.empty() ? 0.0 : *std::min_element(lx.begin(), lx.end());
  double x_hi = lx.empty() ? 1.0 : *std::max_element(lx.begin(), lx.end());
  if (x_hi <= x_lo) {
    x_lo -= 0.5;
    x_hi += 0.5;
  }
  double y_lo = std::numeric_limits<double>::infinity();
  double y_hi = -std::numeric_limits<double>::infinity();
  for (const auto& s : series)
    for (double v : s.y)
      if (std::isfinite(v)) {
        y_lo = std::min(y_lo, v);
        y_hi = std::max(y_hi, v);
      }
  if (!std::isfinite(y_lo)) {
    y_lo = 0.0;
    y_hi = 1.0;
  }
  if (y_hi <= y_lo) {
    y_lo -= 0.5;
    y_hi += 0.5;
  }
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  auto px = [&](double v) { return kLeft + (v - x_lo) / (x_hi - x_lo) * pw; };
  auto py = [&](double v) { return kTop + (1.0 - (v - y_lo) / (y_hi - y_lo)) * ph; };

  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
  os << "  <rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";
  os << "  <text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << xml_escape(title)
     << "</text>\n";
  os << "  <rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  os << "  <text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 12
     << "\" text-anchor=\"middle\" font-size=\"12\">log10(lambda)</text>\n";
  os << "  <text x=\"16\" y=\"" << kTop + ph / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
     << kTop + ph / 2 << ")\">" << xml_escape(y_label) << "</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const double yv = y_lo + (y_hi - y_lo) * t / 4.0;
    os << "  <text x=\"" << kLeft - 6 << "\" y=\"" << fixed2(py(yv) + 4) << "\" text-anchor=\"end\" font-size=\"10\">"
       << short_num(yv) << "</text>\n";
    const double xv = x_lo + (x_hi - x_lo) * t / 4.0;
    os << "  <text x=\"" << fixed2(px(xv)) << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\" font-size=\"10\">"
       << short_num(xv) << "</text>\n";
  }
  if (x_lo <= 0.0 && 0.0 <= x_hi) {
    os << "  <line class=\"lambda-one\" x1=\"" << fixed2(px(0.0)) << "\" y1=\"" << kTop << "\" x2=\"" << fixed2(px(0.0))
       << "\" y2=\"" << kTop + ph << "\" stroke=\"#1f4fd8\" stroke-dasharray=\"2,3\"/>\n";
  }
  int legend = 0;
  for (const auto& s : series) {
    os << "  <polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"" << s.width << "\"";
    if (s.dashed) os << " stroke-dasharray=\"6,4\"";
    os << " points=\"";
    bool first = true;
    for (std::size_t i = 0; i < s.y.size() && i < lx.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      if (!first) os << ' ';
      os << fixed2(px(lx[i])) << ',' << fixed2(py(s.y[i]));
      first = false;
    }
    os << "\"><title>" << xml_escape(s.label) << "</title></polyline>\n";
    if (s.width > 1.0) {
      os << "  <text x=\"" << kLeft + 8 << "\" y=\"" << kTop + 14 + 14 * legend << "\" font-size=\"11\" fill=\""
         << s.color << "\">" << xml_escape(s.label) << "</text>\n";
      ++legend;
    }
  }
  os << "</svg>\n";
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace tempest::detail
