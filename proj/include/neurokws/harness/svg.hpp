#pragma once

// Minimal SVG line charts for the report: axes, a few ticks, one polyline
// with markers per series and a legend.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "neurokws/error.hpp"

namespace nkws::harness {

struct Series {
  std::string name;
  std::vector<double> x, y;
};

struct ChartSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  double width = 640, height = 420;
};

namespace detail {

inline std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace detail

inline std::string svg_line_chart(const ChartSpec& spec, const std::vector<Series>& series) {
  const double left = 70, right = 20, top = 40, bottom = 60;
  const double pw = spec.width - left - right, ph = spec.height - top - bottom;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  const auto tx = [&](double x) { return spec.log_x ? std::log10(x) : x; };
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw DimensionError("series '" + s.name + "' has mismatched x and y");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]) || (spec.log_x && !(s.x[i] > 0))) continue;
      x0 = std::min(x0, tx(s.x[i]));
      x1 = std::max(x1, tx(s.x[i]));
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  y0 = std::min(y0, 0.0);
  const auto px = [&](double x) { return left + (tx(x) - x0) / (x1 - x0) * pw; };
  const auto py = [&](double y) { return top + ph - (y - y0) / (y1 - y0) * ph; };

  static constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\"" << spec.height
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << spec.width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
    << detail::escape_xml(spec.title) << "</text>\n";
  o << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = x0 + (x1 - x0) * i / 4.0, fy = y0 + (y1 - y0) * i / 4.0;
    const double sx = left + pw * i / 4.0, sy = top + ph - ph * i / 4.0;
    const double label_x = spec.log_x ? std::pow(10.0, fx) : fx;
    o << "<text x=\"" << sx << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">" << detail::num(label_x)
      << "</text>\n";
    o << "<text x=\"" << left - 6 << "\" y=\"" << sy + 4 << "\" text-anchor=\"end\">" << detail::num(fy)
      << "</text>\n";
    o << "<line x1=\"" << left << "\" y1=\"" << sy << "\" x2=\"" << left + pw << "\" y2=\"" << sy
      << "\" stroke=\"#ddd\"/>\n";
  }
  o << "<text x=\"" << left + pw / 2 << "\" y=\"" << spec.height - 15 << "\" text-anchor=\"middle\">"
    << detail::escape_xml(spec.x_label) << "</text>\n";
  o << "<text transform=\"translate(18," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << detail::escape_xml(spec.y_label) << "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kColors[k % 6];
    std::ostringstream pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]) || (spec.log_x && !(s.x[i] > 0))) continue;
      pts << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
      o << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << pts.str() << "\"/>\n";
    const double ly = top + 14 + 16 * static_cast<double>(k);
    o << "<rect x=\"" << left + pw - 150 << "\" y=\"" << ly - 9 << "\" width=\"10\" height=\"10\" fill=\"" << color
      << "\"/>\n";
    o << "<text x=\"" << left + pw - 135 << "\" y=\"" << ly << "\">" << detail::escape_xml(s.name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace nkws::harness
