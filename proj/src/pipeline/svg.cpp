#include "dhi/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace dhi::pipeline {

namespace {

constexpr double kWidth = 800.0;
constexpr double kHeight = 480.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 160.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 55.0;

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!std::isfinite(lo)) {
      lo = 0.0;
      hi = 1.0;
    }
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
  }
};

double nice_step(double span) {
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double f = raw / mag;
  return (f < 1.5 ? 1.0 : f < 3.5 ? 2.0 : f < 7.5 ? 5.0 : 10.0) * mag;
}

}  // namespace

std::string render_svg(const PlotSpec& spec) {
  auto ty = [&](double v) { return spec.log_y ? (v > 0.0 ? std::log10(v) : std::nan("")) : v; };
  Range xr;
  Range yr;
  for (const auto& s : spec.series) {
    for (double v : s.x) xr.add(v);
    for (double v : s.y) yr.add(ty(v));
  }
  for (double v : spec.vertical_markers) xr.add(v);
  for (double v : spec.horizontal_markers) yr.add(ty(v));
  xr.finish();
  yr.finish();
  const double pad = 0.05 * (yr.hi - yr.lo);
  yr.lo -= pad;
  yr.hi += pad;

  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
  auto py = [&](double y) { return kTop + (1.0 - (y - yr.lo) / (yr.hi - yr.lo)) * ph; };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"480\" viewBox=\"0 0 800 480\" "
         "font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect x=\"0\" y=\"0\" width=\"800\" height=\"480\" fill=\"white\"/>\n";
  svg += "<text x=\"" + fmt("%.1f", kLeft + pw / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" +
         escape(spec.title) + "</text>\n";

  const double xs = nice_step(xr.hi - xr.lo);
  for (double t = std::ceil(xr.lo / xs) * xs; t <= xr.hi + 1e-9 * xs; t += xs) {
    const std::string x = fmt("%.2f", px(t));
    svg += "<line class=\"marker-vertical\" x1=\"" + x + "\" y1=\"" + fmt("%.2f", kTop) + "\" x2=\"" + x + "\" y2=\"" +
           fmt("%.2f", kTop + ph) + "\" stroke=\"#e6e6e6\"/>\n";
    svg += "<text x=\"" + x + "\" y=\"" + fmt("%.2f", kTop + ph + 18) + "\" text-anchor=\"middle\">" +
           fmt("%g", std::abs(t) < 1e-12 ? 0.0 : t) + "</text>\n";
  }
  const double ys = nice_step(yr.hi - yr.lo);
  for (double t = std::ceil(yr.lo / ys) * ys; t <= yr.hi + 1e-9 * ys; t += ys) {
    const std::string y = fmt("%.2f", py(t));
    const double label = std::abs(t) < 1e-12 ? 0.0 : t;
    svg += "<line class=\"marker-horizontal\" x1=\"" + fmt("%.2f", kLeft) + "\" y1=\"" + y + "\" x2=\"" + fmt("%.2f", kLeft + pw) +
           "\" y2=\"" + y + "\" stroke=\"#e6e6e6\"/>\n";
    svg += "<text x=\"" + fmt("%.2f", kLeft - 6) + "\" y=\"" + y + "\" text-anchor=\"end\" dy=\"4\">" +
           (spec.log_y ? "1e" + fmt("%g", label) : fmt("%g", label)) + "</text>\n";
  }
  svg += "<rect x=\"" + fmt("%.2f", kLeft) + "\" y=\"" + fmt("%.2f", kTop) + "\" width=\"" + fmt("%.2f", pw) +
         "\" height=\"" + fmt("%.2f", ph) + "\" fill=\"none\" stroke=\"#333\"/>\n";
  svg += "<text x=\"" + fmt("%.1f", kLeft + pw / 2) + "\" y=\"" + fmt("%.1f", kHeight - 12) +
         "\" text-anchor=\"middle\">" + escape(spec.x_label) + "</text>\n";
  svg += "<text transform=\"translate(18 " + fmt("%.1f", kTop + ph / 2) +
         ") rotate(-90)\" text-anchor=\"middle\">" + escape(spec.y_label) + "</text>\n";

  for (double v : spec.vertical_markers) {
    const std::string x = fmt("%.2f", px(v));
    svg += "<line class=\"marker-vertical\" x1=\"" + x + "\" y1=\"" + fmt("%.2f", kTop) + "\" x2=\"" + x + "\" y2=\"" +
           fmt("%.2f", kTop + ph) + "\" stroke=\"#555\" stroke-dasharray=\"6 4\"/>\n";
  }
  for (double v : spec.horizontal_markers) {
    const std::string y = fmt("%.2f", py(ty(v)));
    svg += "<line class=\"marker-horizontal\" x1=\"" + fmt("%.2f", kLeft) + "\" y1=\"" + y + "\" x2=\"" + fmt("%.2f", kLeft + pw) +
           "\" y2=\"" + y + "\" stroke=\"#c0392b\" stroke-dasharray=\"6 4\"/>\n";
  }

  double legend_y = kTop + 10;
  for (const auto& s : spec.series) {
    std::string points;
    const std::size_t n = std::min(s.x.size(), s.y.size());
    for (std::size_t i = 0; i < n; ++i) {
      const double y = ty(s.y[i]);
      if (!std::isfinite(s.x[i]) || !std::isfinite(y)) continue;
      if (!points.empty()) points += ' ';
      points += fmt("%.2f", px(s.x[i])) + "," + fmt("%.2f", py(y));
    }
    svg += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"1.5\"" +
           (s.dashed ? std::string(" stroke-dasharray=\"5 3\"") : std::string()) + " points=\"" + points +
           "\"/>\n";
    const std::string lx = fmt("%.2f", kLeft + pw + 12);
    svg += "<line x1=\"" + lx + "\" y1=\"" + fmt("%.2f", legend_y) + "\" x2=\"" +
           fmt("%.2f", kLeft + pw + 36) + "\" y2=\"" + fmt("%.2f", legend_y) + "\" stroke=\"" + s.color +
           "\" stroke-width=\"2\"" + (s.dashed ? std::string(" stroke-dasharray=\"5 3\"") : std::string()) +
           "/>\n";
    svg += "<text x=\"" + fmt("%.2f", kLeft + pw + 42) + "\" y=\"" + fmt("%.2f", legend_y + 4) + "\">" +
           escape(s.label) + "</text>\n";
    legend_y += 18;
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace dhi::pipeline
