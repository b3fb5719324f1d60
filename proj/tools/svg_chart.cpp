// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0

#include "svg_chart.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

namespace lpdt::tools {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
constexpr int kPaletteSize = static_cast<int>(sizeof(kPalette) / sizeof(kPalette[0]));

constexpr double kWidth = 800.0;
constexpr double kPanelHeight = 280.0;
constexpr double kLeft = 80.0, kRight = 180.0, kTop = 40.0, kBottom = 50.0;

std::string num(double v, const char* fmt = "%.2f") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

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

Extent extent(const Panel& panel, bool use_x) {
  Extent e{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const auto& s : panel.series) {
    for (double v : use_x ? s.x : s.y) {
      if (!std::isfinite(v)) continue;
      e.lo = std::min(e.lo, v);
      e.hi = std::max(e.hi, v);
    }
  }
  if (e.lo > e.hi) return {0.0, 0.0};
  return e;
}

// Maps [lo, hi] onto [a, b]; a degenerate range maps to the middle.
double scale(double v, Extent e, double a, double b) {
  if (e.hi == e.lo) return 0.5 * (a + b);
  return a + (v - e.lo) / (e.hi - e.lo) * (b - a);
}

void write_header(std::ostream& out, double height) {
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(kWidth, "%.0f") << "\" height=\""
      << num(height, "%.0f") << "\" viewBox=\"0 0 " << num(kWidth, "%.0f") << ' ' << num(height, "%.0f")
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

void write_axes(std::ostream& out, double top, Extent xe, Extent ye, const std::string& x_label,
                const std::string& y_label) {
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = top + kPanelHeight - kBottom, y1 = top + kTop;
  out << "<line x1=\"" << num(x0) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(x1) << "\" y2=\"" << num(y0)
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << num(x0) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(x0) << "\" y2=\"" << num(y1)
      << "\" stroke=\"black\"/>\n";
  constexpr int kTicks = 5;
  for (int t = 0; t <= kTicks; ++t) {
    const double f = static_cast<double>(t) / kTicks;
    const double xv = xe.lo + f * (xe.hi - xe.lo), yv = ye.lo + f * (ye.hi - ye.lo);
    const double px = x0 + f * (x1 - x0), py = y0 + f * (y1 - y0);
    out << "<line x1=\"" << num(px) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(px) << "\" y2=\""
        << num(y0 + 5) << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << num(px) << "\" y=\"" << num(y0 + 18) << "\" text-anchor=\"middle\">"
        << num(xv, "%.4g") << "</text>\n";
    out << "<line x1=\"" << num(x0 - 5) << "\" y1=\"" << num(py) << "\" x2=\"" << num(x0) << "\" y2=\""
        << num(py) << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << num(x0 - 8) << "\" y=\"" << num(py + 4) << "\" text-anchor=\"end\">"
        << num(yv, "%.4g") << "</text>\n";
  }
  out << "<text x=\"" << num(0.5 * (x0 + x1)) << "\" y=\"" << num(y0 + 38) << "\" text-anchor=\"middle\">"
      << escape(x_label) << "</text>\n";
  out << "<text transform=\"translate(" << num(18) << ',' << num(0.5 * (y0 + y1))
      << ") rotate(-90)\" text-anchor=\"middle\">" << escape(y_label) << "</text>\n";
}

void write_legend(std::ostream& out, double top, const std::vector<std::string>& labels) {
  const double x = kWidth - kRight + 20;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double y = top + kTop + 18.0 * static_cast<double>(i);
    out << "<rect x=\"" << num(x) << "\" y=\"" << num(y - 9) << "\" width=\"12\" height=\"12\" fill=\""
        << kPalette[static_cast<int>(i) % kPaletteSize] << "\"/>\n";
    out << "<text x=\"" << num(x + 18) << "\" y=\"" << num(y + 2) << "\">" << escape(labels[i]) << "</text>\n";
  }
}

}  // namespace

Extent x_extent(const Panel& panel) { return extent(panel, true); }
Extent y_extent(const Panel& panel) { return extent(panel, false); }

void write_line_chart(const std::vector<Panel>& panels, std::ostream& out) {
  write_header(out, kPanelHeight * static_cast<double>(panels.size()));
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const auto& panel = panels[p];
    const double top = kPanelHeight * static_cast<double>(p);
    const Extent xe = x_extent(panel), ye = y_extent(panel);
    out << "<g class=\"panel\" data-x-min=\"" << num(xe.lo, "%.17g") << "\" data-x-max=\"" << num(xe.hi, "%.17g")
        << "\" data-y-min=\"" << num(ye.lo, "%.17g") << "\" data-y-max=\"" << num(ye.hi, "%.17g") << "\">\n";
    out << "<text x=\"" << num(kLeft) << "\" y=\"" << num(top + 24) << "\" font-size=\"14\">" << escape(panel.title)
        << "</text>\n";
    write_axes(out, top, xe, ye, panel.x_label, panel.y_label);
    const double x0 = kLeft, x1 = kWidth - kRight, y0 = top + kPanelHeight - kBottom, y1 = top + kTop;
    std::vector<std::string> labels;
    for (std::size_t s = 0; s < panel.series.size(); ++s) {
      const auto& series = panel.series[s];
      labels.push_back(series.label);
      out << "<polyline class=\"series\" data-label=\"" << escape(series.label) << "\" fill=\"none\" stroke=\""
          << kPalette[static_cast<int>(s) % kPaletteSize] << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < series.x.size(); ++i) {
        if (!std::isfinite(series.x[i]) || !std::isfinite(series.y[i])) continue;
        out << (i ? " " : "") << num(scale(series.x[i], xe, x0, x1)) << ','
            << num(scale(series.y[i], ye, y0, y1));
      }
      out << "\"/>\n";
    }
    write_legend(out, top, labels);
    out << "</g>\n";
  }
  out << "</svg>\n";
}

void write_stacked_bars(const std::string& title, const std::vector<std::string>& bar_labels,
                        const std::vector<std::string>& segment_labels,
                        const std::vector<std::vector<double>>& counts, std::ostream& out) {
  write_header(out, kPanelHeight);
  double peak = 0.0;
  for (const auto& row : counts) {
    double total = 0.0;
    for (double v : row) total += v;
    peak = std::max(peak, total);
  }
  const Extent ye{0.0, peak};
  const Extent xe{0.0, static_cast<double>(bar_labels.size())};
  out << "<text x=\"" << num(kLeft) << "\" y=\"24\" font-size=\"14\">" << escape(title) << "</text>\n";
  write_axes(out, 0.0, xe, ye, "node", "samples");
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kPanelHeight - kBottom, y1 = kTop;
  const double slot = (x1 - x0) / std::max<double>(1.0, static_cast<double>(bar_labels.size()));
  for (std::size_t b = 0; b < counts.size(); ++b) {
    double acc = 0.0;
    for (std::size_t s = 0; s < counts[b].size(); ++s) {
      const double lo = scale(acc, ye, y0, y1);
      acc += counts[b][s];
      const double hi = scale(acc, ye, y0, y1);
      out << "<rect x=\"" << num(x0 + slot * (static_cast<double>(b) + 0.15)) << "\" y=\"" << num(hi)
          << "\" width=\"" << num(slot * 0.7) << "\" height=\"" << num(lo - hi) << "\" fill=\""
          << kPalette[static_cast<int>(s) % kPaletteSize] << "\"/>\n";
    }
    out << "<text x=\"" << num(x0 + slot * (static_cast<double>(b) + 0.5)) << "\" y=\"" << num(y1 - 6)
        << "\" text-anchor=\"middle\" font-size=\"10\">" << escape(bar_labels[b]) << "</text>\n";
  }
  write_legend(out, 0.0, segment_labels);
  out << "</svg>\n";
}

}  // namespace lpdt::tools
