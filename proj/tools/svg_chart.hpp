// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal static SVG charts for run outputs.

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lpdt::tools {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct Panel {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
};

struct Extent {
  double lo = 0.0;
  double hi = 0.0;
};

/// Smallest interval holding every finite value of the selected coordinate.
Extent x_extent(const Panel& panel);
Extent y_extent(const Panel& panel);

/// Stacked line panels sharing one legend. Each panel's <g> carries its data
/// extents as data-x-min/data-x-max/data-y-min/data-y-max attributes.
void write_line_chart(const std::vector<Panel>& panels, std::ostream& out);

/// One stacked bar per row of `counts`; segments follow `segment_labels`.
void write_stacked_bars(const std::string& title, const std::vector<std::string>& bar_labels,
                        const std::vector<std::string>& segment_labels,
                        const std::vector<std::vector<double>>& counts, std::ostream& out);

}  // namespace lpdt::tools
