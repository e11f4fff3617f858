#pragma once

// SVG figures for the command-line tool. Every number is written with a
// fixed precision so identical inputs give byte-identical files.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "mcdu/calibration.hpp"
#include "mcdu/report.hpp"

namespace mcdu::figures {

class Svg {
 public:
  Svg(double width, double height) : width_(width), height_(height) {}

  void line(double x1, double y1, double x2, double y2, const std::string& stroke, double w = 1.0,
            const std::string& dash = {}) {
    body_ += fmt::format(R"(<line x1="{:.3f}" y1="{:.3f}" x2="{:.3f}" y2="{:.3f}" stroke="{}" stroke-width="{:.2f}")", x1,
                         y1, x2, y2, stroke, w);
    if (!dash.empty()) body_ += fmt::format(R"( stroke-dasharray="{}")", dash);
    body_ += "/>\n";
  }

  void rect(double x, double y, double w, double h, const std::string& fill, const std::string& stroke = "none",
            double sw = 1.0) {
    body_ += fmt::format(R"(<rect x="{:.3f}" y="{:.3f}" width="{:.3f}" height="{:.3f}" fill="{}" stroke="{}" stroke-width="{:.2f}"/>)",
                         x, y, w, h, fill, stroke, sw);
    body_ += '\n';
  }

  void circle(double cx, double cy, double r, const std::string& fill) {
    body_ += fmt::format(R"(<circle cx="{:.3f}" cy="{:.3f}" r="{:.2f}" fill="{}"/>)", cx, cy, r, fill);
    body_ += '\n';
  }

  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke, double w = 1.5) {
    body_ += R"(<polyline fill="none" stroke=")" + stroke + fmt::format(R"(" stroke-width="{:.2f}" points=")", w);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i) body_ += ' ';
      body_ += fmt::format("{:.3f},{:.3f}", pts[i].first, pts[i].second);
    }
    body_ += "\"/>\n";
  }

  void text(double x, double y, const std::string& s, const std::string& anchor = "start", int size = 12) {
    body_ += fmt::format(R"(<text x="{:.3f}" y="{:.3f}" font-family="sans-serif" font-size="{}" text-anchor="{}">{}</text>)",
                         x, y, size, anchor, s);
    body_ += '\n';
  }

  std::string str() const {
    return fmt::format(R"(<svg xmlns="http://www.w3.org/2000/svg" width="{:.0f}" height="{:.0f}" viewBox="0 0 {:.0f} {:.0f}">)",
                       width_, height_, width_, height_) +
           "\n" + fmt::format(R"(<rect width="{:.0f}" height="{:.0f}" fill="white"/>)", width_, height_) + "\n" + body_ +
           "</svg>\n";
  }

 private:
  double width_, height_;
  std::string body_;
};

// Maps [lo, hi] onto [a, b].
struct Axis {
  double lo, hi, a, b;
  double operator()(double v) const { return hi == lo ? 0.5 * (a + b) : a + (v - lo) / (hi - lo) * (b - a); }
};

/// Mean box with one-sigma whiskers on each edge and member centers, drawn in
/// image coordinates around the cluster.
inline std::string box_figure(const ClusterReport& r) {
  const auto& s = r.box_stats;
  const auto& m = s.mean_box;
  const auto& e = s.edge_std;
  const double pad = std::max({0.15 * std::max(m.width(), m.height()), 3.0 * *std::max_element(e.begin(), e.end()), 5.0});
  const double x0 = m.x1() - pad, y0 = m.y1() - pad;
  const double span = std::max(m.width(), m.height()) + 2 * pad;
  const double size = 400.0;
  const double k = size / span;
  auto px = [&](double x) { return (x - x0) * k; };
  auto py = [&](double y) { return (y - y0) * k + 20.0; };

  Svg svg(size, size + 20.0);
  svg.text(4, 14, fmt::format("cluster {} (n={}) mean box and edge std", r.cluster_id, r.size));
  svg.rect(px(m.x1()), py(m.y1()), m.width() * k, m.height() * k, "none", "#1f4e9a", 2.0);
  const double cap = 4.0;
  // x edges: horizontal whiskers at the box's vertical middle.
  const double ym = py(m.center_y());
  for (int i : {0, 2}) {
    const double x = i == 0 ? m.x1() : m.x2();
    svg.line(px(x - e[i]), ym, px(x + e[i]), ym, "#1f4e9a", 1.5);
    svg.line(px(x - e[i]), ym - cap, px(x - e[i]), ym + cap, "#1f4e9a", 1.5);
    svg.line(px(x + e[i]), ym - cap, px(x + e[i]), ym + cap, "#1f4e9a", 1.5);
  }
  const double xm = px(m.center_x());
  for (int i : {1, 3}) {
    const double y = i == 1 ? m.y1() : m.y2();
    svg.line(xm, py(y - e[i]), xm, py(y + e[i]), "#1f4e9a", 1.5);
    svg.line(xm - cap, py(y - e[i]), xm + cap, py(y - e[i]), "#1f4e9a", 1.5);
    svg.line(xm - cap, py(y + e[i]), xm + cap, py(y + e[i]), "#1f4e9a", 1.5);
  }
  for (const auto& [cx, cy] : s.centers) svg.circle(px(cx), py(cy), 1.5, "#d62728");
  return svg.str();
}

/// Top classes (background included) as mean dots with one-sigma segments.
inline std::string class_figure(const ClusterReport& r, std::size_t top = 5) {
  const auto& c = r.class_stats;
  const std::size_t n = std::min(top, c.top_classes.size());
  const double w = 80.0 * static_cast<double>(n) + 60.0, h = 300.0;
  const Axis y{0.0, 1.0, h - 40.0, 30.0};
  Svg svg(w, h);
  svg.text(4, 16, fmt::format("cluster {} class scores (mean, std)", r.cluster_id));
  svg.line(40, y(0.0), w - 10, y(0.0), "black");
  svg.line(40, y(0.0), 40, y(1.0), "black");
  for (double t : {0.0, 0.5, 1.0}) svg.text(36, y(t) + 4, fmt::format("{:.1f}", t), "end", 10);
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = c.top_classes[i];
    const double mean = c.mean_scores[cls], sd = c.std_scores[cls];
    const double x = 80.0 + 80.0 * static_cast<double>(i);
    svg.line(x, y(std::max(0.0, mean - sd)), x, y(std::min(1.0, mean + sd)), "#444444", 2.0);
    svg.circle(x, y(mean), 4.0, "#d62728");
    svg.text(x, h - 20, cls == 0 ? std::string("background") : fmt::format("class {}", cls), "middle", 11);
  }
  return svg.str();
}

/// White-to-red heatmap of a row-major field, cropped to its non-zero extent
/// and average-pooled to at most max_cells per side.
inline std::string heatmap_figure(const MaskStats& m, const std::vector<double>& field, double scale,
                                  const std::string& title, int max_cells = 64) {
  int r0 = m.height, r1 = -1, c0 = m.width, c1 = -1;
  for (int r = 0; r < m.height; ++r) {
    for (int c = 0; c < m.width; ++c) {
      if (m.mean_mask[static_cast<std::size_t>(r) * m.width + c] > 0.0) {
        r0 = std::min(r0, r);
        r1 = std::max(r1, r);
        c0 = std::min(c0, c);
        c1 = std::max(c1, c);
      }
    }
  }
  if (r1 < 0) r0 = r1 = c0 = c1 = 0;
  const int rows = r1 - r0 + 1, cols = c1 - c0 + 1;
  const int step = std::max(1, (std::max(rows, cols) + max_cells - 1) / max_cells);
  const int gr = (rows + step - 1) / step, gc = (cols + step - 1) / step;
  const double cell = 320.0 / std::max(gr, gc);
  Svg svg(gc * cell + 20.0, gr * cell + 40.0);
  svg.text(4, 16, title);
  for (int i = 0; i < gr; ++i) {
    for (int j = 0; j < gc; ++j) {
      double sum = 0.0;
      int count = 0;
      for (int r = r0 + i * step; r < std::min(r1 + 1, r0 + (i + 1) * step); ++r) {
        for (int c = c0 + j * step; c < std::min(c1 + 1, c0 + (j + 1) * step); ++c) {
          sum += field[static_cast<std::size_t>(r) * m.width + c];
          ++count;
        }
      }
      const double v = std::clamp(sum / count * scale, 0.0, 1.0);
      const int g = static_cast<int>(std::lround(255.0 * (1.0 - v)));
      svg.rect(10.0 + j * cell, 30.0 + i * cell, cell, cell, fmt::format("rgb(255,{},{})", g, g));
    }
  }
  return svg.str();
}

/// Box and mask IoU densities; thick dashes mark the mean, fine dashes one
/// standard deviation either side.
inline std::string kde_figure(const ClusterReport& r) {
  const double w = 480.0, h = 300.0;
  double lo = 0.0, hi = 1.0, top = 1e-9;
  for (const auto* k : {&r.box_kde, &r.mask_kde}) {
    if (!*k) continue;
    lo = std::min(lo, (*k)->grid.front());
    hi = std::max(hi, (*k)->grid.back());
    top = std::max(top, *std::max_element((*k)->density.begin(), (*k)->density.end()));
  }
  const Axis x{lo, hi, 40.0, w - 10.0};
  const Axis y{0.0, top * 1.05, h - 30.0, 30.0};
  Svg svg(w, h);
  svg.text(4, 16, fmt::format("cluster {} IoU to mean: box (blue), mask (orange)", r.cluster_id));
  svg.line(x(lo), y(0.0), x(hi), y(0.0), "black");
  for (double t : {0.0, 0.5, 1.0}) svg.text(x(t), h - 12, fmt::format("{:.1f}", t), "middle", 10);
  auto curve = [&](const std::optional<KdeCurve>& k, const std::string& colour) {
    if (!k) return;
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < k->grid.size(); ++i) pts.emplace_back(x(k->grid[i]), y(k->density[i]));
    svg.polyline(pts, colour);
    svg.line(x(k->sample_mean), y(0.0), x(k->sample_mean), y(top), colour, 1.5, "8,4");
    for (double s : {-1.0, 1.0}) {
      const double v = k->sample_mean + s * k->sample_std;
      svg.line(x(v), y(0.0), x(v), y(top), colour, 0.8, "2,3");
    }
  };
  curve(r.box_kde, "#1f77b4");
  curve(r.mask_kde, "#ff7f0e");
  if (!r.box_kde && !r.mask_kde) svg.text(w / 2, h / 2, "degenerate samples: no density", "middle");
  return svg.str();
}

/// Accuracy bars per confidence bin over the identity diagonal.
inline std::string reliability_figure(const ReliabilityDiagram& d, const std::string& title) {
  const double size = 360.0;
  const Axis x{0.0, 1.0, 40.0, size - 10.0};
  const Axis y{0.0, 1.0, size - 30.0, 40.0};
  Svg svg(size, size);
  svg.text(4, 16, title);
  svg.line(x(0), y(0), x(1), y(0), "black");
  svg.line(x(0), y(0), x(0), y(1), "black");
  for (const auto& b : d.bins) {
    if (b.count == 0) continue;
    svg.rect(x(b.lo), y(b.accuracy), x(b.hi) - x(b.lo), y(0) - y(b.accuracy), "#1f77b4", "white");
    const double top = std::max(b.accuracy, b.confidence), bottom = std::min(b.accuracy, b.confidence);
    svg.rect(x(b.lo), y(top), x(b.hi) - x(b.lo), y(bottom) - y(top), "rgba(214,39,40,0.35)", "#d62728", 0.5);
  }
  svg.line(x(0), y(0), x(1), y(1), "#555555", 1.0, "4,3");
  for (double t : {0.0, 0.5, 1.0}) {
    svg.text(x(t), size - 14, fmt::format("{:.1f}", t), "middle", 10);
    svg.text(x(0) - 4, y(t) + 4, fmt::format("{:.1f}", t), "end", 10);
  }
  return svg.str();
}

}  // namespace mcdu::figures
