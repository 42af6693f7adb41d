#include "flowscope/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

#include "flowscope/error.hpp"
#include "flowscope/io.hpp"

namespace flowscope {

Extent plot_extent(std::span<const EmbeddingRow> points) {
  if (points.empty()) return {};
  Extent e{points[0].dim1, points[0].dim1, points[0].dim2, points[0].dim2};
  for (const auto& p : points) {
    e.x0 = std::min(e.x0, p.dim1);
    e.x1 = std::max(e.x1, p.dim1);
    e.y0 = std::min(e.y0, p.dim2);
    e.y1 = std::max(e.y1, p.dim2);
  }
  auto pad = [](double& lo, double& hi) {
    if (hi - lo <= 0.0) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double m = 0.05 * (hi - lo);
    lo -= m;
    hi += m;
  };
  pad(e.x0, e.x1);
  pad(e.y0, e.y1);
  return e;
}

Contour mass_contour(std::span<const EmbeddingRow> points, std::string_view cls,
                     const Extent& extent, int grid, double mass, int smooth) {
  if (grid < 1) fail(Errc::InvalidArgument, "grid must be >= 1");
  if (smooth < 0) fail(Errc::InvalidArgument, "smooth must be >= 0");
  if (!(mass > 0.0 && mass <= 1.0)) fail(Errc::InvalidArgument, "mass must be in (0, 1]");
  Contour c;
  c.cls = std::string(cls);
  const auto n = static_cast<std::size_t>(grid);
  std::vector<double> counts(n * n, 0.0);
  const double dx = (extent.x1 - extent.x0) / grid;
  const double dy = (extent.y1 - extent.y0) / grid;
  auto bin = [&](double v, double lo, double step) {
    const auto i = static_cast<long>(std::floor((v - lo) / step));
    return static_cast<std::size_t>(std::clamp<long>(i, 0, grid - 1));
  };
  for (const auto& p : points) {
    if (p.true_label != cls) continue;
    counts[bin(p.dim2, extent.y0, dy) * n + bin(p.dim1, extent.x0, dx)] += 1.0;
    ++c.points;
  }
  if (c.points == 0) return c;

  // Separable box blur, window clipped at the border.
  std::vector<double> density = counts;
  if (smooth > 0) {
    const auto r = static_cast<std::size_t>(smooth);
    std::vector<double> tmp(n * n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t k = i > r ? i - r : 0; k <= std::min(n - 1, i + r); ++k) s += counts[j * n + k];
        tmp[j * n + i] = s;
      }
    }
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t k = j > r ? j - r : 0; k <= std::min(n - 1, j + r); ++k) s += tmp[k * n + i];
        density[j * n + i] = s;
      }
    }
  }

  std::vector<double> sorted;
  double total = 0.0;
  for (double v : density) {
    if (v > 0.0) {
      sorted.push_back(v);
      total += v;
    }
  }
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const double target = mass * total * (1.0 - 1e-12);
  double cum = 0.0;
  double threshold = sorted.back();
  for (double v : sorted) {
    cum += v;
    if (cum >= target) {
      threshold = v;
      break;
    }
  }
  c.threshold = threshold;
  double inside = 0.0;
  auto in = [&](long i, long j) {
    if (i < 0 || j < 0 || i >= grid || j >= grid) return false;
    return density[static_cast<std::size_t>(j) * n + static_cast<std::size_t>(i)] >= threshold;
  };
  for (long j = 0; j < grid; ++j) {
    for (long i = 0; i < grid; ++i) {
      if (!in(i, j)) continue;
      inside += counts[static_cast<std::size_t>(j) * n + static_cast<std::size_t>(i)];
      const double xa = extent.x0 + static_cast<double>(i) * dx, xb = xa + dx;
      const double ya = extent.y0 + static_cast<double>(j) * dy, yb = ya + dy;
      if (!in(i - 1, j)) c.segments.push_back({xa, ya, xa, yb});
      if (!in(i + 1, j)) c.segments.push_back({xb, ya, xb, yb});
      if (!in(i, j - 1)) c.segments.push_back({xa, ya, xb, ya});
      if (!in(i, j + 1)) c.segments.push_back({xa, yb, xb, yb});
    }
  }
  c.enclosed = inside / static_cast<double>(c.points);
  return c;
}

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#ff7f0e", "#2ca02c", "#9467bd",
                                    "#8c564b", "#e377c2", "#bcbd22", "#17becf"};
constexpr double kLeft = 60, kTop = 40, kSize = 560;

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(std::string_view s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

}  // namespace

Plot render_plot(const PlotSpec& spec) {
  Plot plot;
  plot.extent = plot_extent(spec.points);
  const Extent& e = plot.extent;

  std::vector<std::string> classes = spec.classes;
  std::vector<std::string> extra;
  for (const auto& p : spec.points) {
    if (p.true_label.empty()) continue;
    if (std::find(classes.begin(), classes.end(), p.true_label) == classes.end() &&
        std::find(extra.begin(), extra.end(), p.true_label) == extra.end()) {
      extra.push_back(p.true_label);
    }
  }
  std::sort(extra.begin(), extra.end());
  classes.insert(classes.end(), extra.begin(), extra.end());
  auto color = [&](const std::string& cls) -> std::string {
    const auto it = std::find(classes.begin(), classes.end(), cls);
    if (it == classes.end()) return "#7f7f7f";
    const auto i = static_cast<std::size_t>(it - classes.begin());
    return i < std::size(kPalette) ? kPalette[i] : "#7f7f7f";
  };
  auto px = [&](double x) { return fixed(kLeft + (x - e.x0) / (e.x1 - e.x0) * kSize); };
  auto py = [&](double y) { return fixed(kTop + kSize - (y - e.y0) / (e.y1 - e.y0) * kSize); };

  for (const auto& cls : classes) {
    plot.contours.push_back(mass_contour(spec.points, cls, e, spec.grid, spec.mass, spec.smooth));
  }

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"760\" height=\"640\" "
       "viewBox=\"0 0 760 640\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"760\" height=\"640\" fill=\"white\"/>\n";
  s << "<text x=\"" << fixed(kLeft) << "\" y=\"24\" font-size=\"15\">" << escape(spec.title)
    << "</text>\n";
  s << "<rect x=\"" << fixed(kLeft) << "\" y=\"" << fixed(kTop) << "\" width=\"" << fixed(kSize)
    << "\" height=\"" << fixed(kSize) << "\" fill=\"none\" stroke=\"#444\"/>\n";
  const double bottom = kTop + kSize;
  s << "<text x=\"" << fixed(kLeft) << "\" y=\"" << fixed(bottom + 16) << "\">" << fixed(e.x0)
    << "</text>\n";
  s << "<text x=\"" << fixed(kLeft + kSize) << "\" y=\"" << fixed(bottom + 16)
    << "\" text-anchor=\"end\">" << fixed(e.x1) << "</text>\n";
  s << "<text x=\"" << fixed(kLeft + kSize / 2) << "\" y=\"" << fixed(bottom + 32)
    << "\" text-anchor=\"middle\">dim1</text>\n";
  s << "<text x=\"" << fixed(kLeft - 6) << "\" y=\"" << fixed(bottom) << "\" text-anchor=\"end\">"
    << fixed(e.y0) << "</text>\n";
  s << "<text x=\"" << fixed(kLeft - 6) << "\" y=\"" << fixed(kTop + 10)
    << "\" text-anchor=\"end\">" << fixed(e.y1) << "</text>\n";
  s << "<text x=\"20\" y=\"" << fixed(kTop + kSize / 2) << "\" transform=\"rotate(-90 20 "
    << fixed(kTop + kSize / 2) << ")\" text-anchor=\"middle\">dim2</text>\n";

  s << "<g id=\"points\">\n";
  for (const auto& p : spec.points) {
    const std::string fill = p.true_label.empty() ? "#bbbbbb" : color(p.true_label);
    s << "<circle cx=\"" << px(p.dim1) << "\" cy=\"" << py(p.dim2) << "\" r=\"2.5\" fill=\""
      << fill << "\" fill-opacity=\"0.7\"/>\n";
  }
  s << "</g>\n<g id=\"misclassified\">\n";
  for (const auto& p : spec.points) {
    if (p.pred_label.empty() || p.true_label.empty() || p.pred_label == p.true_label) continue;
    s << "<circle cx=\"" << px(p.dim1) << "\" cy=\"" << py(p.dim2)
      << "\" r=\"5\" fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>\n";
  }
  s << "</g>\n<g id=\"contours\" fill=\"none\" stroke-width=\"1.5\">\n";
  for (const auto& c : plot.contours) {
    if (c.segments.empty()) continue;
    s << "<path stroke=\"" << color(c.cls) << "\" d=\"";
    for (const auto& seg : c.segments) {
      s << 'M' << px(seg[0]) << ' ' << py(seg[1]) << 'L' << px(seg[2]) << ' ' << py(seg[3]);
    }
    s << "\"/>\n";
  }
  s << "</g>\n<g id=\"legend\">\n";
  double ly = kTop + 10;
  for (const auto& c : plot.contours) {
    s << "<rect x=\"" << fixed(kLeft + kSize + 16) << "\" y=\"" << fixed(ly - 9)
      << "\" width=\"10\" height=\"10\" fill=\"" << color(c.cls) << "\"/>\n";
    s << "<text x=\"" << fixed(kLeft + kSize + 32) << "\" y=\"" << fixed(ly) << "\">"
      << escape(c.cls) << " (" << c.points << ")</text>\n";
    ly += 18;
  }
  s << "<circle cx=\"" << fixed(kLeft + kSize + 21) << "\" cy=\"" << fixed(ly - 4)
    << "\" r=\"5\" fill=\"none\" stroke=\"black\"/>\n";
  s << "<text x=\"" << fixed(kLeft + kSize + 32) << "\" y=\"" << fixed(ly)
    << "\">misclassified</text>\n";
  s << "</g>\n</svg>\n";
  plot.svg = s.str();
  return plot;
}

std::string contours_csv(std::span<const Contour> contours) {
  std::ostringstream os;
  os << "class,points,threshold,enclosed,x1,y1,x2,y2\n";
  for (const auto& c : contours) {
    for (const auto& seg : c.segments) {
      os << c.cls << ',' << c.points << ',' << io::format_double(c.threshold) << ','
         << io::format_double(c.enclosed) << ',' << io::format_double(seg[0]) << ','
         << io::format_double(seg[1]) << ',' << io::format_double(seg[2]) << ','
         << io::format_double(seg[3]) << '\n';
    }
  }
  return os.str();
}

}  // namespace flowscope
