#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "flowscope/pipeline.hpp"

namespace flowscope {

struct Extent {
  double x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0;
};

/// Bounding box of the points padded by 5% per side (unit box if empty;
/// degenerate spans are widened to 1).
Extent plot_extent(std::span<const EmbeddingRow> points);

/// Region of a grid x grid histogram over `extent`: the highest-density cells
/// holding `mass` of the (optionally box-blurred, radius `smooth` cells)
/// histogram. The outline is the set of cell edges between inside and
/// outside cells.
struct Contour {
  std::string cls;
  std::size_t points = 0;
  double threshold = 0.0;  // minimum (blurred) cell density inside the region
  double enclosed = 0.0;   // fraction of the class's points in region cells
  std::vector<std::array<double, 4>> segments;  // x1, y1, x2, y2
};

Contour mass_contour(std::span<const EmbeddingRow> points, std::string_view cls,
                     const Extent& extent, int grid, double mass, int smooth = 0);

struct PlotSpec {
  std::string title;
  std::vector<EmbeddingRow> points;  // one entity type
  std::vector<std::string> classes;  // legend order and colors
  int grid = 128;
  double mass = 0.9;
  int smooth = 4;
};

struct Plot {
  Extent extent;
  std::vector<Contour> contours;
  std::string svg;
};

/// Points colored by true class, misclassified points ringed, one contour per class.
Plot render_plot(const PlotSpec& spec);

/// class,points,threshold,enclosed,x1,y1,x2,y2 (one row per segment)
std::string contours_csv(std::span<const Contour> contours);

}  // namespace flowscope
