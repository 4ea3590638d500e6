#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "cleavekit/core.hpp"

namespace cleave::geo {

/// Scanline rasterization of a simple polygon onto a square pixel grid.
/// A cell (x, y) is covered when its center (x+0.5, y+0.5) lies inside the
/// polygon (even-odd rule). Rows store half-open [x0, x1) spans.
struct Spans {
  int grid = 0;
  std::vector<std::vector<std::pair<int, int>>> rows;  // rows[y]

  std::int64_t cell_count() const;
};

Spans raster_spans(const std::vector<Point>& polygon, int grid);

std::int64_t span_intersection_count(const Spans& a, const Spans& b);

/// Central raster moments up to order 3 plus the centroid, taken over the
/// covered cell centers.
struct CentralMoments {
  double mu00 = 0;
  double mu20 = 0, mu11 = 0, mu02 = 0;
  double mu30 = 0, mu21 = 0, mu12 = 0, mu03 = 0;
  double cx = 0, cy = 0;
};

CentralMoments raster_moments(const Spans& s);

/// The seven rotation invariants from scale-normalized central moments.
std::array<double, 7> hu_from_central(const CentralMoments& m);

double polygon_area(const std::vector<Point>& polygon);  // shoelace, unsigned
Point polygon_centroid(const std::vector<Point>& polygon);

std::vector<Point> ellipse_polygon(Point center, double rx, double ry,
                                   double angle_rad, int vertices = 32);

}  // namespace cleave::geo
