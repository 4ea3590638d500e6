#include "cleavekit/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace cleave::geo {

std::int64_t Spans::cell_count() const {
  std::int64_t n = 0;
  for (const auto& row : rows) {
    for (const auto& [x0, x1] : row) n += x1 - x0;
  }
  return n;
}

Spans raster_spans(const std::vector<Point>& polygon, int grid) {
  Spans s;
  s.grid = grid;
  s.rows.assign(static_cast<size_t>(grid), {});
  if (polygon.size() < 3) return s;

  double miny = polygon[0].y, maxy = polygon[0].y;
  for (const auto& p : polygon) {
    miny = std::min(miny, p.y);
    maxy = std::max(maxy, p.y);
  }
  int y_lo = std::max(0, static_cast<int>(std::floor(miny - 0.5)));
  int y_hi = std::min(grid - 1, static_cast<int>(std::ceil(maxy)));

  std::vector<double> xs;
  const size_t n = polygon.size();
  for (int y = y_lo; y <= y_hi; ++y) {
    const double yc = y + 0.5;
    xs.clear();
    for (size_t i = 0; i < n; ++i) {
      const Point& p = polygon[i];
      const Point& q = polygon[(i + 1) % n];
      // Half-open edge rule in y avoids double-counting vertices.
      if ((p.y <= yc && q.y > yc) || (q.y <= yc && p.y > yc)) {
        xs.push_back(p.x + (yc - p.y) * (q.x - p.x) / (q.y - p.y));
      }
    }
    if (xs.size() < 2) continue;
    std::sort(xs.begin(), xs.end());
    auto& row = s.rows[static_cast<size_t>(y)];
    for (size_t k = 0; k + 1 < xs.size(); k += 2) {
      // Centers x+0.5 in [a, b).
      int x0 = static_cast<int>(std::ceil(xs[k] - 0.5));
      int x1 = static_cast<int>(std::ceil(xs[k + 1] - 0.5));
      x0 = std::max(x0, 0);
      x1 = std::min(x1, grid);
      if (x1 > x0) row.emplace_back(x0, x1);
    }
  }
  return s;
}

std::int64_t span_intersection_count(const Spans& a, const Spans& b) {
  std::int64_t total = 0;
  const size_t rows = std::min(a.rows.size(), b.rows.size());
  for (size_t y = 0; y < rows; ++y) {
    const auto& ra = a.rows[y];
    const auto& rb = b.rows[y];
    size_t i = 0, j = 0;
    while (i < ra.size() && j < rb.size()) {
      int lo = std::max(ra[i].first, rb[j].first);
      int hi = std::min(ra[i].second, rb[j].second);
      if (hi > lo) total += hi - lo;
      if (ra[i].second < rb[j].second) {
        ++i;
      } else {
        ++j;
      }
    }
  }
  return total;
}

CentralMoments raster_moments(const Spans& s) {
  // Two passes keep the odd moments of symmetric rasters at exact zero:
  // the centered cell offsets of mirrored cell pairs negate bit-exactly.
  double n = 0, sx = 0, sy = 0;
  for (size_t y = 0; y < s.rows.size(); ++y) {
    const double yc = static_cast<double>(y) + 0.5;
    for (const auto& [x0, x1] : s.rows[y]) {
      const double cnt = x1 - x0;
      n += cnt;
      sx += cnt * (x0 + x1) * 0.5;  // mean of centers in the span
      sy += cnt * yc;
    }
  }
  CentralMoments m;
  if (n <= 0) return m;
  m.mu00 = n;
  m.cx = sx / n;
  m.cy = sy / n;
  for (size_t y = 0; y < s.rows.size(); ++y) {
    const double dy = (static_cast<double>(y) + 0.5) - m.cy;
    const double dy2 = dy * dy, dy3 = dy2 * dy;
    for (const auto& [x0, x1] : s.rows[y]) {
      for (int x = x0; x < x1; ++x) {
        const double dx = (static_cast<double>(x) + 0.5) - m.cx;
        const double dx2 = dx * dx;
        m.mu20 += dx2;
        m.mu11 += dx * dy;
        m.mu02 += dy2;
        m.mu30 += dx2 * dx;
        m.mu21 += dx2 * dy;
        m.mu12 += dx * dy2;
        m.mu03 += dy3;
      }
    }
  }
  return m;
}

std::array<double, 7> hu_from_central(const CentralMoments& m) {
  const double n2 = m.mu00 * m.mu00;
  const double n3 = n2 * std::sqrt(m.mu00);
  const double e20 = m.mu20 / n2, e11 = m.mu11 / n2, e02 = m.mu02 / n2;
  const double e30 = m.mu30 / n3, e21 = m.mu21 / n3;
  const double e12 = m.mu12 / n3, e03 = m.mu03 / n3;

  const double a = e30 - 3 * e12;  // used by h3, h5, h7
  const double b = 3 * e21 - e03;
  const double c = e30 + e12;
  const double d = e21 + e03;
  const double c2 = c * c, d2 = d * d;

  std::array<double, 7> h{};
  h[0] = e20 + e02;
  h[1] = (e20 - e02) * (e20 - e02) + 4 * e11 * e11;
  h[2] = a * a + b * b;
  h[3] = c2 + d2;
  h[4] = a * c * (c2 - 3 * d2) + b * d * (3 * c2 - d2);
  h[5] = (e20 - e02) * (c2 - d2) + 4 * e11 * c * d;
  h[6] = b * c * (c2 - 3 * d2) - a * d * (3 * c2 - d2);
  return h;
}

double polygon_area(const std::vector<Point>& polygon) {
  double a = 0;
  const size_t n = polygon.size();
  for (size_t i = 0; i < n; ++i) {
    const Point& p = polygon[i];
    const Point& q = polygon[(i + 1) % n];
    a += p.x * q.y - q.x * p.y;
  }
  return std::abs(a) * 0.5;
}

Point polygon_centroid(const std::vector<Point>& polygon) {
  double a = 0, cx = 0, cy = 0;
  const size_t n = polygon.size();
  for (size_t i = 0; i < n; ++i) {
    const Point& p = polygon[i];
    const Point& q = polygon[(i + 1) % n];
    const double cross = p.x * q.y - q.x * p.y;
    a += cross;
    cx += (p.x + q.x) * cross;
    cy += (p.y + q.y) * cross;
  }
  if (std::abs(a) < 1e-12) return polygon.empty() ? Point{} : polygon[0];
  return {cx / (3 * a), cy / (3 * a)};
}

std::vector<Point> ellipse_polygon(Point center, double rx, double ry,
                                   double angle_rad, int vertices) {
  std::vector<Point> poly;
  poly.reserve(static_cast<size_t>(vertices));
  const double ca = std::cos(angle_rad), sa = std::sin(angle_rad);
  for (int i = 0; i < vertices; ++i) {
    const double t = 2.0 * M_PI * i / vertices;
    const double ex = rx * std::cos(t), ey = ry * std::sin(t);
    poly.push_back({center.x + ex * ca - ey * sa, center.y + ex * sa + ey * ca});
  }
  return poly;
}

}  // namespace cleave::geo
