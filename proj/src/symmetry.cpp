#include "cleavekit/symmetry.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <sstream>

#include "cleavekit/geometry.hpp"

namespace cleave::sym {

double size_symmetry(const std::vector<double>& areas) {
  if (areas.size() < 2) {
    throw DegenerateCohort("size symmetry needs at least two areas");
  }
  double mean = 0;
  for (double a : areas) {
    if (!(a > 0)) throw ValidationError("areas must be positive");
    mean += a;
  }
  mean /= static_cast<double>(areas.size());
  double var = 0;
  for (double a : areas) var += (a - mean) * (a - mean);
  var /= static_cast<double>(areas.size());
  const double cv = std::sqrt(var) / mean;
  return 100.0 / (1.0 + cv);
}

std::array<double, 7> hu_invariants(const MaskRegion& mask, int grid) {
  geo::Spans spans = geo::raster_spans(mask.contour, grid);
  if (spans.cell_count() == 0) {
    throw ZeroArea("mask rasterizes to an empty region");
  }
  return geo::hu_from_central(geo::raster_moments(spans));
}

namespace {
constexpr double kHuEps = 1e-30;

double shape_distance_hu(const std::array<double, 7>& ha,
                         const std::array<double, 7>& hb) {
  double d = 0;
  for (int i = 0; i < 7; ++i) {
    const double aa = std::abs(ha[static_cast<size_t>(i)]);
    const double ab = std::abs(hb[static_cast<size_t>(i)]);
    if (aa < kHuEps || ab < kHuEps) continue;
    const double ma = (ha[static_cast<size_t>(i)] > 0 ? 1.0 : -1.0) * std::log10(aa);
    const double mb = (hb[static_cast<size_t>(i)] > 0 ? 1.0 : -1.0) * std::log10(ab);
    d += std::abs(1.0 / ma - 1.0 / mb);
  }
  return d;
}
}  // namespace

double shape_distance(const MaskRegion& a, const MaskRegion& b, int grid) {
  return shape_distance_hu(hu_invariants(a, grid), hu_invariants(b, grid));
}

double contour_symmetry(const std::vector<MaskRegion>& masks, int grid) {
  if (masks.size() < 2) {
    throw DegenerateCohort("contour symmetry needs at least two masks");
  }
  std::vector<std::array<double, 7>> hu;
  hu.reserve(masks.size());
  for (const auto& m : masks) hu.push_back(hu_invariants(m, grid));
  double sum = 0;
  int pairs = 0;
  for (size_t i = 0; i < masks.size(); ++i) {
    for (size_t j = i + 1; j < masks.size(); ++j) {
      sum += std::min(shape_distance_hu(hu[i], hu[j]), 1.0);
      ++pairs;
    }
  }
  return 100.0 * (1.0 - sum / pairs);
}

namespace {

struct Member {
  const track::Track* track;
  const track::TrackFrame* frame;
};

MaskRegion member_mask(const Member& m) {
  MaskRegion mask;
  mask.contour = m.frame->contour;
  mask.centroid = m.frame->centroid;
  mask.area = m.frame->area;
  return mask;
}

std::vector<SymmetryReport> reports_for_members(std::vector<Member> members,
                                                int frame_index, int grid) {
  std::map<size_t, std::vector<Member>> by_length;
  for (const auto& m : members) {
    if (m.frame->contour.size() >= 3) {
      by_length[m.track->tcode.length()].push_back(m);
    }
  }
  std::vector<SymmetryReport> reports;
  for (auto& [length, cohort] : by_length) {
    if (cohort.size() < 2) continue;
    SymmetryReport rep;
    rep.frame_index = frame_index;
    rep.n = static_cast<int>(length);
    std::vector<double> areas;
    std::vector<MaskRegion> masks;
    for (const auto& m : cohort) {
      areas.push_back(m.frame->area);
      masks.push_back(member_mask(m));
    }
    rep.size_s = size_symmetry(areas);
    rep.cont_s = contour_symmetry(masks, grid);
    // Sibling pairs share everything but the last bit.
    for (size_t i = 0; i < cohort.size(); ++i) {
      for (size_t j = i + 1; j < cohort.size(); ++j) {
        const auto& ba = cohort[i].track->tcode.bits;
        const auto& bb = cohort[j].track->tcode.bits;
        if (!std::equal(ba.begin(), ba.end() - 1, bb.begin())) continue;
        SiblingPair pair;
        pair.id_a = cohort[i].track->id;
        pair.id_b = cohort[j].track->id;
        pair.size_s =
            size_symmetry({cohort[i].frame->area, cohort[j].frame->area});
        pair.distance = shape_distance(masks[i], masks[j], grid);
        pair.cont_s = 100.0 * (1.0 - std::min(pair.distance, 1.0));
        rep.sibling_pairs.push_back(std::move(pair));
      }
    }
    reports.push_back(std::move(rep));
  }
  return reports;
}

}  // namespace

std::vector<SymmetryReport> cohort_reports(const track::TrackerState& state,
                                           int grid) {
  std::vector<Member> members;
  for (const auto& t : state.tracks) {
    if (t.active && !t.history.empty()) {
      members.push_back({&t, &t.history.back()});
    }
  }
  return reports_for_members(std::move(members), state.frame_index, grid);
}

std::vector<SymmetryReport> reports_over_dump(const track::TrackerState& state,
                                              int grid) {
  std::map<int, std::vector<Member>> by_frame;
  for (const auto& t : state.tracks) {
    for (const auto& f : t.history) {
      by_frame[f.frame_index].push_back({&t, &f});
    }
  }
  std::vector<SymmetryReport> all;
  for (auto& [frame_index, members] : by_frame) {
    auto reports = reports_for_members(std::move(members), frame_index, grid);
    all.insert(all.end(), reports.begin(), reports.end());
  }
  return all;
}

void write_report_csv(std::ostream& os,
                      const std::vector<SymmetryReport>& reports) {
  os << "frame_index,cohort_n,size_s,cont_s,sibling_pairs\n";
  for (const auto& r : reports) {
    std::ostringstream pairs;
    for (size_t i = 0; i < r.sibling_pairs.size(); ++i) {
      const auto& p = r.sibling_pairs[i];
      if (i) pairs << ";";
      pairs << p.id_a << "~" << p.id_b << ":" << p.size_s << ":" << p.cont_s;
    }
    os << r.frame_index << "," << r.n << "," << r.size_s << "," << r.cont_s
       << "," << pairs.str() << "\n";
  }
}

}  // namespace cleave::sym
