#pragma once

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include "cleavekit/core.hpp"
#include "cleavekit/tracker.hpp"

namespace cleave::sym {

struct DegenerateCohort : Error {
  using Error::Error;
};
struct ZeroArea : Error {
  using Error::Error;
};

/// Size symmetry 100 / (1 + sigma) where sigma is the coefficient of
/// variation of the areas (population std over mean).
double size_symmetry(const std::vector<double>& areas);

/// The seven moment invariants of the rasterized mask interior.
std::array<double, 7> hu_invariants(const MaskRegion& mask, int grid = 500);

/// Log-moment contour distance: sum over invariants of
/// |1/m_i(a) - 1/m_i(b)| with m_i = sign(h_i) * log10|h_i|; terms where
/// either |h_i| < 1e-30 are skipped pairwise.
double shape_distance(const MaskRegion& a, const MaskRegion& b, int grid = 500);

/// Contour symmetry 100 * (1 - mean over all pairs of min(d, 1)).
double contour_symmetry(const std::vector<MaskRegion>& masks, int grid = 500);

struct SiblingPair {
  std::string id_a, id_b;
  double size_s = 0.0;
  double distance = 0.0;
  double cont_s = 0.0;
};

struct SymmetryReport {
  int frame_index = 0;
  int n = 0;  // tcode length of the cohort
  double size_s = 0.0;
  double cont_s = 0.0;
  std::vector<SiblingPair> sibling_pairs;
};

/// One report per tcode length with at least two live blastomeres, scored
/// on their most recent masks. Sibling pairs share the first n-1 bits.
std::vector<SymmetryReport> cohort_reports(const track::TrackerState& state,
                                           int grid = 500);

/// Reports for every frame of a finished track dump.
std::vector<SymmetryReport> reports_over_dump(const track::TrackerState& state,
                                              int grid = 500);

void write_report_csv(std::ostream& os,
                      const std::vector<SymmetryReport>& reports);

}  // namespace cleave::sym
