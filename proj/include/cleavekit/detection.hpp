#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cleavekit/core.hpp"

namespace cleave::sim {

struct InvalidConfig : Error {
  using Error::Error;
};
struct MissingSubLabel : Error {
  using Error::Error;
};

struct ScoredCandidate {
  MaskRegion mask;
  double score = 0.0;
};

/// Raster IoU of two mask polygons on the image grid.
double iou(const MaskRegion& a, const MaskRegion& b, int grid = 500);

/// Greedy non-maximum suppression, descending score (centroid-lexicographic
/// tie break). A candidate is suppressed iff its IoU with an already kept
/// candidate exceeds the threshold strictly.
std::vector<ScoredCandidate> nms(std::vector<ScoredCandidate> candidates,
                                 double iou_threshold, int grid = 500);

// --- stage cascade ----------------------------------------------------------

enum class CellStage { OneCell, TwoCell, FourCell, EightCell };
enum class EightCellClass { T5, T67, T8 };

/// Sub-classifier outputs feeding the stage cascade.
struct CascadeInputs {
  std::optional<ActLabel> one_cell;    // tPNa or tPNf
  std::optional<ActLabel> four_cell;   // t3 or t4
  std::optional<EightCellClass> eight_cell;
};

/// Cascade output; the merged (t6, t7) class defers to the segment count.
struct CascadeLabel {
  std::optional<ActLabel> label;
  bool deferred_t67 = false;
};

CascadeLabel route_cascade(CellStage stage, const CascadeInputs& sub);

// --- synthetic sequences ------------------------------------------------

struct SynthConfig {
  ActMixture mixture = default_mixture();  // generative timing model
  double frame_period = 0.25;              // hours between frames
  int n_embryos = 1;
  double label_noise_rate = 0.0;
  double t67_confusion_rate = 0.0;
  double irc_rate = 0.0;
  double centroid_jitter = 2.0;  // pixels, per-frame
  double area_cv = 0.15;         // division asymmetry
  int image_size = 500;

  void validate() const;
};

struct GroundTruthTimeline {
  Timeline timings;  // all nine labels
  bool irc = false;

  void validate() const;  // present times strictly increasing
  nlohmann::json to_json() const;
  static GroundTruthTimeline from_json(const nlohmann::json& j);
};

struct SynthEmbryo {
  int id = 0;
  std::vector<FrameObservation> frames;
  GroundTruthTimeline gt;
};

/// Seeded, bit-reproducible sequence generator with ground truth.
std::vector<SynthEmbryo> generate(const SynthConfig& cfg, std::uint64_t seed);

/// Pooled unlabeled draws, n per mode, for fitting experiments.
std::vector<double> mixture_draws(const ActMixture& mixture, int n_per_mode,
                                  std::uint64_t seed);

void save_ground_truth(const std::string& path, const GroundTruthTimeline& gt);
GroundTruthTimeline load_ground_truth(const std::string& path);

}  // namespace cleave::sim
