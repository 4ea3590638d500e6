#pragma once

#include <map>
#include <optional>
#include <vector>

#include "cleavekit/core.hpp"
#include "cleavekit/detection.hpp"
#include "cleavekit/tracker.hpp"

namespace cleave::ctp {

struct NoPnfFound : Error {
  using Error::Error;
};
struct AnchorMissing : Error {
  using Error::Error;
};

enum class ResolutionSource { Consistent, ClassifierWon, SegmentorWon, CountOnly };
const char* to_string(ResolutionSource s);

struct ResolvedFrame {
  int frame_index = 0;
  double time_hours = 0.0;
  ActLabel label = ActLabel::tPNa;
  ResolutionSource source = ResolutionSource::Consistent;
};

/// Mode means shifted so the anchor observation sits on its own mode; the
/// shift is stored separately and interval queries read the unshifted base,
/// which keeps cc2/cc3/s2/s3 bit-identical to the global model's.
struct CalibratedMeans {
  std::array<double, 5> base_means{};  // global model means, unshifted
  std::array<double, 5> stds{};
  double shift = 0.0;  // D
  ActLabel anchor = ActLabel::t2;

  double mean_for(ActLabel label) const;  // calibrated; t6/t7 interpolated
  double std_for(ActLabel label) const;
  double density(ActLabel label, double rel_time) const;
  double interval(ActLabel hi, ActLabel lo) const;  // shift-free by design
};

/// Blastomere count to label; a single blastomere defers to the pronucleus
/// channel.
std::optional<ActLabel> segment_count_label(int count);

struct Arbitration {
  ActLabel label = ActLabel::t2;
  ResolutionSource source = ResolutionSource::Consistent;
};

/// Per-frame conflict resolution between the classifier channel and the
/// segment-count label. t6/t7 conflicts fall to the count; everything else
/// goes to whichever label explains the relative time better, ties to the
/// segmentor.
Arbitration arbitrate(ActLabel classifier, ActLabel seg, double rel_time,
                      const CalibratedMeans& cal);

CalibratedMeans calibrate(double t_i_abs, double tpnf_abs, ActLabel anchor,
                          const ActMixture& model);

struct Resolution {
  std::vector<ResolvedFrame> frames;
  CalibratedMeans cal;
  double tpnf_abs = 0.0;
  int tpnf_frame = 0;
  bool anchor_count_only = false;
};

/// Locate tPNf, anchor and calibrate, then resolve every frame and smooth
/// to a non-decreasing label sequence.
Resolution resolve_sequence(const std::vector<FrameObservation>& frames,
                            const ActMixture& model);

struct CtpReport {
  Timeline timings;  // all nine labels: hours, pass or n/a
  bool irc = false;
};

/// First-frame time per resolved label; labels skipped below the furthest
/// reached one become "pass", the rest "n/a".
CtpReport timeline(const std::vector<ResolvedFrame>& frames, bool irc_flag);

struct LabelError {
  enum class Kind { Pct, CategoricalAgree, CategoricalMismatch, Missing };
  Kind kind = Kind::Missing;
  double pct = 0.0;
  TimingValue::Kind pred_kind = TimingValue::Kind::NA;
  TimingValue::Kind gt_kind = TimingValue::Kind::NA;
};

/// Per-label 100*|pred-gt|/gt where both are numeric; categorical agreement
/// otherwise.
std::map<ActLabel, LabelError> error_report(const CtpReport& pred,
                                            const sim::GroundTruthTimeline& gt);

/// Shift every mode mean by the mean anchor residual of the confirmed
/// (tPNf, t2) pairs; stds and intervals unchanged.
ActMixture feedback_update(
    const ActMixture& model,
    const std::vector<std::pair<double, double>>& tpnf_t2_pairs);

/// Count-only reference: labels from mask counts alone. The pronucleus
/// transition is invisible to counts, so tPNf anchors at the first frame.
CtpReport count_only_timeline(const std::vector<FrameObservation>& frames);

struct PredictResult {
  CtpReport report;
  Resolution resolution;
  track::TrackerState tracker;
  std::optional<std::map<ActLabel, LabelError>> errors;
};

/// Full inference pass: per-frame NMS, lineage tracking (for the IRC flag),
/// sequence resolution and the timing report.
PredictResult predict(const std::vector<FrameObservation>& frames,
                      const ActMixture& model, double iou_threshold = 0.65,
                      const sim::GroundTruthTimeline* gt = nullptr);

}  // namespace cleave::ctp
