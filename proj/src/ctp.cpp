#include "cleavekit/ctp.hpp"

#include <algorithm>
#include <cmath>

namespace cleave::ctp {

const char* to_string(ResolutionSource s) {
  switch (s) {
    case ResolutionSource::Consistent:
      return "consistent";
    case ResolutionSource::ClassifierWon:
      return "classifier-won";
    case ResolutionSource::SegmentorWon:
      return "segmentor-won";
    case ResolutionSource::CountOnly:
      return "count-only";
  }
  return "?";
}

double CalibratedMeans::mean_for(ActLabel label) const {
  if (is_em_mode(label)) {
    return base_means[static_cast<size_t>(em_mode_index(label))] + shift;
  }
  // t6/t7 carry no modes; interpolate between the calibrated t5 and t8.
  const double t5 = base_means[3] + shift;
  const double t8 = base_means[4] + shift;
  if (label == ActLabel::t6) return t5 + (t8 - t5) / 3.0;
  if (label == ActLabel::t7) return t5 + 2.0 * (t8 - t5) / 3.0;
  throw AnchorMissing(std::string("no calibrated mean for ") + cleave::to_string(label));
}

double CalibratedMeans::std_for(ActLabel label) const {
  if (is_em_mode(label)) {
    return stds[static_cast<size_t>(em_mode_index(label))];
  }
  if (label == ActLabel::t6 || label == ActLabel::t7) {
    return (stds[3] + stds[4]) / 2.0;
  }
  throw AnchorMissing(std::string("no calibrated std for ") + cleave::to_string(label));
}

double CalibratedMeans::density(ActLabel label, double rel_time) const {
  GaussianComponent c{mean_for(label), std_for(label), 1.0};
  return gaussian_pdf(rel_time, c);
}

double CalibratedMeans::interval(ActLabel hi, ActLabel lo) const {
  return base_means[static_cast<size_t>(em_mode_index(hi))] -
         base_means[static_cast<size_t>(em_mode_index(lo))];
}

std::optional<ActLabel> segment_count_label(int count) {
  if (count < 1) throw ValidationError("count must be >= 1");
  switch (count) {
    case 1:
      return std::nullopt;  // tPNa/tPNf: needs the pronucleus channel
    case 2:
      return ActLabel::t2;
    case 3:
      return ActLabel::t3;
    case 4:
      return ActLabel::t4;
    case 5:
      return ActLabel::t5;
    case 6:
      return ActLabel::t6;
    case 7:
      return ActLabel::t7;
    default:
      return ActLabel::t8;  // >= 8
  }
}

Arbitration arbitrate(ActLabel classifier, ActLabel seg, double rel_time,
                      const CalibratedMeans& cal) {
  if (classifier == seg) return {seg, ResolutionSource::Consistent};
  // The classifier merges t6/t7, so the count is authoritative there.
  auto merged = [](ActLabel l) {
    return l == ActLabel::t6 || l == ActLabel::t7;
  };
  if (merged(classifier) || merged(seg)) {
    return {seg, ResolutionSource::SegmentorWon};
  }
  const double dc = cal.density(classifier, rel_time);
  const double ds = cal.density(seg, rel_time);
  if (dc > ds) return {classifier, ResolutionSource::ClassifierWon};
  return {seg, ResolutionSource::SegmentorWon};
}

CalibratedMeans calibrate(double t_i_abs, double tpnf_abs, ActLabel anchor,
                          const ActMixture& model) {
  if (!is_em_mode(anchor)) {
    throw AnchorMissing(std::string("anchor label has no mode: ") +
                        cleave::to_string(anchor));
  }
  model.validate();
  CalibratedMeans cal;
  for (size_t i = 0; i < 5; ++i) {
    cal.base_means[i] = model.modes[i].mean;
    cal.stds[i] = model.modes[i].std;
  }
  cal.anchor = anchor;
  const double r = relative_time(t_i_abs, tpnf_abs);
  cal.shift = r - model.component(anchor).mean;
  return cal;
}

namespace {

// Majority over a centered 3-frame window; a lone disagreeing middle frame
// is overruled by equal neighbors.
template <typename T>
std::vector<T> majority3(const std::vector<T>& in) {
  std::vector<T> out = in;
  for (size_t i = 1; i + 1 < in.size(); ++i) {
    if (in[i - 1] == in[i + 1]) out[i] = in[i - 1];
  }
  return out;
}

}  // namespace

Resolution resolve_sequence(const std::vector<FrameObservation>& frames,
                            const ActMixture& model) {
  if (frames.empty()) throw NoPnfFound("empty sequence");
  const size_t n = frames.size();

  std::vector<std::optional<ActLabel>> channel(n);
  std::vector<int> counts(n);
  for (size_t i = 0; i < n; ++i) {
    channel[i] = frames[i].classifier_label;
    counts[i] = static_cast<int>(frames[i].masks.size());
  }
  channel = majority3(channel);

  // tPNf: first single-blastomere frame the (denoised) classifier marks.
  int tpnf_idx = -1;
  for (size_t i = 0; i < n; ++i) {
    if (counts[i] == 1 && channel[i] && *channel[i] == ActLabel::tPNf) {
      tpnf_idx = static_cast<int>(i);
      break;
    }
  }
  if (tpnf_idx < 0) throw NoPnfFound("no single-cell frame labeled tPNf");
  const double tpnf_abs = frames[static_cast<size_t>(tpnf_idx)].time_hours;

  // Anchor: the first post-tPNf mode label confirmed by both channels,
  // timed at the onset of its count run. Falls back to the first count
  // change if the channels never agree.
  int anchor_idx = -1;
  ActLabel anchor_label = ActLabel::t2;
  bool anchor_count_only = false;
  for (size_t i = static_cast<size_t>(tpnf_idx) + 1; i < n; ++i) {
    if (counts[i] < 2) continue;
    auto seg = segment_count_label(counts[i]);
    if (!seg || !is_em_mode(*seg)) continue;
    if (channel[i] && *channel[i] == *seg) {
      anchor_label = *seg;
      size_t j = i;
      while (j > static_cast<size_t>(tpnf_idx) + 1 && counts[j - 1] == counts[i]) {
        --j;
      }
      anchor_idx = static_cast<int>(j);
      break;
    }
  }
  if (anchor_idx < 0) {
    for (size_t i = static_cast<size_t>(tpnf_idx) + 1; i < n; ++i) {
      if (counts[i] >= 2 && counts[i] != counts[i - 1]) {
        auto seg = segment_count_label(counts[i]);
        if (!seg || !is_em_mode(*seg)) continue;
        anchor_label = *seg;
        anchor_idx = static_cast<int>(i);
        anchor_count_only = true;
        break;
      }
    }
  }
  if (anchor_idx < 0) {
    throw AnchorMissing("no post-tPNf cleavage label to anchor on");
  }

  Resolution res;
  res.tpnf_abs = tpnf_abs;
  res.tpnf_frame = tpnf_idx;
  res.anchor_count_only = anchor_count_only;
  res.cal = calibrate(frames[static_cast<size_t>(anchor_idx)].time_hours,
                      tpnf_abs, anchor_label, model);

  std::vector<ActLabel> labels(n, ActLabel::tPNa);
  std::vector<ResolutionSource> sources(n, ResolutionSource::CountOnly);
  ActLabel carry = ActLabel::tPNa;
  for (size_t i = 0; i < n; ++i) {
    if (static_cast<int>(i) < tpnf_idx) {
      labels[i] = ActLabel::tPNa;
      sources[i] = (channel[i] && *channel[i] == ActLabel::tPNa)
                       ? ResolutionSource::Consistent
                       : ResolutionSource::CountOnly;
    } else if (counts[i] == 0) {
      labels[i] = carry;  // dropout frame: hold the last resolved label
      sources[i] = ResolutionSource::CountOnly;
    } else if (counts[i] == 1) {
      labels[i] = ActLabel::tPNf;
      sources[i] = (channel[i] && *channel[i] == ActLabel::tPNf)
                       ? ResolutionSource::Consistent
                       : ResolutionSource::SegmentorWon;
    } else {
      const ActLabel seg = *segment_count_label(counts[i]);
      if (!channel[i]) {
        labels[i] = seg;
        sources[i] = ResolutionSource::CountOnly;
      } else if (*channel[i] == ActLabel::tPNa || *channel[i] == ActLabel::tPNf) {
        labels[i] = seg;  // a multi-cell frame cannot be pre-cleavage
        sources[i] = ResolutionSource::SegmentorWon;
      } else {
        const double rel = relative_time(frames[i].time_hours, tpnf_abs);
        Arbitration arb = arbitrate(*channel[i], seg, rel, res.cal);
        labels[i] = arb.label;
        sources[i] = arb.source;
      }
    }
    carry = labels[i];
  }

  labels = majority3(labels);
  ActLabel running = ActLabel::tPNa;
  for (size_t i = 0; i < n; ++i) {
    if (labels[i] < running) {
      labels[i] = running;
    } else {
      running = labels[i];
    }
  }

  res.frames.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    res.frames.push_back({frames[i].frame_index, frames[i].time_hours,
                          labels[i], sources[i]});
  }
  return res;
}

CtpReport timeline(const std::vector<ResolvedFrame>& frames, bool irc_flag) {
  CtpReport report;
  report.irc = irc_flag;
  std::map<ActLabel, double> first_time;
  ActLabel furthest = ActLabel::tPNa;
  for (const auto& f : frames) {
    if (!first_time.count(f.label)) first_time[f.label] = f.time_hours;
    furthest = std::max(furthest, f.label);
  }
  for (ActLabel l : kAllLabels) {
    auto it = first_time.find(l);
    if (it != first_time.end()) {
      report.timings[l] = TimingValue::value(it->second);
    } else if (l < furthest) {
      report.timings[l] = TimingValue::pass();
    } else {
      report.timings[l] = TimingValue::na();
    }
  }
  return report;
}

std::map<ActLabel, LabelError> error_report(const CtpReport& pred,
                                            const sim::GroundTruthTimeline& gt) {
  std::map<ActLabel, LabelError> out;
  for (ActLabel l : kAllLabels) {
    LabelError e;
    auto ip = pred.timings.find(l);
    auto ig = gt.timings.find(l);
    if (ip == pred.timings.end() || ig == gt.timings.end()) {
      e.kind = LabelError::Kind::Missing;
    } else if (ip->second.is_value() && ig->second.is_value()) {
      e.kind = LabelError::Kind::Pct;
      e.pct = 100.0 * std::abs(ip->second.hours() - ig->second.hours()) /
              ig->second.hours();
    } else {
      e.pred_kind = ip->second.kind();
      e.gt_kind = ig->second.kind();
      e.kind = (e.pred_kind == e.gt_kind) ? LabelError::Kind::CategoricalAgree
                                          : LabelError::Kind::CategoricalMismatch;
    }
    out[l] = e;
  }
  return out;
}

ActMixture feedback_update(
    const ActMixture& model,
    const std::vector<std::pair<double, double>>& tpnf_t2_pairs) {
  if (tpnf_t2_pairs.empty()) return model;
  const double mu_t2 = model.component(ActLabel::t2).mean;
  double offset = 0;
  for (const auto& [tpnf, t2] : tpnf_t2_pairs) {
    offset += relative_time(t2, tpnf) - mu_t2;
  }
  offset /= static_cast<double>(tpnf_t2_pairs.size());
  ActMixture out = model;
  for (auto& mode : out.modes) mode.mean += offset;
  if (out.t3_submixture) {
    for (auto& c : *out.t3_submixture) c.mean += offset;
  }
  return out;
}

CtpReport count_only_timeline(const std::vector<FrameObservation>& frames) {
  CtpReport report;
  if (frames.empty()) return report;
  std::map<ActLabel, double> first_time;
  // Counts cannot see the pronucleus transition; both pronucleus stages
  // anchor at the start of the recording.
  first_time[ActLabel::tPNa] = frames.front().time_hours;
  first_time[ActLabel::tPNf] = frames.front().time_hours;
  ActLabel furthest = ActLabel::tPNf;
  for (const auto& f : frames) {
    if (f.masks.empty()) continue;
    auto seg = segment_count_label(static_cast<int>(f.masks.size()));
    if (!seg) continue;
    if (!first_time.count(*seg)) first_time[*seg] = f.time_hours;
    furthest = std::max(furthest, *seg);
  }
  for (ActLabel l : kAllLabels) {
    auto it = first_time.find(l);
    if (it != first_time.end()) {
      report.timings[l] = TimingValue::value(it->second);
    } else if (l < furthest) {
      report.timings[l] = TimingValue::pass();
    } else {
      report.timings[l] = TimingValue::na();
    }
  }
  return report;
}

PredictResult predict(const std::vector<FrameObservation>& frames,
                      const ActMixture& model, double iou_threshold,
                      const sim::GroundTruthTimeline* gt) {
  std::vector<FrameObservation> filtered;
  filtered.reserve(frames.size());
  for (const auto& f : frames) {
    std::vector<sim::ScoredCandidate> cands;
    cands.reserve(f.masks.size());
    for (const auto& m : f.masks) cands.push_back({m, m.confidence});
    auto kept = sim::nms(std::move(cands), iou_threshold);
    FrameObservation out = f;
    out.masks.clear();
    for (auto& k : kept) out.masks.push_back(std::move(k.mask));
    filtered.push_back(std::move(out));
  }

  PredictResult result;
  result.tracker = track::run(filtered);
  const bool irc_flag = !detect_irc(result.tracker).empty();
  result.resolution = resolve_sequence(filtered, model);
  result.report = timeline(result.resolution.frames, irc_flag);
  if (gt) result.errors = error_report(result.report, *gt);
  return result;
}

}  // namespace cleave::ctp
