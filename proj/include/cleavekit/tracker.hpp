#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cleavekit/core.hpp"

namespace cleave::track {

/// Binary lineage code. The root bit is always 0; each cleavage appends
/// bits, so the length counts 1 + cleavage cycles undergone.
struct Tcode {
  std::vector<std::uint8_t> bits{0};

  static Tcode root() { return Tcode{}; }
  Tcode child(std::uint8_t bit) const;
  size_t length() const { return bits.size(); }
  std::string bitstring() const;  // e.g. "011"
  static Tcode from_bitstring(std::string_view s);

  bool operator==(const Tcode& o) const { return bits == o.bits; }
  bool operator<(const Tcode& o) const { return bits < o.bits; }
  bool is_prefix_of(const Tcode& o) const;
};

/// Display name: (0) -> "zygote", second bit picks A/B, remaining bits are
/// appended as digits.
std::string render_id(const Tcode& code);

struct TrackFrame {
  int frame_index = 0;
  Point centroid;
  double area = 0.0;
  std::vector<Point> contour;
};

struct Track {
  Tcode tcode;
  std::string id;
  std::optional<Tcode> parent;
  std::vector<TrackFrame> history;  // frame indices strictly increasing
  bool active = true;

  const TrackFrame& last() const;
};

struct IrcEvent {
  int frame_index = 0;
  Tcode parent;
  int child_count = 0;
};

struct Anomaly {
  int frame_index = 0;
  std::string reason;
};

struct TrackerState {
  int frame_index = -1;
  std::vector<Track> tracks;  // all tracks ever created; leaves are active
  std::vector<IrcEvent> irc_events;
  std::vector<Anomaly> anomalies;

  std::vector<size_t> active_indices() const;
};

/// Minimum-total-distance matching between equal-sized centroid sets.
/// Returns, for each `prev` row, the matched `curr` index.
std::vector<int> match_same_count(const std::vector<Point>& prev,
                                  const std::vector<Point>& curr);

/// Advance the tracker by one frame. Count increases split lineages; count
/// decreases and empty frames are recorded as anomalies without rewriting
/// lineage.
TrackerState step(TrackerState state, const FrameObservation& frame);

/// Parents that produced more than two children in one transition.
std::vector<IrcEvent> detect_irc(const TrackerState& state);

TrackerState run(const std::vector<FrameObservation>& frames);

nlohmann::json tracks_to_json(const TrackerState& state);
TrackerState tracks_from_json(const nlohmann::json& j);

// Exposed for oracle testing: optimal row->column assignment of a square
// cost matrix.
std::vector<int> min_cost_assignment(
    const std::vector<std::vector<double>>& cost);

}  // namespace cleave::track
