#include "cleavekit/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cleave::track {

Tcode Tcode::child(std::uint8_t bit) const {
  Tcode c = *this;
  c.bits.push_back(bit ? 1 : 0);
  return c;
}

std::string Tcode::bitstring() const {
  std::string s;
  s.reserve(bits.size());
  for (auto b : bits) s.push_back(b ? '1' : '0');
  return s;
}

Tcode Tcode::from_bitstring(std::string_view s) {
  if (s.empty() || s[0] != '0') {
    throw ValidationError("tcode must start with the root bit 0");
  }
  Tcode c;
  c.bits.clear();
  for (char ch : s) {
    if (ch != '0' && ch != '1') throw ValidationError("tcode bits must be 0/1");
    c.bits.push_back(ch == '1' ? 1 : 0);
  }
  return c;
}

bool Tcode::is_prefix_of(const Tcode& o) const {
  if (bits.size() > o.bits.size()) return false;
  return std::equal(bits.begin(), bits.end(), o.bits.begin());
}

std::string render_id(const Tcode& code) {
  if (code.bits.empty() || code.bits[0] != 0) {
    throw ValidationError("invalid tcode");
  }
  if (code.bits.size() == 1) return "zygote";
  std::string id;
  id.push_back(code.bits[1] ? 'B' : 'A');
  for (size_t i = 2; i < code.bits.size(); ++i) {
    id.push_back(code.bits[i] ? '1' : '0');
  }
  return id;
}

const TrackFrame& Track::last() const {
  if (history.empty()) throw ValidationError("track has no observations");
  return history.back();
}

std::vector<size_t> TrackerState::active_indices() const {
  std::vector<size_t> idx;
  for (size_t i = 0; i < tracks.size(); ++i) {
    if (tracks[i].active) idx.push_back(i);
  }
  return idx;
}

std::vector<int> min_cost_assignment(
    const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  if (n == 0) return {};
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<size_t>(n) + 1, 0.0);
  std::vector<int> p(static_cast<size_t>(n) + 1, 0);
  std::vector<int> way(static_cast<size_t>(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<size_t>(n) + 1, kInf);
    std::vector<char> used(static_cast<size_t>(n) + 1, 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      const int i0 = p[static_cast<size_t>(j0)];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        const double cur = cost[static_cast<size_t>(i0 - 1)]
                               [static_cast<size_t>(j - 1)] -
                           u[static_cast<size_t>(i0)] -
                           v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(static_cast<size_t>(n), -1);
  for (int j = 1; j <= n; ++j) {
    if (p[static_cast<size_t>(j)] > 0) {
      row_to_col[static_cast<size_t>(p[static_cast<size_t>(j)] - 1)] = j - 1;
    }
  }
  return row_to_col;
}

namespace {

double dist(const Point& a, const Point& b) {
  const double dx = a.x - b.x, dy = a.y - b.y;
  return std::sqrt(dx * dx + dy * dy);
}

// Compositions of `total` into `parts` positive integers.
void compositions(int total, int parts, std::vector<int>& cur,
                  std::vector<std::vector<int>>& out) {
  if (parts == 1) {
    if (total >= 1) {
      cur.push_back(total);
      out.push_back(cur);
      cur.pop_back();
    }
    return;
  }
  for (int k = 1; k <= total - (parts - 1); ++k) {
    cur.push_back(k);
    compositions(total - k, parts - 1, cur, out);
    cur.pop_back();
  }
}

struct ChildRef {
  size_t mask_index;
};

// Children of one parent get bits by descending area (centroid tie break);
// two children take one bit, k > 2 take ceil(log2 k) bits.
std::vector<std::vector<std::uint8_t>> child_bit_codes(int k) {
  int width = 1;
  while ((1 << width) < k) ++width;
  std::vector<std::vector<std::uint8_t>> codes;
  for (int j = 0; j < k; ++j) {
    std::vector<std::uint8_t> bits;
    for (int b = width - 1; b >= 0; --b) {
      bits.push_back(static_cast<std::uint8_t>((j >> b) & 1));
    }
    codes.push_back(std::move(bits));
  }
  return codes;
}

TrackFrame make_frame(int frame_index, const MaskRegion& mask) {
  return {frame_index, mask.centroid, mask.area, mask.contour};
}

void spawn_children(TrackerState& state, size_t parent_idx,
                    std::vector<size_t> mask_indices,
                    const FrameObservation& frame) {
  const int k = static_cast<int>(mask_indices.size());
  std::sort(mask_indices.begin(), mask_indices.end(), [&](size_t a, size_t b) {
    const MaskRegion& ma = frame.masks[a];
    const MaskRegion& mb = frame.masks[b];
    if (ma.area != mb.area) return ma.area > mb.area;
    if (ma.centroid.x != mb.centroid.x) return ma.centroid.x < mb.centroid.x;
    return ma.centroid.y < mb.centroid.y;
  });
  const Tcode parent_code = state.tracks[parent_idx].tcode;
  state.tracks[parent_idx].active = false;
  auto codes = child_bit_codes(k);
  for (int j = 0; j < k; ++j) {
    Tcode code = parent_code;
    for (auto bit : codes[static_cast<size_t>(j)]) {
      code = code.child(bit);
    }
    Track child;
    child.tcode = code;
    child.id = render_id(code);
    child.parent = parent_code;
    child.history.push_back(
        make_frame(frame.frame_index, frame.masks[mask_indices[static_cast<size_t>(j)]]));
    state.tracks.push_back(std::move(child));
  }
  if (k > 2) {
    state.irc_events.push_back({frame.frame_index, parent_code, k});
  }
}

// Count increase: pick the division pattern (who divided, which children)
// with minimum total parent-child distance over all compositions.
void handle_division(TrackerState& state, const std::vector<size_t>& active,
                     const FrameObservation& frame) {
  const int p = static_cast<int>(active.size());
  const int c = static_cast<int>(frame.masks.size());

  std::vector<std::vector<int>> comps;
  std::vector<int> cur;
  compositions(c, p, cur, comps);

  double best_cost = std::numeric_limits<double>::infinity();
  std::vector<int> best_comp;
  std::vector<int> best_assign;  // slot -> mask index
  std::vector<size_t> best_slot_parent;

  for (const auto& comp : comps) {
    std::vector<size_t> slot_parent;
    for (int i = 0; i < p; ++i) {
      for (int r = 0; r < comp[static_cast<size_t>(i)]; ++r) {
        slot_parent.push_back(active[static_cast<size_t>(i)]);
      }
    }
    std::vector<std::vector<double>> cost(
        static_cast<size_t>(c), std::vector<double>(static_cast<size_t>(c)));
    for (int s = 0; s < c; ++s) {
      const Point& pc = state.tracks[slot_parent[static_cast<size_t>(s)]]
                            .last()
                            .centroid;
      for (int m = 0; m < c; ++m) {
        cost[static_cast<size_t>(s)][static_cast<size_t>(m)] =
            dist(pc, frame.masks[static_cast<size_t>(m)].centroid);
      }
    }
    auto assign = min_cost_assignment(cost);
    double total = 0;
    for (int s = 0; s < c; ++s) {
      total += cost[static_cast<size_t>(s)][static_cast<size_t>(assign[static_cast<size_t>(s)])];
    }
    if (total < best_cost) {
      best_cost = total;
      best_comp = comp;
      best_assign = assign;
      best_slot_parent = slot_parent;
    }
  }

  // Apply: parents with one slot continue, parents with several divide.
  size_t slot = 0;
  for (int i = 0; i < p; ++i) {
    const size_t parent_idx = active[static_cast<size_t>(i)];
    const int k = best_comp[static_cast<size_t>(i)];
    if (k == 1) {
      const size_t mask_idx =
          static_cast<size_t>(best_assign[slot]);
      state.tracks[parent_idx].history.push_back(
          make_frame(frame.frame_index, frame.masks[mask_idx]));
      ++slot;
    } else {
      std::vector<size_t> mask_indices;
      for (int r = 0; r < k; ++r) {
        mask_indices.push_back(static_cast<size_t>(best_assign[slot]));
        ++slot;
      }
      spawn_children(state, parent_idx, std::move(mask_indices), frame);
    }
  }
}

}  // namespace

std::vector<int> match_same_count(const std::vector<Point>& prev,
                                  const std::vector<Point>& curr) {
  if (prev.size() != curr.size() || prev.empty()) {
    throw ValidationError("match_same_count needs equal, non-empty sets");
  }
  const size_t n = prev.size();
  std::vector<std::vector<double>> cost(n, std::vector<double>(n));
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < n; ++j) cost[i][j] = dist(prev[i], curr[j]);
  }
  return min_cost_assignment(cost);
}

TrackerState step(TrackerState state, const FrameObservation& frame) {
  state.frame_index = frame.frame_index;
  const auto active = state.active_indices();
  const size_t count = frame.masks.size();

  if (count == 0) {
    state.anomalies.push_back({frame.frame_index, "empty_frame"});
    return state;
  }

  if (active.empty()) {
    // First observed frame seeds the lineage.
    Track root;
    root.tcode = Tcode::root();
    root.id = render_id(root.tcode);
    if (count == 1) {
      root.history.push_back(make_frame(frame.frame_index, frame.masks[0]));
      state.tracks.push_back(std::move(root));
    } else {
      // Already divided when first seen: virtual zygote, immediate split.
      Point mean{0, 0};
      for (const auto& m : frame.masks) {
        mean.x += m.centroid.x;
        mean.y += m.centroid.y;
      }
      mean.x /= static_cast<double>(count);
      mean.y /= static_cast<double>(count);
      root.active = true;
      root.history.push_back({frame.frame_index, mean, 0.0, {}});
      state.tracks.push_back(std::move(root));
      std::vector<size_t> all(count);
      for (size_t i = 0; i < count; ++i) all[i] = i;
      spawn_children(state, state.tracks.size() - 1, all, frame);
      state.tracks[state.tracks.size() - count - 1].history.clear();
    }
    return state;
  }

  if (count == active.size()) {
    std::vector<Point> prev, curr;
    for (size_t idx : active) prev.push_back(state.tracks[idx].last().centroid);
    for (const auto& m : frame.masks) curr.push_back(m.centroid);
    auto assign = match_same_count(prev, curr);
    for (size_t i = 0; i < active.size(); ++i) {
      state.tracks[active[i]].history.push_back(make_frame(
          frame.frame_index, frame.masks[static_cast<size_t>(assign[i])]));
    }
    return state;
  }

  if (count > active.size()) {
    handle_division(state, active, frame);
    return state;
  }

  // Count decrease: lost detection or merge; never rewrite lineage.
  state.anomalies.push_back({frame.frame_index, "count_decrease"});
  return state;
}

std::vector<IrcEvent> detect_irc(const TrackerState& state) {
  std::vector<IrcEvent> out;
  for (const auto& e : state.irc_events) {
    if (e.child_count > 2) out.push_back(e);
  }
  return out;
}

TrackerState run(const std::vector<FrameObservation>& frames) {
  TrackerState state;
  for (const auto& f : frames) state = step(std::move(state), f);
  return state;
}

nlohmann::json tracks_to_json(const TrackerState& state) {
  nlohmann::json jt = nlohmann::json::array();
  for (const auto& t : state.tracks) {
    nlohmann::json jframes = nlohmann::json::array();
    for (const auto& f : t.history) {
      nlohmann::json jc = nlohmann::json::array();
      for (const auto& p : f.contour) jc.push_back({p.x, p.y});
      jframes.push_back({{"frame_index", f.frame_index},
                         {"centroid", {f.centroid.x, f.centroid.y}},
                         {"area", f.area},
                         {"contour", std::move(jc)}});
    }
    nlohmann::json jtrack{{"tcode", t.tcode.bitstring()},
                          {"id", t.id},
                          {"active", t.active},
                          {"frames", std::move(jframes)}};
    if (t.parent) {
      jtrack["parent"] = t.parent->bitstring();
    } else {
      jtrack["parent"] = nullptr;
    }
    jt.push_back(std::move(jtrack));
  }
  nlohmann::json jirc = nlohmann::json::array();
  for (const auto& e : state.irc_events) {
    jirc.push_back({{"frame_index", e.frame_index},
                    {"parent_tcode", e.parent.bitstring()},
                    {"child_count", e.child_count}});
  }
  nlohmann::json janom = nlohmann::json::array();
  for (const auto& a : state.anomalies) {
    janom.push_back({{"frame_index", a.frame_index}, {"reason", a.reason}});
  }
  return nlohmann::json{{"tracks", std::move(jt)},
                        {"irc_events", std::move(jirc)},
                        {"anomalies", std::move(janom)},
                        {"last_frame_index", state.frame_index}};
}

TrackerState tracks_from_json(const nlohmann::json& j) {
  TrackerState state;
  state.frame_index = j.value("last_frame_index", -1);
  for (const auto& jt : j.at("tracks")) {
    Track t;
    t.tcode = Tcode::from_bitstring(jt.at("tcode").get<std::string>());
    t.id = jt.at("id").get<std::string>();
    t.active = jt.value("active", true);
    if (jt.contains("parent") && !jt["parent"].is_null()) {
      t.parent = Tcode::from_bitstring(jt["parent"].get<std::string>());
    }
    for (const auto& jf : jt.at("frames")) {
      TrackFrame f;
      f.frame_index = jf.at("frame_index").get<int>();
      f.centroid = {jf.at("centroid").at(0).get<double>(),
                    jf.at("centroid").at(1).get<double>()};
      f.area = jf.at("area").get<double>();
      for (const auto& jp : jf.at("contour")) {
        f.contour.push_back({jp.at(0).get<double>(), jp.at(1).get<double>()});
      }
      t.history.push_back(std::move(f));
    }
    state.tracks.push_back(std::move(t));
  }
  for (const auto& je : j.value("irc_events", nlohmann::json::array())) {
    state.irc_events.push_back(
        {je.at("frame_index").get<int>(),
         Tcode::from_bitstring(je.at("parent_tcode").get<std::string>()),
         je.at("child_count").get<int>()});
  }
  for (const auto& ja : j.value("anomalies", nlohmann::json::array())) {
    state.anomalies.push_back(
        {ja.at("frame_index").get<int>(), ja.at("reason").get<std::string>()});
  }
  return state;
}

}  // namespace cleave::track
