#include "cleavekit/detection.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "cleavekit/em.hpp"
#include "cleavekit/geometry.hpp"

namespace cleave::sim {

double iou(const MaskRegion& a, const MaskRegion& b, int grid) {
  geo::Spans sa = geo::raster_spans(a.contour, grid);
  geo::Spans sb = geo::raster_spans(b.contour, grid);
  const auto inter = geo::span_intersection_count(sa, sb);
  const auto uni = sa.cell_count() + sb.cell_count() - inter;
  if (uni <= 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<ScoredCandidate> nms(std::vector<ScoredCandidate> candidates,
                                 double iou_threshold, int grid) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    throw ValidationError("iou threshold must be in (0, 1]");
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const ScoredCandidate& a, const ScoredCandidate& b) {
              if (a.score != b.score) return a.score > b.score;
              if (a.mask.centroid.x != b.mask.centroid.x) {
                return a.mask.centroid.x < b.mask.centroid.x;
              }
              return a.mask.centroid.y < b.mask.centroid.y;
            });
  std::vector<ScoredCandidate> kept;
  std::vector<geo::Spans> kept_spans;
  for (auto& cand : candidates) {
    geo::Spans spans = geo::raster_spans(cand.mask.contour, grid);
    const auto cells = spans.cell_count();
    bool suppressed = false;
    for (const auto& ks : kept_spans) {
      const auto inter = geo::span_intersection_count(spans, ks);
      const auto uni = cells + ks.cell_count() - inter;
      if (uni > 0 &&
          static_cast<double>(inter) / static_cast<double>(uni) >
              iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) {
      kept.push_back(std::move(cand));
      kept_spans.push_back(std::move(spans));
    }
  }
  return kept;
}

CascadeLabel route_cascade(CellStage stage, const CascadeInputs& sub) {
  switch (stage) {
    case CellStage::OneCell:
      if (!sub.one_cell) throw MissingSubLabel("1-cell stage needs a pronucleus label");
      if (*sub.one_cell != ActLabel::tPNa && *sub.one_cell != ActLabel::tPNf) {
        throw MissingSubLabel("1-cell sub-label must be tPNa or tPNf");
      }
      return {*sub.one_cell, false};
    case CellStage::TwoCell:
      return {ActLabel::t2, false};
    case CellStage::FourCell:
      if (!sub.four_cell) throw MissingSubLabel("4-cell stage needs t3/t4 label");
      if (*sub.four_cell != ActLabel::t3 && *sub.four_cell != ActLabel::t4) {
        throw MissingSubLabel("4-cell sub-label must be t3 or t4");
      }
      return {*sub.four_cell, false};
    case CellStage::EightCell:
      if (!sub.eight_cell) throw MissingSubLabel("8-cell stage needs t5/(t6,t7)/t8 label");
      switch (*sub.eight_cell) {
        case EightCellClass::T5:
          return {ActLabel::t5, false};
        case EightCellClass::T8:
          return {ActLabel::t8, false};
        case EightCellClass::T67:
          return {std::nullopt, true};  // resolved by segment count downstream
      }
  }
  throw MissingSubLabel("unreachable cascade stage");
}

void SynthConfig::validate() const {
  mixture.validate();
  auto rate_ok = [](double r) { return r >= 0.0 && r <= 1.0; };
  if (!rate_ok(label_noise_rate) || !rate_ok(t67_confusion_rate) ||
      !rate_ok(irc_rate)) {
    throw InvalidConfig("noise rates must lie in [0, 1]");
  }
  if (image_size <= 0) throw InvalidConfig("image_size must be positive");
  if (!(frame_period > 0)) throw InvalidConfig("frame_period must be positive");
  if (n_embryos < 0) throw InvalidConfig("n_embryos must be >= 0");
  if (centroid_jitter < 0 || area_cv < 0) {
    throw InvalidConfig("jitter and area_cv must be >= 0");
  }
}

void GroundTruthTimeline::validate() const {
  double prev = -1e300;
  for (ActLabel l : kAllLabels) {
    auto it = timings.find(l);
    if (it == timings.end() || !it->second.is_value()) continue;
    if (!(it->second.hours() > prev)) {
      throw ValidationError("ground-truth times must be strictly increasing");
    }
    prev = it->second.hours();
  }
}

nlohmann::json GroundTruthTimeline::to_json() const {
  nlohmann::json jt;
  for (const auto& [label, v] : timings) jt[to_string(label)] = v.to_json();
  return nlohmann::json{{"timings", std::move(jt)}, {"irc", irc}};
}

GroundTruthTimeline GroundTruthTimeline::from_json(const nlohmann::json& j) {
  GroundTruthTimeline gt;
  for (auto it = j.at("timings").begin(); it != j.at("timings").end(); ++it) {
    gt.timings[parse_label(it.key())] = TimingValue::from_json(it.value());
  }
  gt.irc = j.value("irc", false);
  gt.validate();
  return gt;
}

void save_ground_truth(const std::string& path, const GroundTruthTimeline& gt) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << gt.to_json().dump(2) << "\n";
}

GroundTruthTimeline load_ground_truth(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  return GroundTruthTimeline::from_json(nlohmann::json::parse(is));
}

// --- generator --------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct CellSim {
  double area = 0.0;
  Point base;           // stage position, before per-frame jitter
  double ax_ratio = 1;  // ellipse elongation
  double angle = 0.0;
  int generation = 1;
};

double radius_of(const CellSim& c) {
  return std::sqrt(c.area / M_PI);
}

// Push overlapping cells apart until everything fits; deterministic.
void relax_layout(std::vector<CellSim>& cells, double image_size) {
  const double margin = 4.0;
  for (int iter = 0; iter < 60; ++iter) {
    bool moved = false;
    for (size_t i = 0; i < cells.size(); ++i) {
      for (size_t j = i + 1; j < cells.size(); ++j) {
        const double need =
            0.92 * (radius_of(cells[i]) + radius_of(cells[j]));
        double dx = cells[j].base.x - cells[i].base.x;
        double dy = cells[j].base.y - cells[i].base.y;
        double d = std::sqrt(dx * dx + dy * dy);
        if (d >= need) continue;
        if (d < 1e-6) {
          dx = 1.0;
          dy = 0.0;
          d = 1.0;
        }
        const double push = 0.5 * (need - d);
        cells[i].base.x -= push * dx / d;
        cells[i].base.y -= push * dy / d;
        cells[j].base.x += push * dx / d;
        cells[j].base.y += push * dy / d;
        moved = true;
      }
    }
    for (auto& c : cells) {
      const double r = radius_of(c) * std::max(c.ax_ratio, 1.0) + margin;
      c.base.x = std::clamp(c.base.x, r, image_size - r);
      c.base.y = std::clamp(c.base.y, r, image_size - r);
    }
    if (!moved) break;
  }
}

// Split one cell into two, with lognormal area asymmetry.
std::pair<CellSim, CellSim> split_cell(const CellSim& parent, double area_cv,
                                       std::mt19937_64& rng) {
  const double sigma_ln = std::sqrt(std::log(1.0 + area_cv * area_cv));
  std::normal_distribution<double> norm(0.0, 1.0);
  std::uniform_real_distribution<double> uangle(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> uratio(1.0, 1.12);

  const double ratio = std::exp(sigma_ln * norm(rng));
  const double a1 = parent.area * ratio / (1.0 + ratio);
  const double a2 = parent.area - a1;
  const double theta = uangle(rng);
  const double r1 = std::sqrt(a1 / M_PI), r2 = std::sqrt(a2 / M_PI);
  const double d = 0.95 * (r1 + r2);
  // Area-weighted placement keeps the pair centroid on the parent.
  const double off1 = d * a2 / parent.area;
  const double off2 = d * a1 / parent.area;

  CellSim c1, c2;
  c1.area = a1;
  c1.base = {parent.base.x + off1 * std::cos(theta),
             parent.base.y + off1 * std::sin(theta)};
  c1.ax_ratio = uratio(rng);
  c1.angle = uangle(rng);
  c1.generation = parent.generation + 1;
  c2.area = a2;
  c2.base = {parent.base.x - off2 * std::cos(theta),
             parent.base.y - off2 * std::sin(theta)};
  c2.ax_ratio = uratio(rng);
  c2.angle = uangle(rng);
  c2.generation = parent.generation + 1;
  return {c1, c2};
}

// The cell that divides next: oldest generation first, then largest.
size_t pick_divider(const std::vector<CellSim>& cells) {
  size_t best = 0;
  for (size_t i = 1; i < cells.size(); ++i) {
    if (cells[i].generation < cells[best].generation ||
        (cells[i].generation == cells[best].generation &&
         cells[i].area > cells[best].area)) {
      best = i;
    }
  }
  return best;
}

ActLabel truth_label_at(const GroundTruthTimeline& gt, double t) {
  ActLabel label = ActLabel::tPNa;
  for (ActLabel l : kAllLabels) {
    auto it = gt.timings.find(l);
    if (it == gt.timings.end() || !it->second.is_value()) continue;
    if (it->second.hours() <= t) label = l;
  }
  return label;
}

int truth_count_at(const GroundTruthTimeline& gt, double t) {
  int count = 1;
  const std::pair<ActLabel, int> steps[] = {
      {ActLabel::t2, 2}, {ActLabel::t3, 3}, {ActLabel::t4, 4},
      {ActLabel::t5, 5}, {ActLabel::t6, 6}, {ActLabel::t7, 7},
      {ActLabel::t8, 8}};
  for (const auto& [label, n] : steps) {
    auto it = gt.timings.find(label);
    if (it == gt.timings.end() || !it->second.is_value()) continue;
    if (it->second.hours() <= t) count = n;
  }
  return count;
}

GroundTruthTimeline draw_timeline(const SynthConfig& cfg,
                                  std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> u_tpnf(20.0, 28.0);
  std::uniform_real_distribution<double> u_tpna(1.0, 3.0);
  std::normal_distribution<double> norm(0.0, 1.0);

  const double tpnf = u_tpnf(rng);
  const double tpna = tpnf - u_tpna(rng);
  const bool irc = u01(rng) < cfg.irc_rate;

  // t3 times follow the surrogate rule, not the raw t3 mode.
  const GaussianComponent t3_gen =
      em::derive_t3(cfg.mixture.component(ActLabel::t4));

  // Rejection-sample the five relative timings until strictly increasing.
  double r[5];
  const GaussianComponent* gens[5] = {
      &cfg.mixture.modes[0], &t3_gen, &cfg.mixture.modes[2],
      &cfg.mixture.modes[3], &cfg.mixture.modes[4]};
  for (int attempt = 0;; ++attempt) {
    if (attempt > 100000) {
      throw InvalidConfig("generative mixture cannot produce ordered timings");
    }
    for (int i = 0; i < 5; ++i) {
      r[i] = gens[i]->mean + gens[i]->std * norm(rng);
    }
    bool ok = r[0] > 2.0 * cfg.frame_period;  // tPNf must be observable
    for (int i = 1; i < 5 && ok; ++i) ok = r[i] > r[i - 1];
    if (ok) break;
  }

  // t6 and t7 land inside (t5, t8) as two sorted uniform draws.
  std::uniform_real_distribution<double> u57(r[3], r[4]);
  double t6 = u57(rng), t7 = u57(rng);
  if (t6 > t7) std::swap(t6, t7);
  while (t7 - t6 < 1e-6 || t6 - r[3] < 1e-6 || r[4] - t7 < 1e-6) {
    t6 = u57(rng);
    t7 = u57(rng);
    if (t6 > t7) std::swap(t6, t7);
  }

  GroundTruthTimeline gt;
  gt.irc = irc;
  gt.timings[ActLabel::tPNa] = TimingValue::value(tpna);
  gt.timings[ActLabel::tPNf] = TimingValue::value(tpnf);
  gt.timings[ActLabel::t2] =
      irc ? TimingValue::pass() : TimingValue::value(tpnf + r[0]);
  gt.timings[ActLabel::t3] =
      irc ? TimingValue::pass() : TimingValue::value(tpnf + r[1]);
  gt.timings[ActLabel::t4] = TimingValue::value(tpnf + r[2]);
  gt.timings[ActLabel::t5] = TimingValue::value(tpnf + r[3]);
  gt.timings[ActLabel::t6] = TimingValue::value(tpnf + t6);
  gt.timings[ActLabel::t7] = TimingValue::value(tpnf + t7);
  gt.timings[ActLabel::t8] = TimingValue::value(tpnf + r[4]);
  gt.validate();
  return gt;
}

ActLabel corrupt_label(ActLabel truth, const SynthConfig& cfg,
                       std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  if (u01(rng) < cfg.label_noise_rate) {
    std::uniform_int_distribution<int> pick(0, 7);
    int k = pick(rng);
    if (k >= static_cast<int>(truth)) ++k;  // any label but the truth
    return static_cast<ActLabel>(k);
  }
  if ((truth == ActLabel::t6 || truth == ActLabel::t7) &&
      u01(rng) < cfg.t67_confusion_rate) {
    return ActLabel::t8;
  }
  return truth;
}

SynthEmbryo generate_embryo(const SynthConfig& cfg, int id,
                            std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> uangle(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> uratio(1.0, 1.12);
  std::uniform_real_distribution<double> uconf(0.7, 1.0);
  std::normal_distribution<double> norm(0.0, 1.0);

  SynthEmbryo embryo;
  embryo.id = id;
  embryo.gt = draw_timeline(cfg, rng);

  const double size = cfg.image_size;
  std::vector<CellSim> cells(1);
  cells[0].area = M_PI * (0.28 * size) * (0.28 * size);
  cells[0].base = {size / 2.0, size / 2.0};
  cells[0].ax_ratio = uratio(rng);
  cells[0].angle = uangle(rng);

  const double start = embryo.gt.timings.at(ActLabel::tPNa).hours();
  const double stop = embryo.gt.timings.at(ActLabel::t8).hours() + 2.0;

  int frame_index = 0;
  int current_count = 1;
  for (double t = start; t <= stop + 1e-9; t += cfg.frame_period) {
    const int want = truth_count_at(embryo.gt, t);
    while (current_count < want) {
      const size_t parent = pick_divider(cells);
      auto [c1, c2] = split_cell(cells[parent], cfg.area_cv, rng);
      cells.erase(cells.begin() + static_cast<long>(parent));
      cells.push_back(c1);
      cells.push_back(c2);
      relax_layout(cells, size);
      ++current_count;
    }

    FrameObservation frame;
    frame.frame_index = frame_index++;
    frame.time_hours = t;
    frame.classifier_label = corrupt_label(truth_label_at(embryo.gt, t), cfg, rng);
    for (const auto& c : cells) {
      const double r = radius_of(c);
      const double rx = r * c.ax_ratio, ry = r / c.ax_ratio;
      Point center{c.base.x + cfg.centroid_jitter * norm(rng),
                   c.base.y + cfg.centroid_jitter * norm(rng)};
      const double rmax = std::max(rx, ry) + 1.0;
      center.x = std::clamp(center.x, rmax, size - rmax);
      center.y = std::clamp(center.y, rmax, size - rmax);
      MaskRegion mask;
      mask.contour = geo::ellipse_polygon(center, rx, ry, c.angle, 32);
      mask.centroid = center;
      mask.area = geo::polygon_area(mask.contour);
      mask.confidence = uconf(rng);
      frame.masks.push_back(std::move(mask));
    }
    embryo.frames.push_back(std::move(frame));
  }
  return embryo;
}

}  // namespace

std::vector<SynthEmbryo> generate(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::vector<SynthEmbryo> out;
  out.reserve(static_cast<size_t>(cfg.n_embryos));
  std::uint64_t state = seed;
  for (int i = 0; i < cfg.n_embryos; ++i) {
    const std::uint64_t embryo_seed = splitmix64(state);
    out.push_back(generate_embryo(cfg, i, embryo_seed));
  }
  return out;
}

std::vector<double> mixture_draws(const ActMixture& mixture, int n_per_mode,
                                  std::uint64_t seed) {
  mixture.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> norm(0.0, 1.0);
  std::vector<double> out;
  out.reserve(static_cast<size_t>(n_per_mode) * 5);
  for (const auto& mode : mixture.modes) {
    for (int i = 0; i < n_per_mode; ++i) {
      out.push_back(mode.mean + mode.std * norm(rng));
    }
  }
  return out;
}

}  // namespace cleave::sim
