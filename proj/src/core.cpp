#include "cleavekit/core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

namespace cleave {

namespace {
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

const char* kLabelNames[9] = {"tPNa", "tPNf", "t2", "t3", "t4",
                              "t5",   "t6",   "t7", "t8"};
}  // namespace

const char* to_string(ActLabel label) {
  return kLabelNames[static_cast<int>(label)];
}

ActLabel parse_label(std::string_view name) {
  for (int i = 0; i < 9; ++i) {
    if (name == kLabelNames[i]) return static_cast<ActLabel>(i);
  }
  throw ValidationError("unknown ACT label: " + std::string(name));
}

bool is_em_mode(ActLabel label) {
  for (ActLabel m : kEmModes) {
    if (m == label) return true;
  }
  return false;
}

int em_mode_index(ActLabel label) {
  for (int i = 0; i < 5; ++i) {
    if (kEmModes[i] == label) return i;
  }
  throw ValidationError(std::string("label has no mixture mode: ") +
                        to_string(label));
}

double gaussian_pdf(double x, const GaussianComponent& c) {
  const double z = (x - c.mean) / c.std;
  return kInvSqrt2Pi / c.std * std::exp(-0.5 * z * z);
}

double gaussian_log_pdf(double x, const GaussianComponent& c) {
  const double z = (x - c.mean) / c.std;
  return std::log(kInvSqrt2Pi / c.std) - 0.5 * z * z;
}

const GaussianComponent& ActMixture::component(ActLabel label) const {
  return modes[static_cast<size_t>(em_mode_index(label))];
}

GaussianComponent& ActMixture::component(ActLabel label) {
  return modes[static_cast<size_t>(em_mode_index(label))];
}

void ActMixture::validate() const {
  double wsum = 0.0;
  for (size_t i = 0; i < modes.size(); ++i) {
    const auto& c = modes[i];
    if (!(c.std > 0.0) || !std::isfinite(c.std) || !std::isfinite(c.mean)) {
      throw ValidationError("mixture mode has invalid mean/std");
    }
    if (!(c.weight > 0.0) || c.weight > 1.0) {
      throw ValidationError("mixture mode weight outside (0, 1]");
    }
    if (i > 0 && !(modes[i].mean > modes[i - 1].mean)) {
      throw ValidationError("mixture means not strictly increasing");
    }
    wsum += c.weight;
  }
  if (std::abs(wsum - 1.0) > 1e-9) {
    throw ValidationError("mixture weights do not sum to 1");
  }
  if (t3_submixture) {
    double sub = 0.0;
    for (const auto& c : *t3_submixture) {
      if (!(c.std > 0.0) || !(c.weight > 0.0)) {
        throw ValidationError("invalid t3 submixture component");
      }
      sub += c.weight;
    }
    if (std::abs(sub - 1.0) > 1e-9) {
      throw ValidationError("t3 submixture weights do not sum to 1");
    }
  }
}

namespace {
nlohmann::json component_to_json(const GaussianComponent& c) {
  return nlohmann::json{{"mean", c.mean}, {"std", c.std}, {"weight", c.weight}};
}

GaussianComponent component_from_json(const nlohmann::json& j) {
  GaussianComponent c;
  c.mean = j.at("mean").get<double>();
  c.std = j.at("std").get<double>();
  c.weight = j.at("weight").get<double>();
  return c;
}
}  // namespace

nlohmann::json ActMixture::to_json() const {
  nlohmann::json jmodes = nlohmann::json::array();
  for (size_t i = 0; i < modes.size(); ++i) {
    nlohmann::json jm = component_to_json(modes[i]);
    jm["label"] = to_string(kEmModes[i]);
    jmodes.push_back(std::move(jm));
  }
  nlohmann::json j{{"modes", std::move(jmodes)}};
  if (t3_submixture) {
    nlohmann::json sub = nlohmann::json::array();
    for (const auto& c : *t3_submixture) sub.push_back(component_to_json(c));
    j["t3_submixture"] = std::move(sub);
  }
  return j;
}

ActMixture ActMixture::from_json(const nlohmann::json& j) {
  ActMixture m;
  std::array<bool, 5> seen{};
  for (const auto& jm : j.at("modes")) {
    ActLabel label = parse_label(jm.at("label").get<std::string>());
    int idx = em_mode_index(label);
    if (seen[static_cast<size_t>(idx)]) {
      throw ValidationError("duplicate mode label in model file");
    }
    seen[static_cast<size_t>(idx)] = true;
    m.modes[static_cast<size_t>(idx)] = component_from_json(jm);
  }
  for (bool s : seen) {
    if (!s) throw ValidationError("model file missing one of the five modes");
  }
  if (j.contains("t3_submixture") && !j["t3_submixture"].is_null()) {
    const auto& sub = j["t3_submixture"];
    if (sub.size() != 2) {
      throw ValidationError("t3_submixture must have exactly two components");
    }
    m.t3_submixture = {{component_from_json(sub[0]), component_from_json(sub[1])}};
  }
  m.validate();
  return m;
}

ActMixture default_mixture() {
  ActMixture m;
  const double means[5] = {2.56, 8.49, 14.13, 29.34, 36.02};
  const double stds[5] = {0.45, 5.38, 1.21, 3.21, 6.93};
  for (int i = 0; i < 5; ++i) {
    m.modes[static_cast<size_t>(i)] = {means[i], stds[i], 0.2};
  }
  return m;
}

TimingValue TimingValue::value(double hours) {
  if (!std::isfinite(hours)) throw ValidationError("non-finite timing value");
  TimingValue v;
  v.kind_ = Kind::Value;
  v.hours_ = hours;
  return v;
}

TimingValue TimingValue::pass() {
  TimingValue v;
  v.kind_ = Kind::Pass;
  return v;
}

TimingValue TimingValue::na() {
  TimingValue v;
  v.kind_ = Kind::NA;
  return v;
}

double TimingValue::hours() const {
  if (kind_ != Kind::Value) {
    throw ValidationError("timing has no numeric value");
  }
  return hours_;
}

bool TimingValue::operator==(const TimingValue& o) const {
  if (kind_ != o.kind_) return false;
  return kind_ != Kind::Value || hours_ == o.hours_;
}

std::string TimingValue::to_field() const {
  switch (kind_) {
    case Kind::Pass:
      return "pass";
    case Kind::NA:
      return "n/a";
    case Kind::Value: {
      std::ostringstream ss;
      ss.precision(17);
      ss << hours_;
      return ss.str();
    }
  }
  return "n/a";
}

TimingValue TimingValue::from_field(std::string_view field) {
  if (field == "pass") return pass();
  if (field == "n/a" || field == "N/A" || field.empty()) return na();
  try {
    size_t pos = 0;
    double v = std::stod(std::string(field), &pos);
    if (pos != field.size()) throw std::invalid_argument("trailing chars");
    return value(v);
  } catch (const std::exception&) {
    throw ValidationError("bad timing field: " + std::string(field));
  }
}

nlohmann::json TimingValue::to_json() const {
  switch (kind_) {
    case Kind::Value:
      return hours_;
    case Kind::Pass:
      return "pass";
    case Kind::NA:
      return "n/a";
  }
  return "n/a";
}

TimingValue TimingValue::from_json(const nlohmann::json& j) {
  if (j.is_number()) return value(j.get<double>());
  if (j.is_null()) return na();
  if (j.is_string()) return from_field(j.get<std::string>());
  throw ValidationError("bad timing json");
}

std::map<ActLabel, double> numeric_timings(const Timeline& t) {
  std::map<ActLabel, double> out;
  for (const auto& [label, v] : t) {
    if (v.is_value()) out[label] = v.hours();
  }
  return out;
}

namespace {
// Proper segment intersection (excluding the shared endpoints of adjacent
// contour edges).
int orient(const Point& a, const Point& b, const Point& c) {
  double v = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
  const double eps = 1e-12;
  if (v > eps) return 1;
  if (v < -eps) return -1;
  return 0;
}

bool on_segment(const Point& a, const Point& b, const Point& p) {
  return std::min(a.x, b.x) - 1e-12 <= p.x && p.x <= std::max(a.x, b.x) + 1e-12 &&
         std::min(a.y, b.y) - 1e-12 <= p.y && p.y <= std::max(a.y, b.y) + 1e-12;
}

bool segments_cross(const Point& a, const Point& b, const Point& c,
                    const Point& d) {
  int o1 = orient(a, b, c), o2 = orient(a, b, d);
  int o3 = orient(c, d, a), o4 = orient(c, d, b);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(a, b, c)) return true;
  if (o2 == 0 && on_segment(a, b, d)) return true;
  if (o3 == 0 && on_segment(c, d, a)) return true;
  if (o4 == 0 && on_segment(c, d, b)) return true;
  return false;
}
}  // namespace

void MaskRegion::validate() const {
  const size_t n = contour.size();
  if (n < 3) throw ValidationError("mask contour needs at least 3 vertices");
  for (const auto& p : contour) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      throw ValidationError("mask contour has non-finite vertex");
    }
  }
  if (!(area > 0.0)) throw ValidationError("mask area must be positive");
  if (!(confidence >= 0.0 && confidence <= 1.0)) {
    throw ValidationError("mask confidence outside [0, 1]");
  }
  double minx = contour[0].x, maxx = contour[0].x;
  double miny = contour[0].y, maxy = contour[0].y;
  for (const auto& p : contour) {
    minx = std::min(minx, p.x);
    maxx = std::max(maxx, p.x);
    miny = std::min(miny, p.y);
    maxy = std::max(maxy, p.y);
  }
  if (centroid.x < minx - 1e-9 || centroid.x > maxx + 1e-9 ||
      centroid.y < miny - 1e-9 || centroid.y > maxy + 1e-9) {
    throw ValidationError("mask centroid outside contour bounding box");
  }
  // Non-adjacent edge pairs must not cross.
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      if (segments_cross(contour[i], contour[(i + 1) % n], contour[j],
                         contour[(j + 1) % n])) {
        throw ValidationError("mask contour self-intersects");
      }
    }
  }
}

nlohmann::json MaskRegion::to_json() const {
  nlohmann::json jc = nlohmann::json::array();
  for (const auto& p : contour) jc.push_back({p.x, p.y});
  return nlohmann::json{{"contour", std::move(jc)},
                        {"centroid", {centroid.x, centroid.y}},
                        {"area", area},
                        {"confidence", confidence}};
}

MaskRegion MaskRegion::from_json(const nlohmann::json& j) {
  MaskRegion m;
  for (const auto& jp : j.at("contour")) {
    m.contour.push_back({jp.at(0).get<double>(), jp.at(1).get<double>()});
  }
  m.centroid = {j.at("centroid").at(0).get<double>(),
                j.at("centroid").at(1).get<double>()};
  m.area = j.at("area").get<double>();
  m.confidence = j.value("confidence", 1.0);
  m.validate();
  return m;
}

nlohmann::json FrameObservation::to_json() const {
  nlohmann::json jm = nlohmann::json::array();
  for (const auto& m : masks) jm.push_back(m.to_json());
  nlohmann::json j{{"frame_index", frame_index},
                   {"time_hours", time_hours},
                   {"masks", std::move(jm)}};
  if (classifier_label) {
    j["classifier_label"] = to_string(*classifier_label);
  } else {
    j["classifier_label"] = nullptr;
  }
  return j;
}

FrameObservation FrameObservation::from_json(const nlohmann::json& j) {
  FrameObservation f;
  f.frame_index = j.at("frame_index").get<int>();
  f.time_hours = j.at("time_hours").get<double>();
  if (j.contains("classifier_label") && !j["classifier_label"].is_null()) {
    f.classifier_label = parse_label(j["classifier_label"].get<std::string>());
  }
  for (const auto& jm : j.at("masks")) {
    f.masks.push_back(MaskRegion::from_json(jm));
  }
  return f;
}

double relative_time(double t_abs, double tpnf_abs) {
  if (!std::isfinite(t_abs) || !std::isfinite(tpnf_abs)) {
    throw ValidationError("relative_time requires finite inputs");
  }
  return t_abs - tpnf_abs;
}

IntervalSet intervals(const std::map<ActLabel, double>& t) {
  IntervalSet out;
  auto get = [&t](ActLabel l) -> std::optional<double> {
    auto it = t.find(l);
    if (it == t.end()) return std::nullopt;
    return it->second;
  };
  auto diff = [&](ActLabel hi, ActLabel lo) -> std::optional<double> {
    auto a = get(hi), b = get(lo);
    if (a && b) return *a - *b;
    return std::nullopt;
  };
  out.cc2 = diff(ActLabel::t3, ActLabel::t2);
  out.cc3 = diff(ActLabel::t5, ActLabel::t4);
  out.s2 = diff(ActLabel::t4, ActLabel::t3);
  out.s3 = diff(ActLabel::t8, ActLabel::t5);
  return out;
}

void write_timeline_csv(std::ostream& os, const Timeline& t) {
  os << "label,hours,flag\n";
  for (ActLabel l : kAllLabels) {
    auto it = t.find(l);
    if (it == t.end()) continue;
    const TimingValue& v = it->second;
    os << to_string(l) << ",";
    if (v.is_value()) {
      std::ostringstream ss;
      ss.precision(17);
      ss << v.hours();
      os << ss.str() << ",ok\n";
    } else if (v.kind() == TimingValue::Kind::Pass) {
      os << ",pass\n";
    } else {
      os << ",n/a\n";
    }
  }
}

Timeline read_timeline_csv(std::istream& is) {
  Timeline t;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string label, hours, flag;
    std::getline(ss, label, ',');
    std::getline(ss, hours, ',');
    std::getline(ss, flag, ',');
    if (first && label == "label") {
      first = false;
      continue;
    }
    first = false;
    ActLabel l = parse_label(label);
    if (flag == "ok") {
      t[l] = TimingValue::value(std::stod(hours));
    } else if (flag == "pass") {
      t[l] = TimingValue::pass();
    } else {
      t[l] = TimingValue::na();
    }
  }
  return t;
}

void write_frames_jsonl(const std::string& path,
                        const std::vector<FrameObservation>& frames) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  for (const auto& f : frames) os << f.to_json().dump() << "\n";
}

std::vector<FrameObservation> read_frames_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  std::vector<FrameObservation> frames;
  std::string line;
  double prev_time = -1e300;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    frames.push_back(FrameObservation::from_json(nlohmann::json::parse(line)));
    if (frames.back().time_hours < prev_time) {
      throw ValidationError("frame times must be non-decreasing");
    }
    prev_time = frames.back().time_hours;
  }
  return frames;
}

void save_model_json(const std::string& path, const ActMixture& m, int round) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  nlohmann::json j = m.to_json();
  if (round >= 0) j["round"] = round;
  os << j.dump(2) << "\n";
}

ActMixture load_model_json(const std::string& path, int* round) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  nlohmann::json j = nlohmann::json::parse(is);
  if (round) *round = j.value("round", -1);
  return ActMixture::from_json(j);
}

std::vector<double> read_samples_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  std::vector<double> samples;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    bool parsed = false;
    while (std::getline(ss, field, ',')) {
      try {
        size_t pos = 0;
        double v = std::stod(field, &pos);
        samples.push_back(v);
        parsed = true;
        break;
      } catch (const std::exception&) {
        continue;  // label column or header, try the next field
      }
    }
    (void)parsed;
  }
  return samples;
}

}  // namespace cleave
