#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace cleave {

inline constexpr const char* kVersion = "0.1.0";

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValidationError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

// The nine cleavage-stage classes in temporal order. Comparisons rely on the
// enum order; t6 and t7 sit between t5 and t8 even though only five classes
// carry mixture modes.
enum class ActLabel : int {
  tPNa = 0,
  tPNf = 1,
  t2 = 2,
  t3 = 3,
  t4 = 4,
  t5 = 5,
  t6 = 6,
  t7 = 7,
  t8 = 8,
};

inline constexpr std::array<ActLabel, 9> kAllLabels{
    ActLabel::tPNa, ActLabel::tPNf, ActLabel::t2, ActLabel::t3, ActLabel::t4,
    ActLabel::t5,   ActLabel::t6,   ActLabel::t7, ActLabel::t8};

// The five labels modeled as Gaussian modes, in mean order.
inline constexpr std::array<ActLabel, 5> kEmModes{
    ActLabel::t2, ActLabel::t3, ActLabel::t4, ActLabel::t5, ActLabel::t8};

const char* to_string(ActLabel label);
ActLabel parse_label(std::string_view name);
bool is_em_mode(ActLabel label);
int em_mode_index(ActLabel label);  // 0..4; throws ValidationError otherwise
inline int label_index(ActLabel l) { return static_cast<int>(l); }

/// One Gaussian mode over tPNf-relative hours.
struct GaussianComponent {
  double mean = 0.0;    // hours relative to tPNf
  double std = 1.0;     // hours, > 0
  double weight = 1.0;  // (0, 1]
};

double gaussian_pdf(double x, const GaussianComponent& c);
double gaussian_log_pdf(double x, const GaussianComponent& c);

/// The shared 5-mode timing model. `modes` is ordered as kEmModes
/// (t2, t3, t4, t5, t8). The optional t3 submixture preserves the 2-mode
/// decomposition of the t3 population; downstream prediction consumes only
/// the five modes.
struct ActMixture {
  std::array<GaussianComponent, 5> modes{};
  std::optional<std::array<GaussianComponent, 2>> t3_submixture;

  const GaussianComponent& component(ActLabel label) const;
  GaussianComponent& component(ActLabel label);

  // Throws ValidationError on non-increasing means, non-positive stds, or
  // weights not summing to 1 (1e-9 slack).
  void validate() const;

  nlohmann::json to_json() const;
  static ActMixture from_json(const nlohmann::json& j);
};

// Built-in reference timing model; used as generator default and for demos.
ActMixture default_mixture();

/// A timing slot: a concrete hour value, "pass" (skipped by direct
/// cleavage), or "n/a" (never reached in the observed sequence).
class TimingValue {
 public:
  enum class Kind { Value, Pass, NA };

  TimingValue() = default;
  static TimingValue value(double hours);
  static TimingValue pass();
  static TimingValue na();

  Kind kind() const { return kind_; }
  bool is_value() const { return kind_ == Kind::Value; }
  double hours() const;  // throws ValidationError unless is_value()

  bool operator==(const TimingValue& o) const;

  std::string to_field() const;  // "23.1" | "pass" | "n/a"
  static TimingValue from_field(std::string_view field);
  nlohmann::json to_json() const;
  static TimingValue from_json(const nlohmann::json& j);

 private:
  Kind kind_ = Kind::NA;
  double hours_ = 0.0;
};

using Timeline = std::map<ActLabel, TimingValue>;

// Numeric entries of a timeline (pass/n-a dropped).
std::map<ActLabel, double> numeric_timings(const Timeline& t);

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// One segmented blastomere: closed polygon in pixel coordinates plus the
/// derived centroid/area and the segmentor confidence.
struct MaskRegion {
  std::vector<Point> contour;  // >= 3 vertices, simple polygon
  Point centroid;
  double area = 0.0;  // pixel^2
  double confidence = 1.0;

  void validate() const;  // throws ValidationError

  nlohmann::json to_json() const;
  static MaskRegion from_json(const nlohmann::json& j);
};

/// One TLI frame: absolute clock time, the (optional) classifier channel
/// label and the segmented masks. Immutable after construction by
/// convention; safe to share across threads.
struct FrameObservation {
  int frame_index = 0;
  double time_hours = 0.0;  // absolute TLI clock
  std::optional<ActLabel> classifier_label;
  std::vector<MaskRegion> masks;

  nlohmann::json to_json() const;
  static FrameObservation from_json(const nlohmann::json& j);
};

/// The four quality intervals; an interval is absent whenever one of its
/// operands is (absence is a value, not an error).
struct IntervalSet {
  std::optional<double> cc2;  // t3 - t2
  std::optional<double> cc3;  // t5 - t4
  std::optional<double> s2;   // t4 - t3
  std::optional<double> s3;   // t8 - t5
};

double relative_time(double t_abs, double tpnf_abs);
IntervalSet intervals(const std::map<ActLabel, double>& timeline);

// --- file formats -----------------------------------------------------------

// Timeline CSV, columns: label,hours,flag (flag in {ok,pass,n/a}; hours empty
// unless flag == ok).
void write_timeline_csv(std::ostream& os, const Timeline& t);
Timeline read_timeline_csv(std::istream& is);

// Frame sequences as JSON lines, one FrameObservation per line.
void write_frames_jsonl(const std::string& path,
                        const std::vector<FrameObservation>& frames);
std::vector<FrameObservation> read_frames_jsonl(const std::string& path);

// Model file. `round` is attached by the federation server; -1 omits it.
void save_model_json(const std::string& path, const ActMixture& m,
                     int round = -1);
ActMixture load_model_json(const std::string& path, int* round = nullptr);

// Samples CSV for fitting: one relative-hours value per row, optional label
// column ignored. A non-numeric header line is skipped.
std::vector<double> read_samples_csv(const std::string& path);

}  // namespace cleave
