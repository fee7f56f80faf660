#pragma once

// Core domain types shared by every stage of the pipeline: thermal frames and
// windows, EDA traces, labeled detection windows, whole recording sessions and
// the binary-classification metrics report.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace thermaco {

/// Raised when a value violates one of its type invariants. The message names
/// the invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for file-system and on-disk format problems.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kNonStress = 0;
inline constexpr int kStress = 1;

/// Body regions of the part map. 0 is background.
enum class BodyPart : std::uint8_t {
  kBackground = 0,
  kLeftFace = 1,
  kRightFace = 2,
  kLeftTorso = 3,
  kRightTorso = 4,
  kLeftUpperArm = 5,
  kRightUpperArm = 6,
  kLeftForearm = 7,
  kRightForearm = 8,
};
inline constexpr int kNumBodyParts = 8;

const char* body_part_name(BodyPart part);
std::optional<BodyPart> body_part_from_name(const std::string& name);

struct ThermalFrame {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;       // row-major, height * width
  std::vector<std::uint8_t> mask;  // 1 = body pixel

  std::size_t size() const { return static_cast<std::size_t>(height) * width; }
  void validate() const;
};

/// A fixed-length run of frames stored contiguously (frame-major, then
/// row-major pixels).
struct ThermalWindow {
  int frames = 0;
  int height = 0;
  int width = 0;
  double start_time = 0.0;
  std::vector<float> pixels;
  std::vector<std::uint8_t> mask;

  std::size_t frame_size() const { return static_cast<std::size_t>(height) * width; }
  std::span<const float> frame_pixels(int t) const;
  std::span<float> frame_pixels(int t);
  std::span<const std::uint8_t> frame_mask(int t) const;
  ThermalFrame frame(int t) const;

  /// Checks shape consistency, finiteness and the binary mask. When
  /// expected_frames is non-negative the length must match it exactly.
  void validate(int expected_frames = -1) const;
};

struct EdaSeries {
  double rate_hz = 4.0;
  std::vector<double> samples;

  void validate(std::size_t expected_length) const;
};

struct EdaFeatureVector {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  double median = 0.0;
  double variability = 0.0;  // mean absolute successive difference
  double std = 0.0;          // population standard deviation

  static constexpr std::size_t kSize = 6;
  std::array<double, kSize> to_array() const {
    return {mean, min, max, median, variability, std};
  }
  static EdaFeatureVector from_array(const std::array<double, kSize>& values);
  void validate() const;
};

struct TaskSegment {
  std::string name;
  int label = kNonStress;
  double start_s = 0.0;
  double end_s = 0.0;

  bool operator==(const TaskSegment&) const = default;
};

/// One labeled sample: a thermal window with the EDA recorded over the same
/// interval. part_map holds one label grid per frame, aligned with the
/// thermal window's pixels.
struct DetectionWindow {
  ThermalWindow thermal;
  EdaSeries eda;
  int label = kNonStress;
  std::string task_name;
  std::string session_id;
  std::string participant_id;
  double distance_feet = 0.0;
  std::vector<std::uint8_t> part_map;

  void validate(int expected_frames = -1, std::size_t expected_eda = 0) const;
};

/// A complete synthetic (or recorded) session: the task schedule plus full
/// thermal and EDA traces.
struct SessionRecord {
  std::string session_id;
  std::string participant_id;
  double distance_feet = 0.0;
  std::uint64_t seed = 0;
  double thermal_fps = 5.0;
  double eda_rate_hz = 4.0;
  int height = 0;
  int width = 0;
  std::vector<TaskSegment> task_schedule;
  std::vector<float> frames;         // frame_count * height * width
  std::vector<std::uint8_t> masks;   // same layout as frames
  std::vector<std::uint8_t> parts;   // same layout as frames
  std::vector<double> eda;           // raw conductance at eda_rate_hz

  std::size_t frame_size() const { return static_cast<std::size_t>(height) * width; }
  std::size_t frame_count() const { return frame_size() == 0 ? 0 : frames.size() / frame_size(); }
  double duration_s() const { return task_schedule.empty() ? 0.0 : task_schedule.back().end_s; }

  void validate() const;
  bool operator==(const SessionRecord&) const = default;
};

/// Number of samples a trace of the given duration holds at the given rate.
std::size_t samples_for(double duration_s, double rate_hz);

struct MetricsReport {
  double sensitivity = 0.0;
  double specificity = 0.0;
  double accuracy = 0.0;
  double f1 = 0.0;
  double precision = 0.0;
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t tn = 0;
  std::int64_t fn = 0;
  // Set when the corresponding ratio had a zero denominator and was reported as 0.
  bool sensitivity_undefined = false;
  bool specificity_undefined = false;
  bool precision_undefined = false;
  bool f1_undefined = false;
  std::optional<std::string> stratum;

  std::int64_t total() const { return tp + fp + tn + fn; }
};

/// Positive-class (stress) metrics. Zero denominators yield 0 with the
/// matching *_undefined flag set.
MetricsReport compute_metrics(std::span<const int> predictions, std::span<const int> labels,
                              std::optional<std::string> stratum = std::nullopt);

/// Metrics straight from confusion counts.
MetricsReport metrics_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t tn, std::int64_t fn,
                                  std::optional<std::string> stratum = std::nullopt);

}  // namespace thermaco
