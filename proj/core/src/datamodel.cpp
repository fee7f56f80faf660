#include "thermaco/datamodel.hpp"

#include <cmath>
#include <string_view>

namespace thermaco {
namespace {

constexpr std::array<const char*, kNumBodyParts + 1> kPartNames = {
    "background",     "left_face",      "right_face",    "left_torso",    "right_torso",
    "left_upper_arm", "right_upper_arm", "left_forearm", "right_forearm",
};

void check_mask(std::span<const std::uint8_t> mask, std::string_view what) {
  for (auto m : mask) {
    if (m > 1) throw ValidationError(std::string(what) + ": mask values must be 0 or 1");
  }
}

void check_finite(std::span<const float> values, std::string_view what) {
  for (auto v : values) {
    if (!std::isfinite(v)) throw ValidationError(std::string(what) + ": pixel values must be finite");
  }
}

}  // namespace

const char* body_part_name(BodyPart part) {
  auto index = static_cast<std::size_t>(part);
  return index < kPartNames.size() ? kPartNames[index] : "unknown";
}

std::optional<BodyPart> body_part_from_name(const std::string& name) {
  for (std::size_t i = 0; i < kPartNames.size(); ++i) {
    if (name == kPartNames[i]) return static_cast<BodyPart>(i);
  }
  return std::nullopt;
}

void ThermalFrame::validate() const {
  if (height <= 0 || width <= 0) throw ValidationError("ThermalFrame: height and width must be positive");
  if (pixels.size() != size() || mask.size() != size()) {
    throw ValidationError("ThermalFrame: pixel and mask grids must be height x width");
  }
  check_finite(pixels, "ThermalFrame");
  check_mask(mask, "ThermalFrame");
}

std::span<const float> ThermalWindow::frame_pixels(int t) const {
  return std::span<const float>(pixels).subspan(t * frame_size(), frame_size());
}

std::span<float> ThermalWindow::frame_pixels(int t) {
  return std::span<float>(pixels).subspan(t * frame_size(), frame_size());
}

std::span<const std::uint8_t> ThermalWindow::frame_mask(int t) const {
  return std::span<const std::uint8_t>(mask).subspan(t * frame_size(), frame_size());
}

ThermalFrame ThermalWindow::frame(int t) const {
  ThermalFrame out;
  out.height = height;
  out.width = width;
  auto px = frame_pixels(t);
  auto mk = frame_mask(t);
  out.pixels.assign(px.begin(), px.end());
  out.mask.assign(mk.begin(), mk.end());
  return out;
}

void ThermalWindow::validate(int expected_frames) const {
  if (height <= 0 || width <= 0) throw ValidationError("ThermalWindow: frames must share a positive shape");
  if (expected_frames >= 0 && frames != expected_frames) {
    throw ValidationError("ThermalWindow: length " + std::to_string(frames) + " != expected " +
                          std::to_string(expected_frames));
  }
  const std::size_t n = frame_size() * static_cast<std::size_t>(frames);
  if (pixels.size() != n || mask.size() != n) {
    throw ValidationError("ThermalWindow: pixel/mask storage does not match frames x height x width");
  }
  check_finite(pixels, "ThermalWindow");
  check_mask(mask, "ThermalWindow");
}

void EdaSeries::validate(std::size_t expected_length) const {
  if (samples.size() != expected_length) {
    throw ValidationError("EdaSeries: length " + std::to_string(samples.size()) + " != expected " +
                          std::to_string(expected_length));
  }
  for (double v : samples) {
    if (!std::isfinite(v)) throw ValidationError("EdaSeries: samples must be finite");
  }
}

EdaFeatureVector EdaFeatureVector::from_array(const std::array<double, kSize>& v) {
  return EdaFeatureVector{v[0], v[1], v[2], v[3], v[4], v[5]};
}

void EdaFeatureVector::validate() const {
  if (!(min <= median && median <= max)) throw ValidationError("EdaFeatureVector: min <= median <= max violated");
  if (!(min <= mean && mean <= max)) throw ValidationError("EdaFeatureVector: min <= mean <= max violated");
  if (!(std >= 0.0)) throw ValidationError("EdaFeatureVector: std must be non-negative");
  if (!(variability >= 0.0)) throw ValidationError("EdaFeatureVector: variability must be non-negative");
}

void DetectionWindow::validate(int expected_frames, std::size_t expected_eda) const {
  thermal.validate(expected_frames);
  if (expected_eda > 0) eda.validate(expected_eda);
  if (label != kNonStress && label != kStress) throw ValidationError("DetectionWindow: label must be 0 or 1");
  if (part_map.size() != thermal.mask.size()) {
    throw ValidationError("DetectionWindow: part_map must have one grid per frame");
  }
  for (std::size_t i = 0; i < part_map.size(); ++i) {
    if (part_map[i] > kNumBodyParts) throw ValidationError("DetectionWindow: part label out of range");
    if (part_map[i] != 0 && thermal.mask[i] == 0) {
      throw ValidationError("DetectionWindow: part_map nonzero outside the body mask");
    }
  }
}

std::size_t samples_for(double duration_s, double rate_hz) {
  return static_cast<std::size_t>(std::llround(duration_s * rate_hz));
}

void SessionRecord::validate() const {
  if (height <= 0 || width <= 0) throw ValidationError("SessionRecord: frame shape must be positive");
  if (!(thermal_fps > 0.0) || !(eda_rate_hz > 0.0)) throw ValidationError("SessionRecord: rates must be positive");
  double cursor = 0.0;
  for (std::size_t i = 0; i < task_schedule.size(); ++i) {
    const auto& seg = task_schedule[i];
    if (!(seg.end_s > seg.start_s)) {
      throw ValidationError("SessionRecord: task segment '" + seg.name + "' has non-positive duration");
    }
    if (seg.start_s < cursor) {
      throw ValidationError("SessionRecord: task segments overlap or are out of order at '" + seg.name + "'");
    }
    if (seg.label != kNonStress && seg.label != kStress) {
      throw ValidationError("SessionRecord: task label must be 0 or 1");
    }
    cursor = seg.end_s;
  }
  const std::size_t n_frames = samples_for(duration_s(), thermal_fps);
  const std::size_t n_px = n_frames * frame_size();
  if (frames.size() != n_px || masks.size() != n_px || parts.size() != n_px) {
    throw ValidationError("SessionRecord: thermal trace length inconsistent with schedule duration x fps (expected " +
                          std::to_string(n_frames) + " frames)");
  }
  const std::size_t n_eda = samples_for(duration_s(), eda_rate_hz);
  if (eda.size() != n_eda) {
    throw ValidationError("SessionRecord: EDA trace length " + std::to_string(eda.size()) +
                          " inconsistent with schedule duration x rate (expected " + std::to_string(n_eda) + ")");
  }
  check_finite(frames, "SessionRecord");
  check_mask(masks, "SessionRecord");
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i] > kNumBodyParts) throw ValidationError("SessionRecord: part label out of range");
    if (parts[i] != 0 && masks[i] == 0) throw ValidationError("SessionRecord: part map nonzero outside the body mask");
  }
  for (double v : eda) {
    if (!std::isfinite(v)) throw ValidationError("SessionRecord: EDA samples must be finite");
  }
}

MetricsReport metrics_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t tn, std::int64_t fn,
                                  std::optional<std::string> stratum) {
  MetricsReport r;
  r.tp = tp;
  r.fp = fp;
  r.tn = tn;
  r.fn = fn;
  r.stratum = std::move(stratum);
  auto ratio = [](std::int64_t num, std::int64_t den, bool& undefined) {
    undefined = den == 0;
    return undefined ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  r.sensitivity = ratio(tp, tp + fn, r.sensitivity_undefined);
  r.specificity = ratio(tn, tn + fp, r.specificity_undefined);
  r.precision = ratio(tp, tp + fp, r.precision_undefined);
  r.f1 = ratio(2 * tp, 2 * tp + fp + fn, r.f1_undefined);
  bool empty = false;
  r.accuracy = ratio(tp + tn, r.total(), empty);
  return r;
}

MetricsReport compute_metrics(std::span<const int> predictions, std::span<const int> labels,
                              std::optional<std::string> stratum) {
  if (predictions.empty()) throw ValidationError("compute_metrics: empty input");
  if (predictions.size() != labels.size()) {
    throw ValidationError("compute_metrics: length mismatch (" + std::to_string(predictions.size()) + " predictions, " +
                          std::to_string(labels.size()) + " labels)");
  }
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int p = predictions[i];
    const int y = labels[i];
    if ((p != 0 && p != 1) || (y != 0 && y != 1)) throw ValidationError("compute_metrics: values must be 0 or 1");
    if (p == 1 && y == 1) ++tp;
    else if (p == 1 && y == 0) ++fp;
    else if (p == 0 && y == 0) ++tn;
    else ++fn;
  }
  return metrics_from_counts(tp, fp, tn, fn, std::move(stratum));
}

}  // namespace thermaco
