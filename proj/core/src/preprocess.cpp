#include "thermaco/preprocess.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "json.hpp"

namespace thermaco::prep {

namespace {
constexpr double kTimeEps = 1e-9;
}

void WindowingSpec::validate() const {
  if (!(window_seconds > 0.0)) throw ValidationError("WindowingSpec: window must be positive");
  if (!(overlap_seconds >= 0.0 && overlap_seconds < window_seconds)) {
    throw ValidationError("WindowingSpec: need 0 <= overlap < window");
  }
}

void MaskAugmentSpec::validate() const {
  double sum = 0.0;
  for (double p : probabilities) {
    if (!(p >= 0.0)) throw ValidationError("MaskAugmentSpec: probabilities must be non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("MaskAugmentSpec: probabilities must sum to 1");
}

std::vector<double> window_starts(double duration_s, const WindowingSpec& spec) {
  spec.validate();
  std::vector<double> starts;
  const double stride = spec.stride_seconds();
  for (std::size_t k = 0;; ++k) {
    const double start = static_cast<double>(k) * stride;
    if (start + spec.window_seconds > duration_s + kTimeEps) break;
    starts.push_back(start);
  }
  return starts;
}

int window_label(const std::vector<TaskSegment>& schedule, double start, double end, std::string* task_name) {
  double stress = 0.0;
  double calm = 0.0;
  double best = 0.0;
  for (const auto& seg : schedule) {
    const double overlap = std::min(end, seg.end_s) - std::max(start, seg.start_s);
    if (overlap <= 0.0) continue;
    (seg.label == kStress ? stress : calm) += overlap;
    if (overlap > best + kTimeEps) {
      best = overlap;
      if (task_name) *task_name = seg.name;
    }
  }
  return stress > calm + kTimeEps ? kStress : kNonStress;
}

std::vector<WindowRef> extract_window_refs(const SessionRecord& session, const WindowingSpec& spec,
                                           std::size_t session_index) {
  std::vector<WindowRef> refs;
  const std::size_t n_frames = samples_for(spec.window_seconds, session.thermal_fps);
  const std::size_t n_eda = samples_for(spec.window_seconds, session.eda_rate_hz);
  for (double start : window_starts(session.duration_s(), spec)) {
    WindowRef ref;
    ref.session = session_index;
    ref.start_time = start;
    // Independent rounding of start, length and total can overshoot the
    // trace by one sample on misaligned grids; shift back by that slack.
    const std::size_t last_frame = session.frame_count() - std::min(n_frames, session.frame_count());
    const std::size_t last_eda = session.eda.size() - std::min(n_eda, session.eda.size());
    ref.first_frame = std::min(samples_for(start, session.thermal_fps), last_frame);
    ref.first_eda = std::min(samples_for(start, session.eda_rate_hz), last_eda);
    if (ref.first_frame + n_frames > session.frame_count() || ref.first_eda + n_eda > session.eda.size()) break;
    ref.label = window_label(session.task_schedule, start, start + spec.window_seconds, &ref.task_name);
    refs.push_back(std::move(ref));
  }
  return refs;
}

DetectionWindow materialize(const SessionRecord& session, const WindowRef& ref, const WindowingSpec& spec) {
  const std::size_t n_frames = samples_for(spec.window_seconds, session.thermal_fps);
  const std::size_t n_eda = samples_for(spec.window_seconds, session.eda_rate_hz);
  const std::size_t fs = session.frame_size();
  DetectionWindow w;
  w.thermal.frames = static_cast<int>(n_frames);
  w.thermal.height = session.height;
  w.thermal.width = session.width;
  w.thermal.start_time = ref.start_time;
  const auto first = ref.first_frame * fs;
  w.thermal.pixels.assign(session.frames.begin() + first, session.frames.begin() + first + n_frames * fs);
  w.thermal.mask.assign(session.masks.begin() + first, session.masks.begin() + first + n_frames * fs);
  w.part_map.assign(session.parts.begin() + first, session.parts.begin() + first + n_frames * fs);
  w.eda.rate_hz = session.eda_rate_hz;
  w.eda.samples.assign(session.eda.begin() + ref.first_eda, session.eda.begin() + ref.first_eda + n_eda);
  w.label = ref.label;
  w.task_name = ref.task_name;
  w.session_id = session.session_id;
  w.participant_id = session.participant_id;
  w.distance_feet = session.distance_feet;
  return w;
}

std::vector<DetectionWindow> extract_windows(const SessionRecord& session, const WindowingSpec& spec) {
  std::vector<DetectionWindow> out;
  for (const auto& ref : extract_window_refs(session, spec)) out.push_back(materialize(session, ref, spec));
  return out;
}

void znorm_trace(std::vector<double>& trace, const std::string& what) {
  if (trace.empty()) throw ValidationError("znorm: empty trace for " + what);
  const double n = static_cast<double>(trace.size());
  const double mean = std::accumulate(trace.begin(), trace.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : trace) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / n);
  if (!(sd > 0.0)) throw ValidationError("znorm: constant signal (zero variance) in " + what);
  for (double& v : trace) v = (v - mean) / sd;
}

SessionRecord znorm_eda(SessionRecord session) {
  znorm_trace(session.eda, "session '" + session.session_id + "'");
  return session;
}

ThermalFrame apply_body_mask(const ThermalFrame& frame) {
  if (frame.pixels.size() != frame.mask.size()) throw ValidationError("apply_body_mask: pixel/mask shape mismatch");
  if (frame.pixels.size() != frame.size()) throw ValidationError("apply_body_mask: grid does not match height x width");
  ThermalFrame out = frame;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = out.mask[i] ? out.pixels[i] : 0.0f;
  return out;
}

void mask_window(ThermalWindow& window) {
  if (window.pixels.size() != window.mask.size()) throw ValidationError("mask_window: pixel/mask shape mismatch");
  for (std::size_t i = 0; i < window.pixels.size(); ++i) {
    if (!window.mask[i]) window.pixels[i] = 0.0f;
  }
}

ThermalWindow znorm_thermal(ThermalWindow window) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < window.pixels.size(); ++i) {
    if (window.mask[i]) {
      sum += window.pixels[i];
      ++count;
    }
  }
  if (count == 0) throw ValidationError("znorm_thermal: window has no body pixels");
  const double mean = sum / static_cast<double>(count);
  double ss = 0.0;
  for (std::size_t i = 0; i < window.pixels.size(); ++i) {
    if (window.mask[i]) ss += (window.pixels[i] - mean) * (window.pixels[i] - mean);
  }
  const double sd = std::sqrt(ss / static_cast<double>(count));
  if (!(sd > 0.0)) throw ValidationError("znorm_thermal: zero variance over body pixels");
  for (std::size_t i = 0; i < window.pixels.size(); ++i) {
    window.pixels[i] = window.mask[i] ? static_cast<float>((window.pixels[i] - mean) / sd) : 0.0f;
  }
  return window;
}

EdaFeatureVector eda_features(std::span<const double> samples) {
  if (samples.empty()) throw ValidationError("eda_features: empty series");
  const double n = static_cast<double>(samples.size());
  EdaFeatureVector f;
  f.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
  f.min = *lo;
  f.max = *hi;
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  f.median = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  double diff = 0.0;
  for (std::size_t i = 1; i < samples.size(); ++i) diff += std::abs(samples[i] - samples[i - 1]);
  f.variability = samples.size() > 1 ? diff / (n - 1.0) : 0.0;
  double ss = 0.0;
  for (double v : samples) ss += (v - f.mean) * (v - f.mean);
  f.std = std::sqrt(ss / n);
  // Rounding in the mean can push it a hair outside [min, max] for constant input.
  f.mean = std::clamp(f.mean, f.min, f.max);
  return f;
}

void mask_body_part(DetectionWindow& window, BodyPart part) {
  const auto label = static_cast<std::uint8_t>(part);
  for (std::size_t i = 0; i < window.part_map.size(); ++i) {
    if (window.part_map[i] == label) {
      window.thermal.pixels[i] = 0.0f;
      window.thermal.mask[i] = 0;
      window.part_map[i] = 0;
    }
  }
}

std::vector<BodyPart> draw_masked_parts(const MaskAugmentSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  std::discrete_distribution<int> count_dist(spec.probabilities.begin(), spec.probabilities.end());
  const int count = count_dist(rng);
  std::array<int, kNumBodyParts> parts;
  std::iota(parts.begin(), parts.end(), 1);
  // Partial Fisher-Yates: the first `count` entries are a uniform subset.
  std::vector<BodyPart> out;
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> pick(i, kNumBodyParts - 1);
    std::swap(parts[i], parts[pick(rng)]);
    out.push_back(static_cast<BodyPart>(parts[i]));
  }
  return out;
}

DetectionWindow augment_partial_mask(DetectionWindow window, const MaskAugmentSpec& spec, std::mt19937_64& rng,
                                     int* masked_count) {
  const auto parts = draw_masked_parts(spec, rng);
  for (BodyPart p : parts) mask_body_part(window, p);
  if (masked_count) *masked_count = static_cast<int>(parts.size());
  return window;
}

std::string PreparedWindow::id() const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", start_time);
  return session_id + "@" + buf;
}

PreparedWindow prepare_window(const DetectionWindow& raw) {
  ThermalWindow thermal = raw.thermal;
  mask_window(thermal);
  thermal = znorm_thermal(std::move(thermal));
  PreparedWindow w;
  w.frames = thermal.frames;
  w.height = thermal.height;
  w.width = thermal.width;
  w.thermal = std::move(thermal.pixels);
  w.part_map = raw.part_map;
  w.eda = eda_features(raw.eda);
  w.label = raw.label;
  w.task_name = raw.task_name;
  w.session_id = raw.session_id;
  w.participant_id = raw.participant_id;
  w.distance_feet = raw.distance_feet;
  w.start_time = raw.thermal.start_time;
  return w;
}

std::vector<PreparedWindow> prepare_session(const SessionRecord& normalized, const WindowingSpec& spec,
                                            std::size_t session_index) {
  std::vector<PreparedWindow> out;
  for (const auto& ref : extract_window_refs(normalized, spec, session_index)) {
    out.push_back(prepare_window(materialize(normalized, ref, spec)));
    out.back().session_index = session_index;
  }
  return out;
}

void mask_parts(PreparedWindow& window, const std::vector<BodyPart>& parts) {
  if (parts.empty()) return;
  std::array<bool, kNumBodyParts + 1> hit{};
  for (BodyPart p : parts) hit[static_cast<int>(p)] = true;
  for (std::size_t i = 0; i < window.part_map.size(); ++i) {
    if (hit[window.part_map[i]]) window.thermal[i] = 0.0f;
  }
}

std::vector<WindowRef> balance_undersample(const std::vector<WindowRef>& windows, std::mt19937_64& rng) {
  return balance_undersample(windows, [](const WindowRef& w) { return w.label; }, rng);
}

std::vector<DetectionWindow> balance_undersample(const std::vector<DetectionWindow>& windows, std::mt19937_64& rng) {
  return balance_undersample(windows, [](const DetectionWindow& w) { return w.label; }, rng);
}

std::uint64_t SplitPlan::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xFF;
      h *= 1099511628211ull;
    }
  };
  mix(folds.size());
  for (const auto& f : folds) {
    mix(f.train_sessions.size());
    for (auto s : f.train_sessions) mix(s);
    mix(f.val_sessions.size());
    for (auto s : f.val_sessions) mix(s);
  }
  return h;
}

SplitPlan person_disjoint_folds(const std::vector<std::string>& participants, int k, int val_sessions_per_fold,
                                std::mt19937_64& rng, std::uint64_t seed) {
  if (k < 1) throw ValidationError("person_disjoint_folds: fold count must be >= 1");
  if (val_sessions_per_fold < 1) throw ValidationError("person_disjoint_folds: need >= 1 validation session per fold");
  if (static_cast<std::size_t>(k) * static_cast<std::size_t>(val_sessions_per_fold) > participants.size()) {
    throw ValidationError("person_disjoint_folds: " + std::to_string(k) + " folds x " +
                          std::to_string(val_sessions_per_fold) + " validation sessions exceeds " +
                          std::to_string(participants.size()) + " sessions");
  }
  // Unique participants in first-appearance order, then shuffled.
  std::vector<std::string> people;
  std::set<std::string> seen;
  for (const auto& p : participants) {
    if (seen.insert(p).second) people.push_back(p);
  }
  std::shuffle(people.begin(), people.end(), rng);

  SplitPlan plan;
  plan.seed = seed;
  std::size_t cursor = 0;
  for (int f = 0; f < k; ++f) {
    std::set<std::string> val_people;
    std::size_t val_count = 0;
    while (val_count < static_cast<std::size_t>(val_sessions_per_fold)) {
      if (cursor >= people.size()) {
        throw ValidationError("person_disjoint_folds: not enough participants for disjoint validation sets");
      }
      const auto& person = people[cursor++];
      val_people.insert(person);
      val_count += static_cast<std::size_t>(std::count(participants.begin(), participants.end(), person));
    }
    Fold fold;
    for (std::size_t s = 0; s < participants.size(); ++s) {
      (val_people.count(participants[s]) ? fold.val_sessions : fold.train_sessions).push_back(s);
    }
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

void write_fold_cache(const std::filesystem::path& directory, const SplitPlan& plan,
                      const std::vector<SessionRecord>& sessions, const std::vector<std::vector<WindowRef>>& windows) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) throw IoError("cannot create fold cache directory '" + directory.string() + "'");
  auto list = [&](const std::vector<std::size_t>& session_ids) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (auto s : session_ids) {
      for (const auto& w : windows.at(s)) {
        arr.push_back({{"session_id", sessions.at(s).session_id},
                       {"participant_id", sessions.at(s).participant_id},
                       {"start_time", w.start_time},
                       {"first_frame", w.first_frame},
                       {"first_eda", w.first_eda},
                       {"task", w.task_name},
                       {"label", w.label}});
      }
    }
    return arr;
  };
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    nlohmann::ordered_json j;
    j["fold"] = f;
    j["plan_seed"] = plan.seed;
    j["plan_hash"] = plan.hash();
    j["train"] = list(plan.folds[f].train_sessions);
    j["val"] = list(plan.folds[f].val_sessions);
    std::ofstream os(directory / ("fold_" + std::to_string(f) + ".json"), std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write fold cache in '" + directory.string() + "'");
    os << j.dump(1) << "\n";
  }
}

}  // namespace thermaco::prep
