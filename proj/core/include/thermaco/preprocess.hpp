#pragma once

// Session -> model-ready windows: sliding-window extraction, per-participant
// EDA z-scoring, body masking, window-wise thermal z-scoring over body pixels,
// EDA summary features, partial-body masking augmentation, class balancing and
// person-disjoint fold plans.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "thermaco/datamodel.hpp"

namespace thermaco::prep {

struct WindowingSpec {
  double window_seconds = 5.0;
  double overlap_seconds = 2.0;

  double stride_seconds() const { return window_seconds - overlap_seconds; }
  void validate() const;
};

struct MaskAugmentSpec {
  // Probability of masking 0, 1, 2, 3 body parts.
  std::array<double, 4> probabilities{0.30, 0.23, 0.23, 0.24};

  void validate() const;
};

/// Lightweight handle to one window of a session; materialize() builds the
/// DetectionWindow.
struct WindowRef {
  std::size_t session = 0;  // index into the caller's session list
  std::size_t first_frame = 0;
  std::size_t first_eda = 0;
  double start_time = 0.0;
  int label = kNonStress;
  std::string task_name;
};

/// Start times 0, stride, 2*stride, ... while start + window <= duration.
std::vector<double> window_starts(double duration_s, const WindowingSpec& spec);

/// Majority-overlap label of [start, end); ties go to non-stress. Also reports
/// the task with the largest overlap.
int window_label(const std::vector<TaskSegment>& schedule, double start, double end, std::string* task_name = nullptr);

std::vector<WindowRef> extract_window_refs(const SessionRecord& session, const WindowingSpec& spec,
                                           std::size_t session_index = 0);

/// Raw (unmasked, unnormalized) window slices.
DetectionWindow materialize(const SessionRecord& session, const WindowRef& ref, const WindowingSpec& spec);

std::vector<DetectionWindow> extract_windows(const SessionRecord& session, const WindowingSpec& spec);

/// Returns the session with its EDA trace z-scored (population std).
SessionRecord znorm_eda(SessionRecord session);

/// In-place variant over a bare trace; `what` names the trace in errors.
void znorm_trace(std::vector<double>& trace, const std::string& what);

ThermalFrame apply_body_mask(const ThermalFrame& frame);

/// Zeroes background pixels of every frame in place.
void mask_window(ThermalWindow& window);

/// Z-scores body pixels jointly over all frames; background stays exactly 0.
ThermalWindow znorm_thermal(ThermalWindow window);

EdaFeatureVector eda_features(std::span<const double> samples);
inline EdaFeatureVector eda_features(const EdaSeries& series) { return eda_features(series.samples); }

/// Draws how many parts to mask and which ones (distinct, uniform).
std::vector<BodyPart> draw_masked_parts(const MaskAugmentSpec& spec, std::mt19937_64& rng);

/// Masks a random number of distinct body parts in every frame of the window.
/// Returns the number of parts masked through `masked_count` when non-null.
DetectionWindow augment_partial_mask(DetectionWindow window, const MaskAugmentSpec& spec, std::mt19937_64& rng,
                                     int* masked_count = nullptr);

/// Zeroes one body part (pixels and mask) in every frame.
void mask_body_part(DetectionWindow& window, BodyPart part);

/// Model-ready sample: body-masked, window-normalized thermal pixels plus the
/// six summary features of the (participant-normalized) EDA slice.
struct PreparedWindow {
  int frames = 0;
  int height = 0;
  int width = 0;
  std::vector<float> thermal;          // frames * height * width, background 0
  std::vector<std::uint8_t> part_map;  // same layout
  EdaFeatureVector eda;
  int label = kNonStress;
  std::string task_name;
  std::string session_id;
  std::string participant_id;
  double distance_feet = 0.0;
  double start_time = 0.0;
  std::size_t session_index = 0;

  /// "<session_id>@<start_time>", unique within a dataset.
  std::string id() const;
};

/// Body mask, window z-norm and EDA features for one raw window.
PreparedWindow prepare_window(const DetectionWindow& raw);

/// All windows of a session whose EDA trace is already z-scored.
std::vector<PreparedWindow> prepare_session(const SessionRecord& normalized, const WindowingSpec& spec,
                                            std::size_t session_index = 0);

/// Zeroes the pixels of the given parts in every frame (part labels are kept).
void mask_parts(PreparedWindow& window, const std::vector<BodyPart>& parts);

/// Randomly drops majority-class items until both classes have equal counts.
/// Surviving items keep their original relative order.
template <typename Item, typename LabelOf>
std::vector<Item> balance_undersample(const std::vector<Item>& items, LabelOf label_of, std::mt19937_64& rng);

std::vector<WindowRef> balance_undersample(const std::vector<WindowRef>& windows, std::mt19937_64& rng);
std::vector<DetectionWindow> balance_undersample(const std::vector<DetectionWindow>& windows, std::mt19937_64& rng);

struct Fold {
  std::vector<std::size_t> train_sessions;
  std::vector<std::size_t> val_sessions;
};

struct SplitPlan {
  std::uint64_t seed = 0;
  std::vector<Fold> folds;

  /// Stable digest of the assignments; equal plans hash equally.
  std::uint64_t hash() const;
};

/// Person-disjoint folds: each fold validates on val_sessions_per_fold
/// sessions (disjoint across folds) and trains on all sessions of other
/// participants. `participants[i]` is the participant of session i.
SplitPlan person_disjoint_folds(const std::vector<std::string>& participants, int k, int val_sessions_per_fold,
                                std::mt19937_64& rng, std::uint64_t seed = 0);

/// Writes one structured-text file per fold listing window references and labels.
void write_fold_cache(const std::filesystem::path& directory, const SplitPlan& plan,
                      const std::vector<SessionRecord>& sessions, const std::vector<std::vector<WindowRef>>& windows);

// ---- template implementation ----

template <typename Item, typename LabelOf>
std::vector<Item> balance_undersample(const std::vector<Item>& items, LabelOf label_of, std::mt19937_64& rng) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < items.size(); ++i) (label_of(items[i]) == kStress ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty()) throw ValidationError("balance_undersample: one class is absent");
  auto& major = pos.size() > neg.size() ? pos : neg;
  const std::size_t keep = std::min(pos.size(), neg.size());
  std::vector<char> keep_flag(items.size(), 1);
  if (major.size() > keep) {
    std::shuffle(major.begin(), major.end(), rng);
    for (std::size_t i = keep; i < major.size(); ++i) keep_flag[major[i]] = 0;
  }
  std::vector<Item> out;
  out.reserve(2 * keep);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (keep_flag[i]) out.push_back(items[i]);
  }
  return out;
}

}  // namespace thermaco::prep
