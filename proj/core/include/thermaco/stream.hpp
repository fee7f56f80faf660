#pragma once

// Sensor-rate replay of a recorded session with sliding-window, thermal-only
// inference. A paced producer thread feeds frames through a bounded queue to
// a consumer that keeps a ring of the latest window and infers on every
// stride boundary.

#include <cstddef>
#include <filesystem>
#include <vector>

#include "thermaco/datamodel.hpp"
#include "thermaco/models.hpp"
#include "thermaco/preprocess.hpp"

namespace thermaco::stream {

struct StreamOptions {
  bool realtime = false;
  std::size_t queue_capacity = 256;  // frames
};

struct StreamPrediction {
  double start_time = 0.0;
  double stress_probability = 0.0;
  int predicted = kNonStress;
  double latency_s = 0.0;  // window completion -> prediction available
};

struct StreamReport {
  std::size_t frames = 0;
  std::size_t windows = 0;
  double latency_mean_s = 0.0;
  double latency_p95_s = 0.0;
  double latency_max_s = 0.0;
  std::size_t deadline_misses = 0;  // latency above the stride
  double input_fps = 0.0;           // sustained ingestion rate
  double pacing_error_p95_s = 0.0;  // |inter-arrival - 1/fps|, realtime only
  std::size_t max_queue_depth = 0;
  bool backlog = false;             // producer found the queue full at least once
  double wall_time_s = 0.0;
  std::vector<StreamPrediction> predictions;
};

/// Replays the session frame by frame. Thermal-only kinds only.
StreamReport replay_benchmark(const SessionRecord& session, ModelBundle<float>& bundle,
                              const prep::WindowingSpec& spec, const StreamOptions& options);

StreamReport replay_benchmark(const std::filesystem::path& session_dir, ModelBundle<float>& bundle,
                              const prep::WindowingSpec& spec, const StreamOptions& options);

/// Offline reference: extract_windows + prepare_window + forward_infer.
std::vector<StreamPrediction> batch_predictions(const SessionRecord& session, ModelBundle<float>& bundle,
                                                const prep::WindowingSpec& spec);

/// Structured-text summary and per-window latency CSV.
void write_stream_report(const std::filesystem::path& directory, const StreamReport& report);

}  // namespace thermaco::stream
