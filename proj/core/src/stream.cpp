#include "thermaco/stream.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <mutex>
#include <thread>

#include "json.hpp"
#include "thermaco/session_io.hpp"

namespace thermaco::stream {

namespace {

using Clock = std::chrono::steady_clock;

struct Frame {
  std::size_t index = 0;
  Clock::time_point arrival;
  std::vector<float> pixels;
  std::vector<std::uint8_t> mask;
};

class FrameQueue {
 public:
  explicit FrameQueue(std::size_t capacity) : capacity_(std::max<std::size_t>(capacity, 1)) {}

  /// Returns false when the queue was full on arrival (the push still waits).
  bool push(Frame f) {
    std::unique_lock lock(mutex_);
    const bool had_room = items_.size() < capacity_;
    not_full_.wait(lock, [&] { return items_.size() < capacity_; });
    f.arrival = Clock::now();
    items_.push_back(std::move(f));
    max_depth_ = std::max(max_depth_, items_.size());
    not_empty_.notify_one();
    return had_room;
  }
  void close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    not_empty_.notify_all();
  }
  bool pop(Frame& out) {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
    if (items_.empty()) return false;
    out = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return true;
  }
  std::size_t max_depth() const {
    std::lock_guard lock(mutex_);
    return max_depth_;
  }

 private:
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::condition_variable not_full_, not_empty_;
  std::deque<Frame> items_;
  std::size_t max_depth_ = 0;
  bool closed_ = false;
};

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size()))) - 1;
  return v[std::min(idx, v.size() - 1)];
}

StreamPrediction infer(ModelBundle<float>& bundle, ThermalWindow window) {
  prep::mask_window(window);
  window = prep::znorm_thermal(std::move(window));
  const auto p = forward_infer(bundle, window.pixels);
  StreamPrediction out;
  out.start_time = window.start_time;
  out.stress_probability = p[1];
  out.predicted = p[1] >= 0.5 ? kStress : kNonStress;
  return out;
}

void check_bundle(const ModelBundle<float>& bundle) {
  if (kind_uses_eda_at_inference(bundle.kind)) {
    throw ValidationError(std::string("stream replay needs a thermal-only model, got '") + trainer_kind_name(bundle.kind) + "'");
  }
}

}  // namespace

StreamReport replay_benchmark(const SessionRecord& session, ModelBundle<float>& bundle, const prep::WindowingSpec& spec,
                              const StreamOptions& options) {
  session.validate();
  spec.validate();
  check_bundle(bundle);
  const std::size_t fs = session.frame_size();
  const std::size_t n_frames = session.frame_count();
  const std::size_t window_frames = samples_for(spec.window_seconds, session.thermal_fps);
  const auto refs = prep::extract_window_refs(session, spec);
  const double period = 1.0 / session.thermal_fps;

  FrameQueue queue(options.queue_capacity);
  std::vector<Clock::time_point> arrivals(n_frames);
  bool backlog = false;
  const auto t0 = Clock::now();

  std::jthread producer([&] {
    for (std::size_t i = 0; i < n_frames; ++i) {
      if (options.realtime) {
        std::this_thread::sleep_until(t0 + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(i * period)));
      }
      Frame f;
      f.index = i;
      f.pixels.assign(session.frames.begin() + i * fs, session.frames.begin() + (i + 1) * fs);
      f.mask.assign(session.masks.begin() + i * fs, session.masks.begin() + (i + 1) * fs);
      if (!queue.push(std::move(f)) && options.realtime) backlog = true;
    }
    queue.close();
  });

  StreamReport report;
  std::vector<Frame> ring(window_frames);
  std::size_t next_ref = 0;
  Frame f;
  while (queue.pop(f)) {
    const std::size_t i = f.index;
    arrivals[i] = f.arrival;
    ring[i % window_frames] = std::move(f);
    ++report.frames;
    while (next_ref < refs.size() && refs[next_ref].first_frame + window_frames - 1 < i) ++next_ref;
    if (next_ref >= refs.size() || refs[next_ref].first_frame + window_frames - 1 != i) continue;
    ThermalWindow w;
    w.frames = static_cast<int>(window_frames);
    w.height = session.height;
    w.width = session.width;
    w.start_time = refs[next_ref].start_time;
    w.pixels.reserve(window_frames * fs);
    w.mask.reserve(window_frames * fs);
    for (std::size_t k = refs[next_ref].first_frame; k <= i; ++k) {
      const Frame& src = ring[k % window_frames];
      w.pixels.insert(w.pixels.end(), src.pixels.begin(), src.pixels.end());
      w.mask.insert(w.mask.end(), src.mask.begin(), src.mask.end());
    }
    auto pred = infer(bundle, std::move(w));
    pred.latency_s = std::chrono::duration<double>(Clock::now() - arrivals[i]).count();
    report.predictions.push_back(pred);
    ++next_ref;
  }
  producer.join();
  report.wall_time_s = std::chrono::duration<double>(Clock::now() - t0).count();

  std::vector<double> lat;
  for (const auto& p : report.predictions) {
    lat.push_back(p.latency_s);
    if (p.latency_s > spec.stride_seconds()) ++report.deadline_misses;
  }
  report.windows = report.predictions.size();
  if (!lat.empty()) {
    double sum = 0.0;
    for (double l : lat) sum += l;
    report.latency_mean_s = sum / static_cast<double>(lat.size());
    report.latency_p95_s = percentile(lat, 0.95);
    report.latency_max_s = *std::max_element(lat.begin(), lat.end());
  }
  if (n_frames > 1) {
    const double span = std::chrono::duration<double>(arrivals.back() - arrivals.front()).count();
    report.input_fps = span > 0.0 ? static_cast<double>(n_frames - 1) / span : 0.0;
    if (options.realtime) {
      std::vector<double> err;
      for (std::size_t i = 1; i < n_frames; ++i) {
        err.push_back(std::abs(std::chrono::duration<double>(arrivals[i] - arrivals[i - 1]).count() - period));
      }
      report.pacing_error_p95_s = percentile(err, 0.95);
    }
  }
  report.max_queue_depth = queue.max_depth();
  report.backlog = backlog;
  return report;
}

StreamReport replay_benchmark(const std::filesystem::path& session_dir, ModelBundle<float>& bundle,
                              const prep::WindowingSpec& spec, const StreamOptions& options) {
  return replay_benchmark(read_session(session_dir), bundle, spec, options);
}

std::vector<StreamPrediction> batch_predictions(const SessionRecord& session, ModelBundle<float>& bundle,
                                                const prep::WindowingSpec& spec) {
  check_bundle(bundle);
  std::vector<StreamPrediction> out;
  for (const auto& w : prep::extract_windows(session, spec)) {
    const auto prepared = prep::prepare_window(w);
    const auto p = forward_infer(bundle, prepared.thermal);
    StreamPrediction s;
    s.start_time = prepared.start_time;
    s.stress_probability = p[1];
    s.predicted = p[1] >= 0.5 ? kStress : kNonStress;
    out.push_back(s);
  }
  return out;
}

void write_stream_report(const std::filesystem::path& directory, const StreamReport& report) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) throw IoError("cannot create stream report directory '" + directory.string() + "'");
  nlohmann::ordered_json j{{"frames", report.frames},
                           {"windows", report.windows},
                           {"latency_mean_s", report.latency_mean_s},
                           {"latency_p95_s", report.latency_p95_s},
                           {"latency_max_s", report.latency_max_s},
                           {"deadline_misses", report.deadline_misses},
                           {"input_fps", report.input_fps},
                           {"pacing_error_p95_s", report.pacing_error_p95_s},
                           {"max_queue_depth", report.max_queue_depth},
                           {"backlog", report.backlog},
                           {"wall_time_s", report.wall_time_s}};
  {
    std::ofstream os(directory / "stream_report.json", std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write stream report");
    os << j.dump(2) << '\n';
  }
  std::ofstream os(directory / "latency.csv", std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write latency CSV");
  os << "start_time,latency_s,stress_probability,predicted\n";
  for (const auto& p : report.predictions) {
    os << format_double(p.start_time) << ',' << format_double(p.latency_s) << ','
       << format_double(p.stress_probability) << ',' << p.predicted << '\n';
  }
}

}  // namespace thermaco::stream
