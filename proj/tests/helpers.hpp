#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "thermaco/synthgen.hpp"
#include "thermaco/training.hpp"

namespace fixtures {

/// Unique scratch directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("thermaco_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Short sessions (two 30 s non-stress tasks, four stress tasks) for fast tests.
inline thermaco::synth::SynthConfig short_config(int participants = 4) {
  thermaco::synth::SynthConfig c;
  c.n_participants = participants;
  c.task_template = {{"calm-video", 0, 30.0}, {"counting", 0, 30.0}, {"stress-video", 1, 15.0},
                     {"song-prep", 1, 15.0},  {"arithmetic", 1, 15.0}, {"memory", 1, 15.0}};
  return c;
}

/// Random normalized-looking windows with a centered body block and
/// alternating labels.
inline std::vector<thermaco::prep::PreparedWindow> random_windows(int n, int frames, int height, int width,
                                                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<thermaco::prep::PreparedWindow> out(n);
  for (int i = 0; i < n; ++i) {
    auto& w = out[i];
    w.frames = frames;
    w.height = height;
    w.width = width;
    w.thermal.resize(static_cast<std::size_t>(frames) * height * width);
    w.part_map.resize(w.thermal.size());
    for (std::size_t k = 0; k < w.thermal.size(); ++k) {
      const int r = static_cast<int>(k / width) % height;
      const int c = static_cast<int>(k % width);
      const bool body = r >= height / 4 && c >= width / 4 && c < 3 * width / 4;
      w.part_map[k] = body ? static_cast<std::uint8_t>(1 + (r < height / 2 ? 0 : 2) + (c < width / 2 ? 0 : 1)) : 0;
      w.thermal[k] = body ? static_cast<float>(normal(rng)) : 0.0f;
    }
    std::array<double, 6> f;
    for (auto& v : f) v = normal(rng);
    w.eda = {f[0], std::min(f[0], f[1]) - 1.0, std::max(f[0], f[2]) + 1.0, f[0], std::abs(f[4]), std::abs(f[5])};
    w.label = i % 2;
    w.session_id = "s" + std::to_string(i);
    w.participant_id = "p" + std::to_string(i);
    w.distance_feet = 5.0;
    w.start_time = 0.0;
  }
  return out;
}

inline thermaco::train::WindowSet window_set(const std::vector<thermaco::prep::PreparedWindow>& windows) {
  thermaco::train::WindowSet set;
  for (const auto& w : windows) set.push_back(&w);
  return set;
}

struct GroupError {
  std::string name;
  std::size_t size = 0;
  double relative_error = 0.0;
  std::size_t kinks = 0;  // coordinates skipped as non-differentiable within +-eps
};

/// Central finite differences of the batch total loss against the analytic
/// gradient, one relative error per trainable parameter array. Training mode
/// with a fixed dropout stream, so the loss is a deterministic function of the
/// parameters. A coordinate whose one-sided slopes disagree sits on a ReLU
/// kink inside the stencil, where the derivative is undefined; it is skipped
/// and counted. Groups whose gradient norm is below `floor` (exactly zero by
/// symmetry, e.g. an attention key bias) are judged on the absolute error.
inline std::vector<GroupError> gradient_check(thermaco::ModelBundle<double>& bundle,
                                              const thermaco::Batch<double>& batch,
                                              const thermaco::train::TrainConfig& config, double eps = 1e-6,
                                              std::uint64_t dropout_seed = 5, double floor = 1e-5) {
  using namespace thermaco;
  const auto loss = [&] {
    std::mt19937_64 rng(dropout_seed);
    return train::compute_batch_loss(bundle, batch, config, &rng, false).total;
  };
  bundle.zero_grad();
  {
    std::mt19937_64 rng(dropout_seed);
    train::compute_batch_loss(bundle, batch, config, &rng, true);
  }
  const double l0 = loss();
  std::vector<GroupError> out;
  for (auto* p : bundle.parameters()) {
    if (!p->trainable) continue;
    const std::vector<double> analytic = p->grad;
    double diff = 0, na = 0, nsq = 0;
    std::size_t kinks = 0;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double v = p->value[i];
      p->value[i] = v + eps;
      const double lp = loss();
      p->value[i] = v - eps;
      const double lm = loss();
      p->value[i] = v;
      const double forward = (lp - l0) / eps, backward = (l0 - lm) / eps;
      if (std::abs(forward - backward) > 1e-3 + 1e-2 * std::max(std::abs(forward), std::abs(backward))) {
        ++kinks;
        continue;
      }
      const double numeric = (lp - lm) / (2 * eps);
      diff += (numeric - analytic[i]) * (numeric - analytic[i]);
      na += analytic[i] * analytic[i];
      nsq += numeric * numeric;
    }
    const double scale = std::max(std::sqrt(na), std::sqrt(nsq));
    out.push_back({p->name, p->value.size(), std::sqrt(diff) / std::max(scale, floor), kinks});
  }
  return out;
}

}  // namespace fixtures
