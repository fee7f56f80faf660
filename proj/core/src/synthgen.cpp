#include "thermaco/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "thermaco/session_io.hpp"

namespace thermaco::synth {
namespace fs = std::filesystem;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double normal(std::mt19937_64& rng, double mean, double sd) {
  return std::normal_distribution<double>(mean, sd)(rng);
}

// Unit-peak Bateman pulse exp(-t/decay) - exp(-t/rise).
struct BatemanPulse {
  double rise;
  double decay;
  double norm;

  BatemanPulse(double tau_rise, double tau_decay) : rise(tau_rise), decay(tau_decay) {
    const double t_peak = std::log(decay / rise) * rise * decay / (decay - rise);
    norm = 1.0 / (std::exp(-t_peak / decay) - std::exp(-t_peak / rise));
  }
  double operator()(double t) const {
    return t <= 0.0 ? 0.0 : norm * (std::exp(-t / decay) - std::exp(-t / rise));
  }
};

}  // namespace

std::vector<TaskTemplate> default_task_template() {
  return {
      {"calm-video", kNonStress, 180.0}, {"counting", kNonStress, 60.0}, {"stress-video", kStress, 180.0},
      {"song-prep", kStress, 30.0},      {"arithmetic", kStress, 180.0}, {"memory", kStress, 120.0},
  };
}

std::vector<TaskSegment> build_schedule(const std::vector<TaskTemplate>& tasks) {
  std::vector<TaskSegment> out;
  double t = 0.0;
  for (const auto& task : tasks) {
    out.push_back(TaskSegment{task.name, task.label, t, t + task.duration_s});
    t += task.duration_s;
  }
  return out;
}

void SynthConfig::validate() const {
  if (n_participants < 0) throw ConfigError("synth: n_participants must be non-negative");
  if (distances_feet.empty()) throw ConfigError("synth: distances_feet must not be empty");
  for (double d : distances_feet) {
    if (!(d > 0.0)) throw ConfigError("synth: distances must be positive");
  }
  if (distance_jitter_feet < 0.0) throw ConfigError("synth: distance jitter must be non-negative");
  if (height <= 0 || width <= 0) throw ConfigError("synth: frame shape must be positive");
  if (!(thermal_fps > 0.0) || !(eda_rate_hz > 0.0)) throw ConfigError("synth: sampling rates must be positive");
  if (scr_rate_stress < 0.0 || scr_rate_nonstress < 0.0) throw ConfigError("synth: SCR rates must be non-negative");
  if (coupling_gain < 0.0) throw ConfigError("synth: coupling_gain must be non-negative");
  if (!(eda_latency_min_s <= eda_latency_max_s) || !(thermal_latency_min_s <= thermal_latency_max_s)) {
    throw ConfigError("synth: latency ranges must be ordered");
  }
  if (!(eda_latency_max_s < thermal_latency_min_s)) {
    throw ConfigError("synth: EDA latency upper bound must be below the thermal latency lower bound");
  }
  if (!(scr_tau_rise_s > 0.0 && scr_tau_rise_s < scr_tau_decay_s)) {
    throw ConfigError("synth: SCR time constants need 0 < rise < decay");
  }
  if (!(thermal_tau_s > 0.0) || !(evaporative_tau_s > 0.0) || evaporative_delay_s < 0.0) {
    throw ConfigError("synth: thermal time constants must be positive");
  }
  if (noise_sigma_base < 0.0 || noise_distance_coeff < 0.0) throw ConfigError("synth: noise must be non-negative");
  if (task_template.empty()) throw ConfigError("synth: task template must not be empty");
  for (const auto& t : task_template) {
    if (!(t.duration_s > 0.0)) throw ConfigError("synth: task '" + t.name + "' has non-positive duration");
  }
}

std::uint64_t person_seed(std::uint64_t master_seed, int index) {
  return splitmix64(splitmix64(master_seed) ^ (0xA24BAED4963EE407ull * static_cast<std::uint64_t>(index + 1)));
}

PersonProfile make_profile(const SynthConfig& config, int index) {
  PersonProfile p;
  p.index = index;
  char id[32];
  std::snprintf(id, sizeof(id), "P%03d", index);
  p.participant_id = id;
  p.seed = person_seed(config.master_seed, index);
  // The profile stream is separate from the session stream derived from the same seed.
  std::mt19937_64 rng(splitmix64(p.seed ^ 0x5EEDF00Dull));
  const auto band = static_cast<std::size_t>(index) % config.distances_feet.size();
  p.distance_feet = config.distances_feet[band] + uniform(rng, 0.0, 1.0) * config.distance_jitter_feet;
  p.baseline_skin_temp = uniform(rng, 32.0, 35.0);
  p.face_offset = normal(rng, config.face_offset_mean, config.face_offset_sd);
  p.torso_offset = normal(rng, -1.5, 0.2);
  p.upper_arm_offset = normal(rng, -1.0, 0.2);
  p.forearm_offset = normal(rng, -0.4, 0.2);
  p.tonic_eda_level = uniform(rng, 2.0, 8.0);
  p.scr_amplitude_scale = uniform(rng, 0.6, 1.4);
  p.body_scale = uniform(rng, 0.92, 1.08);
  p.head_ratio = uniform(rng, 0.9, 1.1);
  p.torso_ratio = uniform(rng, 0.9, 1.1);
  p.arm_ratio = uniform(rng, 0.9, 1.1);
  return p;
}

EdaTrace generate_eda(const std::vector<TaskSegment>& schedule, const PersonProfile& profile,
                      const SynthConfig& config, std::mt19937_64& rng) {
  const double duration = schedule.empty() ? 0.0 : schedule.back().end_s;
  const std::size_t n = samples_for(duration, config.eda_rate_hz);
  const double dt = 1.0 / config.eda_rate_hz;

  // SCR onsets and amplitudes.
  struct Event {
    double time;
    double amplitude;
  };
  std::vector<Event> events;
  for (const auto& seg : schedule) {
    const double rate = seg.label == kStress ? config.scr_rate_stress : config.scr_rate_nonstress;
    if (seg.label == kStress) {
      const double latency = uniform(rng, config.eda_latency_min_s, config.eda_latency_max_s);
      events.push_back({seg.start_s + latency, config.scr_onset_amplitude * profile.scr_amplitude_scale});
    }
    if (rate > 0.0) {
      std::exponential_distribution<double> gap(rate);
      double t = seg.start_s + gap(rng);
      while (t < seg.end_s) {
        const double latency = uniform(rng, config.eda_latency_min_s, config.eda_latency_max_s);
        events.push_back({t + latency, profile.scr_amplitude_scale * uniform(rng, 0.5, 1.5)});
        t += gap(rng);
      }
    }
  }

  const BatemanPulse pulse(config.scr_tau_rise_s, config.scr_tau_decay_s);
  EdaTrace out;
  out.conductance.assign(n, 0.0);
  out.phasic.assign(n, 0.0);
  for (const auto& ev : events) {
    const auto first = static_cast<std::size_t>(std::max(0.0, std::ceil(ev.time / dt)));
    // Pulses are negligible after 12 decay constants.
    const double horizon = ev.time + 12.0 * config.scr_tau_decay_s;
    for (std::size_t i = first; i < n && i * dt <= horizon; ++i) out.phasic[i] += ev.amplitude * pulse(i * dt - ev.time);
  }

  // Tonic level: Ornstein-Uhlenbeck drift around the person's level.
  double drift = 0.0;
  const double decay = std::exp(-dt / config.tonic_drift_tau_s);
  const double innovation = config.tonic_drift_sd * std::sqrt(dt);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    double noise = 0.0;
    if (innovation > 0.0) {
      drift = drift * decay + innovation * unit(rng);
    }
    if (config.eda_noise_sd > 0.0) noise = config.eda_noise_sd * unit(rng);
    out.conductance[i] = profile.tonic_eda_level + drift + out.phasic[i] + noise;
  }
  return out;
}

BodyLayout render_body(const SynthConfig& config, const PersonProfile& profile) {
  const int H = config.height;
  const int W = config.width;
  const double h = config.reference_body_px * config.reference_distance_feet / profile.distance_feet * profile.body_scale;
  const double head_ry = 0.15 * h * profile.head_ratio;
  const double head_rx = 0.11 * h * profile.head_ratio;
  const double torso_hw = 0.20 * h * profile.torso_ratio;
  const double arm_w = 0.11 * h * profile.arm_ratio;
  const double total_w = 2.0 * (torso_hw + arm_w);
  if (h > H || total_w > W) {
    throw ConfigError("synth: body (" + std::to_string(h) + " x " + std::to_string(total_w) +
                      " px) does not fit the " + std::to_string(H) + " x " + std::to_string(W) +
                      " frame at " + std::to_string(profile.distance_feet) + " ft");
  }
  const double y0 = 0.5 * (H - h);
  const double cx = 0.5 * W;
  const double head_cy = y0 + head_ry;
  const double torso_top = y0 + 1.8 * head_ry;
  const double arm_top = torso_top + 0.02 * h;
  const double elbow = y0 + 0.64 * h;
  const double bottom = y0 + h;
  const double neck_bottom = torso_top + 0.08 * h;

  BodyLayout layout;
  layout.body_height_px = h;
  const std::size_t n = static_cast<std::size_t>(H) * W;
  layout.mask.assign(n, 0);
  layout.parts.assign(n, 0);
  layout.neck.assign(n, 0);
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      const double y = r + 0.5;
      const double x = c + 0.5;
      const bool left = x < cx;
      const double dx = x - cx;
      BodyPart part = BodyPart::kBackground;
      const double ey = (y - head_cy) / head_ry;
      const double ex = dx / head_rx;
      if (ex * ex + ey * ey <= 1.0) {
        part = left ? BodyPart::kLeftFace : BodyPart::kRightFace;
      } else if (y >= torso_top && y < bottom && std::abs(dx) < torso_hw) {
        part = left ? BodyPart::kLeftTorso : BodyPart::kRightTorso;
        if (y < neck_bottom && std::abs(dx) < 0.5 * head_rx) layout.neck[r * W + c] = 1;
      } else if (y >= arm_top && y < bottom && std::abs(dx) >= torso_hw && std::abs(dx) < torso_hw + arm_w) {
        if (y < elbow) part = left ? BodyPart::kLeftUpperArm : BodyPart::kRightUpperArm;
        else part = left ? BodyPart::kLeftForearm : BodyPart::kRightForearm;
      }
      if (part != BodyPart::kBackground) {
        layout.mask[r * W + c] = 1;
        layout.parts[r * W + c] = static_cast<std::uint8_t>(part);
      }
    }
  }
  return layout;
}

ThermalTrace generate_thermal(const std::vector<TaskSegment>& schedule, const PersonProfile& profile,
                              const EdaTrace& eda, const SynthConfig& config, std::mt19937_64& rng) {
  const double duration = schedule.empty() ? 0.0 : schedule.back().end_s;
  const std::size_t n_frames = samples_for(duration, config.thermal_fps);
  const BodyLayout body = render_body(config, profile);
  const std::size_t fs = static_cast<std::size_t>(config.height) * config.width;
  const double dt = 1.0 / config.thermal_fps;

  // Static emission map: per-person region offsets plus fixed skin texture.
  std::vector<double> base(fs, config.ambient_level);
  std::vector<std::uint8_t> face_or_neck(fs, 0);
  std::vector<std::uint8_t> evaporative(fs, 0);
  for (std::size_t i = 0; i < fs; ++i) {
    const auto part = static_cast<BodyPart>(body.parts[i]);
    if (part == BodyPart::kBackground) continue;
    double offset = 0.0;
    switch (part) {
      case BodyPart::kLeftFace:
      case BodyPart::kRightFace: offset = profile.face_offset; break;
      case BodyPart::kLeftTorso:
      case BodyPart::kRightTorso: offset = profile.torso_offset; break;
      case BodyPart::kLeftUpperArm:
      case BodyPart::kRightUpperArm: offset = profile.upper_arm_offset; break;
      default: offset = profile.forearm_offset; break;
    }
    base[i] = profile.baseline_skin_temp + offset + normal(rng, 0.0, config.texture_sd);
    const bool face = part == BodyPart::kLeftFace || part == BodyPart::kRightFace;
    const bool forearm = part == BodyPart::kLeftForearm || part == BodyPart::kRightForearm;
    face_or_neck[i] = face || body.neck[i];
    evaporative[i] = face || forearm;
  }

  // Per-segment thermal latency; the response target switches that long after
  // each segment boundary.
  std::vector<double> latency(schedule.size());
  for (auto& l : latency) l = uniform(rng, config.thermal_latency_min_s, config.thermal_latency_max_s);
  auto target_at = [&](double t) {
    for (std::size_t s = schedule.size(); s-- > 0;) {
      if (t >= schedule[s].start_s + latency[s]) return schedule[s].label == kStress ? 1.0 : 0.0;
    }
    return 0.0;
  };

  // Smoothed phasic drive at EDA rate, read with extra delay at frame times.
  std::vector<double> drive(eda.phasic.size(), 0.0);
  {
    const double a = 1.0 - std::exp(-1.0 / (config.eda_rate_hz * config.evaporative_tau_s));
    double state = 0.0;
    for (std::size_t i = 0; i < drive.size(); ++i) {
      state += a * (eda.phasic[i] - state);
      drive[i] = state;
    }
  }
  auto drive_at = [&](double t) {
    const double pos = (t - config.evaporative_delay_s) * config.eda_rate_hz;
    if (pos <= 0.0 || drive.empty()) return 0.0;
    const auto i0 = static_cast<std::size_t>(pos);
    if (i0 + 1 >= drive.size()) return drive.back();
    const double w = pos - static_cast<double>(i0);
    return (1.0 - w) * drive[i0] + w * drive[i0 + 1];
  };

  const double sigma = config.noise_sigma_base + config.noise_distance_coeff * profile.distance_feet;
  const double approach = 1.0 - std::exp(-dt / config.thermal_tau_s);
  std::normal_distribution<double> unit(0.0, 1.0);

  ThermalTrace out;
  out.frame_count = n_frames;
  out.frames.resize(n_frames * fs);
  out.masks.resize(n_frames * fs);
  out.parts.resize(n_frames * fs);
  double response = 0.0;
  for (std::size_t f = 0; f < n_frames; ++f) {
    const double t = static_cast<double>(f) * dt;
    if (f > 0) response += approach * (target_at(t) - response);
    const double stress_term = config.stress_delta * response;
    const double cooling = config.coupling_gain * drive_at(t);
    float* frame = out.frames.data() + f * fs;
    for (std::size_t i = 0; i < fs; ++i) {
      double emitted = base[i];
      if (face_or_neck[i]) emitted += stress_term;
      if (evaporative[i]) emitted -= cooling;
      const double atmospheric = sigma * unit(rng);
      frame[i] = static_cast<float>(emitted + config.reflected_level + atmospheric);
    }
    std::copy(body.mask.begin(), body.mask.end(), out.masks.begin() + f * fs);
    std::copy(body.parts.begin(), body.parts.end(), out.parts.begin() + f * fs);
  }
  return out;
}

SessionRecord generate_session(const PersonProfile& profile, const SynthConfig& config, std::mt19937_64& rng) {
  config.validate();
  SessionRecord s;
  char id[32];
  std::snprintf(id, sizeof(id), "S%03d", profile.index);
  s.session_id = id;
  s.participant_id = profile.participant_id;
  s.distance_feet = profile.distance_feet;
  s.seed = profile.seed;
  s.thermal_fps = config.thermal_fps;
  s.eda_rate_hz = config.eda_rate_hz;
  s.height = config.height;
  s.width = config.width;
  s.task_schedule = build_schedule(config.task_template);
  auto eda = generate_eda(s.task_schedule, profile, config, rng);
  auto thermal = generate_thermal(s.task_schedule, profile, eda, config, rng);
  s.eda = std::move(eda.conductance);
  s.frames = std::move(thermal.frames);
  s.masks = std::move(thermal.masks);
  s.parts = std::move(thermal.parts);
  s.validate();
  return s;
}

SessionRecord generate_participant(const SynthConfig& config, int index) {
  const PersonProfile profile = make_profile(config, index);
  std::mt19937_64 rng(profile.seed);
  return generate_session(profile, config, rng);
}

fs::path generate_benchmark(const SynthConfig& config, const fs::path& out_dir) {
  config.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create dataset directory '" + out_dir.string() + "'");
  nlohmann::ordered_json manifest;
  manifest["format"] = "thermaco-dataset";
  manifest["version"] = 1;
  manifest["master_seed"] = config.master_seed;
  manifest["n_participants"] = config.n_participants;
  manifest["distances_feet"] = config.distances_feet;
  manifest["sessions"] = nlohmann::ordered_json::array();
  for (int i = 0; i < config.n_participants; ++i) {
    const SessionRecord s = generate_participant(config, i);
    char dir[32];
    std::snprintf(dir, sizeof(dir), "session_%03d", i);
    write_session(s, out_dir / dir);
    manifest["sessions"].push_back(
        {{"directory", dir}, {"participant_id", s.participant_id}, {"distance_feet", s.distance_feet}});
  }
  std::ofstream os(out_dir / "dataset.json", std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write dataset manifest in '" + out_dir.string() + "'");
  os << manifest.dump(2) << "\n";
  return out_dir;
}

DatasetManifest read_dataset_manifest(const fs::path& dataset_dir) {
  std::ifstream is(dataset_dir / "dataset.json", std::ios::binary);
  if (!is) throw IoError("missing dataset manifest in '" + dataset_dir.string() + "'");
  nlohmann::json j;
  try {
    is >> j;
    DatasetManifest m;
    m.master_seed = j.at("master_seed").get<std::uint64_t>();
    for (const auto& e : j.at("sessions")) {
      m.sessions.push_back(DatasetEntry{e.at("directory").get<std::string>(), e.at("participant_id").get<std::string>(),
                                        e.at("distance_feet").get<double>()});
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed dataset manifest in '" + dataset_dir.string() + "': " + e.what());
  }
}

std::vector<SessionRecord> load_dataset(const fs::path& dataset_dir) {
  const auto manifest = read_dataset_manifest(dataset_dir);
  std::vector<SessionRecord> sessions;
  sessions.reserve(manifest.sessions.size());
  for (const auto& e : manifest.sessions) sessions.push_back(read_session(dataset_dir / e.directory));
  return sessions;
}

}  // namespace thermaco::synth
