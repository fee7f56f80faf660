#pragma once

// Seeded generator of coupled EDA / thermal sessions.
//
// Thermal intensity follows I = I_EM + I_REF + I_ATM: body emission (baseline
// map, a slow stress response on face and neck, evaporative cooling driven by
// delayed phasic EDA on face and forearms), a constant reflected term, and
// distance-dependent Gaussian atmospheric noise. EDA is a tonic level with
// slow drift plus Bateman-shaped skin conductance responses.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "thermaco/datamodel.hpp"

namespace thermaco::synth {

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

struct TaskTemplate {
  std::string name;
  int label = kNonStress;
  double duration_s = 0.0;
};

/// calm-video 180 s, counting 60 s (non-stress); stress-video 180 s,
/// song-prep 30 s, arithmetic 180 s, memory 120 s (stress).
std::vector<TaskTemplate> default_task_template();

/// Lays the template out back to back from t = 0.
std::vector<TaskSegment> build_schedule(const std::vector<TaskTemplate>& tasks);

struct SynthConfig {
  int n_participants = 24;
  std::vector<double> distances_feet{5.0, 7.0, 9.0};
  double distance_jitter_feet = 2.0;  // uniform in [0, jitter)
  int height = 24;
  int width = 32;
  double thermal_fps = 5.0;
  double eda_rate_hz = 4.0;
  std::vector<TaskTemplate> task_template = default_task_template();

  // Thermal physiology.
  double stress_delta = -0.6;       // face/neck temperature change at full stress response
  double coupling_gain = 0.3;       // k: cooling per unit phasic EDA (0.5 x |stress_delta|)
  double thermal_tau_s = 15.0;      // first-order approach time constant of the stress response
  double evaporative_delay_s = 2.0; // extra delay of sweat cooling behind the phasic EDA
  double evaporative_tau_s = 1.5;   // smoothing of the phasic drive
  double face_offset_mean = 0.8;
  double face_offset_sd = 0.35;
  double ambient_level = 22.0;
  double reflected_level = 0.5;
  double texture_sd = 0.1;
  double noise_sigma_base = 0.2;
  double noise_distance_coeff = 0.3;   // per foot

  // Latencies (seconds after stimulus onset).
  double eda_latency_min_s = 1.0;
  double eda_latency_max_s = 3.0;
  double thermal_latency_min_s = 4.0;
  double thermal_latency_max_s = 5.0;

  // EDA.
  double scr_rate_stress = 0.1;     // events per second
  double scr_rate_nonstress = 0.01;
  double scr_onset_amplitude = 1.5; // relative to the person's SCR scale
  double scr_tau_rise_s = 0.75;
  double scr_tau_decay_s = 2.0;
  double tonic_drift_sd = 0.02;     // OU innovation per sqrt(second)
  double tonic_drift_tau_s = 60.0;
  double eda_noise_sd = 0.01;

  // Geometry: body height in pixels at reference_distance_feet for scale 1.
  double reference_body_px = 20.0;
  double reference_distance_feet = 5.0;

  std::uint64_t master_seed = 20240601;

  void validate() const;
};

struct PersonProfile {
  int index = 0;
  std::string participant_id;
  double distance_feet = 5.0;
  double baseline_skin_temp = 33.5;
  double face_offset = 0.8;
  double torso_offset = -1.5;
  double upper_arm_offset = -1.0;
  double forearm_offset = -0.4;
  double tonic_eda_level = 5.0;
  double scr_amplitude_scale = 1.0;
  double body_scale = 1.0;       // multiplies the distance-derived body height
  double head_ratio = 1.0;       // head size proportion
  double torso_ratio = 1.0;      // torso width proportion
  double arm_ratio = 1.0;        // arm width proportion
  std::uint64_t seed = 0;
};

/// Per-person seed for the participant at `index`; distinct indices give
/// distinct seeds.
std::uint64_t person_seed(std::uint64_t master_seed, int index);

/// Draws a profile for participant `index`; the distance band is assigned
/// round-robin over config.distances_feet.
PersonProfile make_profile(const SynthConfig& config, int index);

struct EdaTrace {
  std::vector<double> conductance;  // raw conductance at eda_rate_hz
  std::vector<double> phasic;       // SCR component alone, same sampling
};

/// Tonic drift plus Bateman SCRs. Every stress segment fires one onset SCR;
/// further SCRs arrive as a Poisson process at the segment's label rate.
EdaTrace generate_eda(const std::vector<TaskSegment>& schedule, const PersonProfile& profile,
                      const SynthConfig& config, std::mt19937_64& rng);

struct ThermalTrace {
  std::vector<float> frames;
  std::vector<std::uint8_t> masks;
  std::vector<std::uint8_t> parts;
  std::size_t frame_count = 0;
};

/// Body silhouette and part labels for one frame (static over a session).
struct BodyLayout {
  std::vector<std::uint8_t> mask;
  std::vector<std::uint8_t> parts;
  std::vector<std::uint8_t> neck;  // torso pixels directly below the head
  double body_height_px = 0.0;
};

/// Throws ConfigError when the body does not fit inside the frame.
BodyLayout render_body(const SynthConfig& config, const PersonProfile& profile);

ThermalTrace generate_thermal(const std::vector<TaskSegment>& schedule, const PersonProfile& profile,
                              const EdaTrace& eda, const SynthConfig& config, std::mt19937_64& rng);

SessionRecord generate_session(const PersonProfile& profile, const SynthConfig& config, std::mt19937_64& rng);

/// Convenience: profile + rng from the config for participant `index`.
SessionRecord generate_participant(const SynthConfig& config, int index);

/// Writes one session directory per participant plus dataset.json. Returns the
/// dataset directory.
std::filesystem::path generate_benchmark(const SynthConfig& config, const std::filesystem::path& out_dir);

struct DatasetEntry {
  std::string directory;  // relative to the dataset root
  std::string participant_id;
  double distance_feet = 0.0;
};

struct DatasetManifest {
  std::uint64_t master_seed = 0;
  std::vector<DatasetEntry> sessions;
};

DatasetManifest read_dataset_manifest(const std::filesystem::path& dataset_dir);

/// Reads every session listed in dataset.json, in manifest order.
std::vector<SessionRecord> load_dataset(const std::filesystem::path& dataset_dir);

}  // namespace thermaco::synth
