#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "thermaco/preprocess.hpp"
#include "thermaco/synthgen.hpp"

using namespace thermaco;

namespace {

bool is_face(std::uint8_t p) {
  return p == static_cast<std::uint8_t>(BodyPart::kLeftFace) || p == static_cast<std::uint8_t>(BodyPart::kRightFace);
}

// Mean face temperature per frame.
std::vector<double> face_means(const SessionRecord& s) {
  const std::size_t fs = s.frame_size();
  std::vector<double> out(s.frame_count());
  for (std::size_t f = 0; f < out.size(); ++f) {
    double sum = 0;
    int n = 0;
    for (std::size_t i = 0; i < fs; ++i) {
      if (is_face(s.parts[f * fs + i])) {
        sum += s.frames[f * fs + i];
        ++n;
      }
    }
    out[f] = sum / n;
  }
  return out;
}

int label_at(const std::vector<TaskSegment>& schedule, double t) {
  for (const auto& seg : schedule) {
    if (t >= seg.start_s && t < seg.end_s) return seg.label;
  }
  return kNonStress;
}

// Lag (in samples) maximizing the centered cross-correlation of x against y(t + lag).
int best_lag(const std::vector<double>& x, const std::vector<double>& y, int max_lag) {
  const auto centered = [](std::vector<double> v) {
    double m = 0;
    for (double e : v) m += e;
    m /= v.size();
    for (double& e : v) e -= m;
    return v;
  };
  const auto cx = centered(x), cy = centered(y);
  int best = 0;
  double best_value = -1e300;
  for (int lag = 0; lag <= max_lag; ++lag) {
    double acc = 0;
    for (std::size_t t = 0; t + lag < cx.size(); ++t) acc += cx[t] * cy[t + lag];
    if (acc > best_value) {
      best_value = acc;
      best = lag;
    }
  }
  return best;
}

int body_rows(const synth::BodyLayout& layout, int height, int width) {
  int top = height, bottom = -1;
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      if (layout.mask[r * width + c]) {
        top = std::min(top, r);
        bottom = std::max(bottom, r);
      }
    }
  }
  return bottom - top + 1;
}

}  // namespace

TEST_CASE("default session has 750 s, 3750 frames and 3000 EDA samples") {
  synth::SynthConfig c;
  const auto s = synth::generate_participant(c, 0);
  CHECK(s.duration_s() == 750.0);
  CHECK(s.frame_count() == 3750);
  CHECK(s.eda.size() == 3000);
  CHECK(s.masks.size() == s.frames.size());
  CHECK(s.parts.size() == s.frames.size());
  CHECK_NOTHROW(s.validate());
  const auto sched = s.task_schedule;
  REQUIRE(sched.size() == 6);
  CHECK(sched[0].name == "calm-video");
  CHECK(sched[0].label == kNonStress);
  CHECK(sched[1].end_s == 240.0);
  CHECK(sched[5].name == "memory");
  CHECK(sched[5].label == kStress);
}

TEST_CASE("generation is deterministic and distinct across participants") {
  const auto c = fixtures::short_config(3);
  const auto a = synth::generate_participant(c, 1);
  const auto b = synth::generate_participant(c, 1);
  CHECK(a == b);
  std::set<std::uint64_t> seeds;
  for (int i = 0; i < 100; ++i) seeds.insert(synth::person_seed(c.master_seed, i));
  CHECK(seeds.size() == 100);
  const auto other = synth::generate_participant(c, 2);
  CHECK(other.eda != a.eda);
  CHECK(other.frames != a.frames);
}

TEST_CASE("no SCRs and no drift gives a constant EDA level") {
  auto c = fixtures::short_config(1);
  c.scr_rate_stress = 0;
  c.scr_rate_nonstress = 0;
  c.scr_onset_amplitude = 0;
  c.tonic_drift_sd = 0;
  c.eda_noise_sd = 0;
  const auto s = synth::generate_participant(c, 0);
  const auto [lo, hi] = std::minmax_element(s.eda.begin(), s.eda.end());
  CHECK(*hi - *lo <= 1e-12);
}

TEST_CASE("all-non-stress schedule labels every window non-stress") {
  auto c = fixtures::short_config(1);
  c.task_template = {{"calm-video", 0, 30.0}, {"counting", 0, 20.0}};
  const auto s = synth::generate_participant(c, 0);
  const auto refs = prep::extract_window_refs(s, {});
  REQUIRE(!refs.empty());
  for (const auto& r : refs) CHECK(r.label == kNonStress);
}

TEST_CASE("mean EDA is higher during stress, averaged over 20 seeds") {
  auto c = fixtures::short_config(20);
  double stress = 0, calm = 0;
  for (int i = 0; i < 20; ++i) {
    const auto s = synth::generate_participant(c, i);
    double ss = 0, cs = 0;
    int sn = 0, cn = 0;
    for (std::size_t k = 0; k < s.eda.size(); ++k) {
      if (label_at(s.task_schedule, k / s.eda_rate_hz) == kStress) {
        ss += s.eda[k];
        ++sn;
      } else {
        cs += s.eda[k];
        ++cn;
      }
    }
    stress += ss / sn;
    calm += cs / cn;
  }
  CHECK(stress / 20 > calm / 20);
}

TEST_CASE("without coupling and stress delta, face temperature is label independent") {
  auto c = fixtures::short_config(20);
  c.coupling_gain = 0;
  c.stress_delta = 0;
  int rejections = 0;
  for (int i = 0; i < 20; ++i) {
    const auto s = synth::generate_participant(c, i);
    const auto fm = face_means(s);
    std::vector<double> a, b;
    for (std::size_t f = 0; f < fm.size(); ++f) {
      (label_at(s.task_schedule, f / s.thermal_fps) == kStress ? a : b).push_back(fm[f]);
    }
    const auto stats = [](const std::vector<double>& v) {
      double m = 0, q = 0;
      for (double e : v) m += e;
      m /= v.size();
      for (double e : v) q += (e - m) * (e - m);
      return std::pair{m, q / (v.size() - 1)};
    };
    const auto [ma, va] = stats(a);
    const auto [mb, vb] = stats(b);
    const double t = (ma - mb) / std::sqrt(va / a.size() + vb / b.size());
    if (std::abs(t) > 2.576) ++rejections;  // two-sided, alpha = 0.01, large df
  }
  CHECK(rejections <= 1);
}

TEST_CASE("doubling distance halves the body height within one pixel") {
  synth::SynthConfig c;
  auto p = synth::make_profile(c, 0);
  p.body_scale = 1.0;
  p.distance_feet = 5.0;
  const int near = body_rows(synth::render_body(c, p), c.height, c.width);
  p.distance_feet = 10.0;
  const int far = body_rows(synth::render_body(c, p), c.height, c.width);
  CHECK(std::abs(2 * far - near) <= 2);
}

TEST_CASE("body larger than the frame is a configuration error") {
  synth::SynthConfig c;
  auto p = synth::make_profile(c, 0);
  p.distance_feet = 1.0;
  CHECK_THROWS_AS(synth::render_body(c, p), synth::ConfigError);
}

TEST_CASE("EDA responds before facial temperature (cross-correlation lag)") {
  synth::SynthConfig c;
  c.task_template = {{"calm-video", 0, 60.0}, {"stress-video", 1, 60.0}, {"counting", 0, 60.0},
                     {"arithmetic", 1, 60.0}};
  double eda_lag = 0, face_lag = 0;
  for (int i = 0; i < 20; ++i) {
    const auto p = synth::make_profile(c, i);
    std::mt19937_64 rng(p.seed);
    const auto sched = synth::build_schedule(c.task_template);
    const auto eda = synth::generate_eda(sched, p, c, rng);
    const auto thermal = synth::generate_thermal(sched, p, eda, c, rng);
    // Common 1 Hz grid.
    const int seconds = static_cast<int>(sched.back().end_s);
    std::vector<double> ind(seconds), phasic(seconds), face(seconds);
    const std::size_t fs = static_cast<std::size_t>(c.height) * c.width;
    for (int t = 0; t < seconds; ++t) {
      ind[t] = label_at(sched, t + 0.5);
      double acc = 0;
      for (int k = 0; k < 4; ++k) acc += eda.phasic[t * 4 + k];
      phasic[t] = acc / 4;
      double fsum = 0;
      int fn = 0;
      for (int k = 0; k < 5; ++k) {
        const std::size_t f = static_cast<std::size_t>(t) * 5 + k;
        for (std::size_t j = 0; j < fs; ++j) {
          if (is_face(thermal.parts[f * fs + j])) {
            fsum += thermal.frames[f * fs + j];
            ++fn;
          }
        }
      }
      face[t] = -fsum / fn;  // stress cools the face
    }
    eda_lag += best_lag(ind, phasic, 30);
    face_lag += best_lag(ind, face, 30);
  }
  CHECK(eda_lag / 20 < face_lag / 20);
}

TEST_CASE("benchmark dataset: round-robin bands, byte-identical regeneration, empty case") {
  fixtures::TempDir tmp("bench");
  auto c = fixtures::short_config(24);
  c.task_template = {{"calm-video", 0, 5.0}, {"stress-video", 1, 5.0}};
  const auto dir = synth::generate_benchmark(c, tmp.path() / "a");
  const auto m = synth::read_dataset_manifest(dir);
  REQUIRE(m.sessions.size() == 24);
  std::array<int, 3> per_band{};
  for (const auto& e : m.sessions) {
    for (int b = 0; b < 3; ++b) {
      if (e.distance_feet >= c.distances_feet[b] && e.distance_feet < c.distances_feet[b] + 2.0) ++per_band[b];
    }
  }
  CHECK(per_band == std::array<int, 3>{8, 8, 8});

  c.n_participants = 4;
  const auto x = synth::generate_benchmark(c, tmp.path() / "x");
  const auto y = synth::generate_benchmark(c, tmp.path() / "y");
  for (const auto& entry : std::filesystem::recursive_directory_iterator(x)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), x);
    std::ifstream a(entry.path(), std::ios::binary), b(y / rel, std::ios::binary);
    const std::string sa{std::istreambuf_iterator<char>(a), {}}, sb{std::istreambuf_iterator<char>(b), {}};
    CHECK_MESSAGE(sa == sb, rel.string());
  }
  const auto reloaded = synth::load_dataset(x);
  CHECK(reloaded.size() == 4);
  CHECK(reloaded[2] == synth::generate_participant(c, 2));

  c.n_participants = 0;
  const auto empty = synth::generate_benchmark(c, tmp.path() / "empty");
  CHECK(synth::read_dataset_manifest(empty).sessions.empty());
  CHECK(synth::load_dataset(empty).empty());
}

TEST_CASE("invalid synth configuration is rejected") {
  synth::SynthConfig c;
  c.thermal_fps = 0;
  CHECK_THROWS_AS(c.validate(), synth::ConfigError);
  c = {};
  c.task_template.clear();
  CHECK_THROWS_AS(c.validate(), synth::ConfigError);
}
