#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "thermaco/preprocess.hpp"
#include "thermaco/synthgen.hpp"

using namespace thermaco;

namespace {

SessionRecord constant_session(double duration, double fps = 5.0, double eda_hz = 4.0) {
  SessionRecord s;
  s.session_id = "s0";
  s.participant_id = "p0";
  s.distance_feet = 5.0;
  s.thermal_fps = fps;
  s.eda_rate_hz = eda_hz;
  s.height = 2;
  s.width = 2;
  s.task_schedule = {{"calm-video", kNonStress, 0.0, duration}};
  const std::size_t n = samples_for(duration, fps);
  s.frames.assign(n * 4, 1.0f);
  s.masks.assign(n * 4, 1);
  s.parts.assign(n * 4, 1);
  s.eda.resize(samples_for(duration, eda_hz));
  for (std::size_t i = 0; i < s.eda.size(); ++i) s.eda[i] = static_cast<double>(i % 7);
  return s;
}

ThermalWindow checker_window() {
  ThermalWindow w;
  w.frames = 2;
  w.height = 3;
  w.width = 3;
  for (int t = 0; t < 2; ++t) {
    for (int i = 0; i < 9; ++i) {
      w.pixels.push_back(static_cast<float>(t * 9 + i));
      w.mask.push_back(i % 2 == 0);
    }
  }
  return w;
}

}  // namespace

TEST_CASE("window start enumeration") {
  const prep::WindowingSpec spec;
  CHECK(prep::window_starts(15.0, spec) == std::vector<double>{0, 3, 6, 9});
  CHECK(prep::window_starts(5.0, spec).size() == 1);
  CHECK(prep::window_starts(4.9, spec).empty());
  const auto s = prep::window_starts(750.0, spec);
  CHECK(s.size() == 249);
  CHECK(s.back() == 744.0);
}

TEST_CASE("extract_windows counts match a brute-force enumerator") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> dur(0.5, 60.0), win(0.5, 10.0), frac(0.0, 0.95);
  for (int trial = 0; trial < 200; ++trial) {
    const double duration = std::round(dur(rng) * 4) / 4;
    const double window = std::round(win(rng) * 4) / 4;
    const double overlap = std::floor(frac(rng) * window * 4) / 4;
    const prep::WindowingSpec spec{window, overlap};
    const auto s = constant_session(duration);
    std::size_t brute = 0;
    for (int k = 0;; ++k) {
      if (k * spec.stride_seconds() + window > duration + 1e-9) break;
      ++brute;
    }
    CHECK(prep::extract_window_refs(s, spec).size() == brute);
  }
}

TEST_CASE("extracted windows carry synchronized slices and majority labels") {
  const auto c = fixtures::short_config(1);
  const auto s = synth::generate_participant(c, 0);
  const prep::WindowingSpec spec;
  const auto windows = prep::extract_windows(s, spec);
  REQUIRE(windows.size() == prep::window_starts(s.duration_s(), spec).size());
  for (const auto& w : windows) {
    CHECK(w.thermal.frames == 25);
    CHECK(w.eda.samples.size() == 20);
    CHECK(w.part_map.size() == w.thermal.pixels.size());
    CHECK_NOTHROW(w.validate(25, 20));
  }
  // 15 s stress tasks start at 60 s: the window [57, 62) overlaps 3 s calm, 2 s stress.
  CHECK(prep::window_label(s.task_schedule, 57.0, 62.0) == kNonStress);
  CHECK(prep::window_label(s.task_schedule, 58.0, 63.0) == kStress);
  // Exact tie goes to non-stress.
  CHECK(prep::window_label(s.task_schedule, 57.5, 62.5) == kNonStress);
}

TEST_CASE("znorm_eda") {
  SessionRecord s = constant_session(5.0);
  s.eda = {2.0, 4.0};
  s.eda_rate_hz = 0.4;
  std::vector<double> v{2.0, 4.0};
  prep::znorm_trace(v, "t");
  CHECK(v == std::vector<double>{-1.0, 1.0});

  std::vector<double> z{-1.0, 1.0, -1.0, 1.0};
  auto z2 = z;
  prep::znorm_trace(z2, "t");
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(z[i] - z2[i]) <= 1e-9);

  std::vector<double> flat(10, 3.0);
  CHECK_THROWS_AS(prep::znorm_trace(flat, "flat"), ValidationError);

  const auto session = synth::generate_participant(fixtures::short_config(1), 0);
  const auto n = prep::znorm_eda(session);
  double m = 0, q = 0;
  for (double e : n.eda) m += e;
  m /= n.eda.size();
  for (double e : n.eda) q += (e - m) * (e - m);
  CHECK(std::abs(m) <= 1e-9);
  CHECK(std::abs(std::sqrt(q / n.eda.size()) - 1.0) <= 1e-9);
}

TEST_CASE("znorm_thermal normalizes body pixels and keeps background at zero") {
  auto w = checker_window();
  prep::mask_window(w);
  const auto n = prep::znorm_thermal(w);
  double m = 0, q = 0;
  int cnt = 0;
  for (std::size_t i = 0; i < n.pixels.size(); ++i) {
    if (n.mask[i]) {
      m += n.pixels[i];
      ++cnt;
    } else {
      CHECK(n.pixels[i] == 0.0f);
    }
  }
  m /= cnt;
  for (std::size_t i = 0; i < n.pixels.size(); ++i) {
    if (n.mask[i]) q += (n.pixels[i] - m) * (n.pixels[i] - m);
  }
  CHECK(std::abs(m) <= 1e-6);
  CHECK(std::abs(std::sqrt(q / cnt) - 1.0) <= 1e-6);

  auto other = checker_window();
  for (std::size_t i = 0; i < other.pixels.size(); ++i) {
    if (!other.mask[i]) other.pixels[i] = 1000.0f + i;
  }
  prep::mask_window(other);
  CHECK(prep::znorm_thermal(other).pixels == n.pixels);

  ThermalWindow flat = checker_window();
  std::fill(flat.pixels.begin(), flat.pixels.end(), 5.0f);
  CHECK_THROWS_AS(prep::znorm_thermal(flat), ValidationError);
}

TEST_CASE("apply_body_mask") {
  ThermalFrame f{2, 2, {1, 2, 3, 4}, {1, 1, 1, 1}};
  CHECK(prep::apply_body_mask(f).pixels == f.pixels);
  f.mask = {0, 0, 0, 0};
  CHECK(prep::apply_body_mask(f).pixels == std::vector<float>{0, 0, 0, 0});
  ThermalFrame c{2, 2, {7, 7, 7, 7}, {1, 0, 0, 1}};
  CHECK(prep::apply_body_mask(c).pixels == std::vector<float>{7, 0, 0, 7});
  c.mask.pop_back();
  CHECK_THROWS_AS(prep::apply_body_mask(c), ValidationError);
}

TEST_CASE("eda_features") {
  const std::vector<double> x{1, 2, 3, 4};
  const auto f = prep::eda_features(x);
  CHECK(f.mean == 2.5);
  CHECK(f.min == 1);
  CHECK(f.max == 4);
  CHECK(f.median == 2.5);
  CHECK(f.variability == 1.0);
  CHECK(f.std == doctest::Approx(1.1180).epsilon(1e-4));

  const std::vector<double> zeros(8, 0.0);
  CHECK(prep::eda_features(zeros).to_array() == std::array<double, 6>{0, 0, 0, 0, 0, 0});
  const std::vector<double> c(5, 3.25);
  CHECK(prep::eda_features(c).to_array() == std::array<double, 6>{3.25, 3.25, 3.25, 3.25, 0, 0});
  CHECK_THROWS_AS(prep::eda_features(std::vector<double>{}), ValidationError);
}

TEST_CASE("partial-body masking augmentation") {
  const auto s = synth::generate_participant(fixtures::short_config(1), 0);
  const auto raw = prep::extract_windows(s, {}).front();
  std::mt19937_64 rng(5);

  prep::MaskAugmentSpec none{{1, 0, 0, 0}};
  CHECK(prep::augment_partial_mask(raw, none, rng).thermal.pixels == raw.thermal.pixels);

  prep::MaskAugmentSpec one{{0, 1, 0, 0}};
  int count = -1;
  const auto out = prep::augment_partial_mask(raw, one, rng, &count);
  CHECK(count == 1);
  // Exactly one region lost all its pixels, in every frame.
  std::set<int> zeroed;
  const std::size_t fs = raw.thermal.frame_size();
  for (int part = 1; part <= kNumBodyParts; ++part) {
    bool present = false, all_zero = true;
    for (std::size_t i = 0; i < raw.part_map.size(); ++i) {
      if (raw.part_map[i] == part) {
        present = true;
        if (out.thermal.pixels[i] != 0.0f) all_zero = false;
      }
    }
    if (present && all_zero) zeroed.insert(part);
  }
  CHECK(zeroed.size() == 1);
  (void)fs;

  std::array<int, 4> hist{};
  const prep::MaskAugmentSpec spec;
  std::mt19937_64 r2(17);
  for (int i = 0; i < 10000; ++i) {
    const auto parts = prep::draw_masked_parts(spec, r2);
    ++hist[parts.size()];
    CHECK(std::set<BodyPart>(parts.begin(), parts.end()).size() == parts.size());
  }
  for (int k = 0; k < 4; ++k) CHECK(std::abs(hist[k] / 10000.0 - spec.probabilities[k]) <= 0.01);

  prep::MaskAugmentSpec bad{{0.5, 0.5, 0.5, 0.0}};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("balance_undersample") {
  std::vector<int> labels(100, kStress);
  labels.insert(labels.end(), 60, kNonStress);
  std::mt19937_64 rng(1);
  const auto id = [](int l) { return l; };
  const auto out = prep::balance_undersample(labels, id, rng);
  CHECK(std::count(out.begin(), out.end(), kStress) == 60);
  CHECK(std::count(out.begin(), out.end(), kNonStress) == 60);

  std::vector<int> balanced{1, 0, 1, 0};
  CHECK(prep::balance_undersample(balanced, id, rng) == balanced);
  std::vector<int> only{1, 1, 1};
  CHECK_THROWS_AS(prep::balance_undersample(only, id, rng), ValidationError);
}

TEST_CASE("person-disjoint folds") {
  std::vector<std::string> participants;
  for (int i = 0; i < 32; ++i) participants.push_back("p" + std::to_string(i));
  std::mt19937_64 rng(3);
  const auto plan = prep::person_disjoint_folds(participants, 5, 5, rng, 3);
  REQUIRE(plan.folds.size() == 5);
  std::set<std::size_t> all_val;
  for (const auto& f : plan.folds) {
    CHECK(f.val_sessions.size() == 5);
    for (auto v : f.val_sessions) CHECK(all_val.insert(v).second);
    std::set<std::string> tp, vp;
    for (auto t : f.train_sessions) tp.insert(participants[t]);
    for (auto v : f.val_sessions) vp.insert(participants[v]);
    for (const auto& p : vp) CHECK(tp.count(p) == 0);
  }

  std::mt19937_64 a(8), b(8);
  CHECK(prep::person_disjoint_folds(participants, 5, 5, a).hash() ==
        prep::person_disjoint_folds(participants, 5, 5, b).hash());

  std::mt19937_64 r1(1);
  CHECK(prep::person_disjoint_folds(participants, 1, 5, r1).folds.size() == 1);
  CHECK_THROWS_AS(prep::person_disjoint_folds(participants, 7, 5, r1), ValidationError);

  // Several sessions of one participant never straddle train and val.
  std::vector<std::string> repeated;
  for (int i = 0; i < 12; ++i) repeated.push_back("p" + std::to_string(i % 4));
  const auto rp = prep::person_disjoint_folds(repeated, 2, 3, r1);
  for (const auto& f : rp.folds) {
    for (auto t : f.train_sessions) {
      for (auto v : f.val_sessions) CHECK(repeated[t] != repeated[v]);
    }
  }
}

TEST_CASE("prepared windows are masked, normalized and uniquely identified") {
  const auto s = prep::znorm_eda(synth::generate_participant(fixtures::short_config(1), 0));
  const auto windows = prep::prepare_session(s, {});
  std::set<std::string> ids;
  for (const auto& w : windows) {
    CHECK(ids.insert(w.id()).second);
    for (std::size_t i = 0; i < w.thermal.size(); ++i) {
      if (w.part_map[i] == 0) CHECK(w.thermal[i] == 0.0f);
    }
  }
  auto w = windows.front();
  prep::mask_parts(w, {BodyPart::kLeftFace});
  for (std::size_t i = 0; i < w.thermal.size(); ++i) {
    if (w.part_map[i] == static_cast<std::uint8_t>(BodyPart::kLeftFace)) CHECK(w.thermal[i] == 0.0f);
  }
}
