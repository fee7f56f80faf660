#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "thermaco/datamodel.hpp"
#include "thermaco/session_io.hpp"

using namespace thermaco;

namespace {

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("compute_metrics on hand-counted confusion matrix") {
  // TP=3 FP=1 TN=5 FN=1
  std::vector<int> pred{1, 1, 1, 1, 0, 0, 0, 0, 0, 0};
  std::vector<int> label{1, 1, 1, 0, 1, 0, 0, 0, 0, 0};
  const auto m = compute_metrics(pred, label);
  CHECK(m.tp == 3);
  CHECK(m.fp == 1);
  CHECK(m.tn == 5);
  CHECK(m.fn == 1);
  CHECK(m.sensitivity == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(m.specificity == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK(m.accuracy == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(m.f1 == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("compute_metrics perfect and degenerate classifiers") {
  std::vector<int> y{0, 1, 1, 0, 1};
  const auto perfect = compute_metrics(y, y);
  CHECK(perfect.sensitivity == 1.0);
  CHECK(perfect.specificity == 1.0);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.f1 == 1.0);

  std::vector<int> ones(4, 1), zeros(4, 0);
  const auto bad = compute_metrics(ones, zeros);
  CHECK(bad.specificity == 0.0);
  CHECK(bad.f1 == 0.0);
  CHECK(bad.sensitivity_undefined);
}

TEST_CASE("compute_metrics rejects empty and mismatched input") {
  std::vector<int> a{1, 0}, b{1};
  CHECK_THROWS_AS(compute_metrics({}, {}), ValidationError);
  CHECK_THROWS_AS(compute_metrics(a, b), ValidationError);
}

TEST_CASE("compute_metrics is permutation invariant and F1 matches precision/recall") {
  std::mt19937_64 rng(3);
  std::bernoulli_distribution coin(0.5);
  std::vector<int> p(200), y(200);
  for (int i = 0; i < 200; ++i) {
    p[i] = coin(rng);
    y[i] = coin(rng);
  }
  const auto m = compute_metrics(p, y);
  std::vector<int> idx(200);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<int> p2, y2;
  for (int i : idx) {
    p2.push_back(p[i]);
    y2.push_back(y[i]);
  }
  const auto m2 = compute_metrics(p2, y2);
  CHECK(m.f1 == m2.f1);
  CHECK(m.tp == m2.tp);
  const double prec = static_cast<double>(m.tp) / (m.tp + m.fp);
  const double rec = static_cast<double>(m.tp) / (m.tp + m.fn);
  CHECK(std::abs(m.f1 - 2 * prec * rec / (prec + rec)) <= 1e-12);
}

TEST_CASE("EdaFeatureVector invariants") {
  EdaFeatureVector ok{2.5, 1, 4, 2.5, 1, 1.118};
  CHECK_NOTHROW(ok.validate());
  EdaFeatureVector bad = ok;
  bad.median = 5;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = ok;
  bad.std = -1;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("session write/read roundtrip is exact and byte-deterministic") {
  fixtures::TempDir tmp("session");
  const auto s = synth::generate_participant(fixtures::short_config(1), 0);
  write_session(s, tmp.path() / "a");
  write_session(s, tmp.path() / "b");
  const auto back = read_session(tmp.path() / "a");
  CHECK(back == s);
  for (const char* f : {"frames.bin", "mask.bin", "parts.bin", "eda.csv", "manifest.json"}) {
    CHECK(file_bytes(tmp.path() / "a" / f) == file_bytes(tmp.path() / "b" / f));
  }
}

TEST_CASE("write_session rejects overlapping task segments") {
  fixtures::TempDir tmp("overlap");
  auto s = synth::generate_participant(fixtures::short_config(1), 0);
  s.task_schedule[1].start_s -= 5.0;
  CHECK_THROWS_AS(write_session(s, tmp.path() / "x"), ValidationError);
}

TEST_CASE("read_session detects truncation, bad magic and count mismatch") {
  fixtures::TempDir tmp("corrupt");
  const auto s = synth::generate_participant(fixtures::short_config(1), 0);
  const auto dir = tmp.path() / "s";
  write_session(s, dir);
  const auto frames = dir / "frames.bin";
  const auto original = file_bytes(frames);

  SUBCASE("truncated frame file") {
    std::ofstream(frames, std::ios::binary | std::ios::trunc).write(original.data(), original.size() - 7);
    CHECK_THROWS(read_session(dir));
  }
  SUBCASE("bad magic") {
    auto bytes = original;
    bytes[0] = 'X';
    std::ofstream(frames, std::ios::binary | std::ios::trunc).write(bytes.data(), bytes.size());
    CHECK_THROWS(read_session(dir));
  }
  SUBCASE("header count one frame short of the payload") {
    GridFileHeader h;
    auto values = read_float_grids(frames, h);
    const std::size_t fs = static_cast<std::size_t>(h.height) * h.width;
    values.resize(values.size() - fs);
    h.count -= 1;
    write_float_grids(frames, h, values);
    try {
      read_session(dir);
      FAIL("expected an error");
    } catch (const std::exception& e) {
      const std::string msg = e.what();
      CHECK(msg.find(std::to_string(h.count)) != std::string::npos);
      CHECK(msg.find(std::to_string(h.count + 1)) != std::string::npos);
    }
  }
}

TEST_CASE("format_double roundtrips") {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, -2.5e17, 0.0}) CHECK(std::stod(format_double(v)) == v);
}
