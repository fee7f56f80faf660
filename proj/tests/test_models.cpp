#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "thermaco/models.hpp"

using namespace thermaco;

namespace {

std::vector<float> window_of(const prep::PreparedWindow& w) { return w.thermal; }

ModelBundle<float> small_bundle(TrainerKind kind = TrainerKind::kCoteach, std::uint64_t seed = 3) {
  return ModelBundle<float>(ModelConfig::desk(), kind, {1.0, 1.0}, seed);
}

}  // namespace

TEST_CASE("full-size thermal encoder yields a 256-d finite embedding") {
  ModelBundle<float> b(ModelConfig::full(25, 24, 32), TrainerKind::kCoteach, {}, 1);
  CHECK(b.config.d() == 256);
  const auto w = fixtures::random_windows(1, 25, 24, 32, 1).front();
  const auto z = thermal_encode(b, w.thermal);
  CHECK(z.size() == 256);
  const std::vector<float> zeros(w.thermal.size(), 0.0f);
  for (double v : thermal_encode(b, zeros)) CHECK(std::isfinite(v));
  CHECK(eda_encode(b, w.eda).size() == 256);
}

TEST_CASE("reversing frame order changes the embedding") {
  auto b = small_bundle();
  const auto w = fixtures::random_windows(1, 25, 24, 32, 2).front();
  auto reversed = w.thermal;
  const std::size_t fs = 24 * 32;
  for (int t = 0; t < 25; ++t) {
    std::copy_n(w.thermal.begin() + (24 - t) * fs, fs, reversed.begin() + t * fs);
  }
  const auto a = thermal_encode(b, w.thermal);
  const auto r = thermal_encode(b, reversed);
  double diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += (a[i] - r[i]) * (a[i] - r[i]);
  CHECK(std::sqrt(diff) > 1e-6);
}

TEST_CASE("EDA encoder through zero") {
  auto b = small_bundle();
  std::fill(b.eda.first.bias.value.begin(), b.eda.first.bias.value.end(), 0.0f);
  std::fill(b.eda.second.bias.value.begin(), b.eda.second.bias.value.end(), 0.0f);
  const auto z = eda_encode(b, EdaFeatureVector{});
  CHECK(z.size() == static_cast<std::size_t>(b.config.d()));
  for (double v : z) CHECK(v == 0.0);
}

TEST_CASE("EDA first layer is linear in its weights while the rectifier is inactive") {
  ModelConfig c = ModelConfig::desk();
  c.eda.hidden_dim = 1;
  ModelBundle<double> b(c, TrainerKind::kCoteach, {}, 4);
  auto& w1 = b.eda.first.weight.value;
  std::fill(w1.begin(), w1.end(), 0.5);
  std::fill(b.eda.first.bias.value.begin(), b.eda.first.bias.value.end(), 0.0);
  std::fill(b.eda.second.bias.value.begin(), b.eda.second.bias.value.end(), 0.0);
  const EdaFeatureVector f{1.0, 0.5, 2.0, 1.0, 0.2, 0.3};  // positive pre-activation
  const auto z1 = eda_encode(b, f);
  for (auto& v : w1) v *= 2;
  const auto z2 = eda_encode(b, f);
  for (std::size_t i = 0; i < z1.size(); ++i) CHECK(z2[i] == doctest::Approx(2 * z1[i]).epsilon(1e-12));
}

TEST_CASE("classify is a softmax over two logits") {
  auto b = small_bundle();
  auto& w2 = b.classifier.second;
  std::fill(w2.weight.value.begin(), w2.weight.value.end(), 0.0f);
  std::fill(w2.bias.value.begin(), w2.bias.value.end(), 0.0f);
  const std::vector<double> z(b.config.d(), 0.3);
  auto p = classify(b, z);
  CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-9));
  w2.bias.value[0] = static_cast<float>(std::log(3.0));
  p = classify(b, z);
  CHECK(p[0] == doctest::Approx(0.75).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(0.25).epsilon(1e-6));

  auto fresh = small_bundle();
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> zz(fresh.config.d());
    for (auto& v : zz) v = n(rng);
    const auto q = classify(fresh, zz);
    CHECK(q[0] > 0);
    CHECK(q[1] > 0);
    CHECK(std::abs(q[0] + q[1] - 1.0) <= 1e-9);
  }
  std::vector<double> bad(fresh.config.d(), 0.0);
  bad[0] = std::nan("");
  CHECK_THROWS_AS(classify(fresh, bad), ValidationError);
}

TEST_CASE("two-stream forward shares the classifier and inference ignores EDA") {
  auto b = small_bundle();
  const auto w = fixtures::random_windows(2, 25, 24, 32, 5);
  const auto out = forward_train(b, w[0].thermal, w[0].eda, nullptr);
  CHECK(out.z_t.size() == static_cast<std::size_t>(b.config.d()));
  CHECK(out.z_e.size() == out.z_t.size());
  CHECK(out.y_t == classify(b, out.z_t));
  CHECK(out.y_e == classify(b, out.z_e));
  // Swapping the embeddings swaps the outputs.
  CHECK(classify(b, out.z_e) == out.y_e);
  CHECK(forward_infer(b, w[0].thermal) == out.y_t);
  CHECK(forward_infer(b, w[0].thermal) == forward_infer(b, w[0].thermal));

  for (TrainerKind kind : {TrainerKind::kCoteach, TrainerKind::kThermal, TrainerKind::kMultitask,
                           TrainerKind::kTranslation, TrainerKind::kHallucination}) {
    auto kb = small_bundle(kind);
    auto batch = train::make_batch<float>(fixtures::window_set(w), 0, 2);
    const auto p1 = predict_proba(kb, batch);
    batch.eda.setConstant(123.0f);
    const auto p2 = predict_proba(kb, batch);
    CHECK_MESSAGE(p1 == p2, std::string(trainer_kind_name(kind)));
  }
  auto mm = small_bundle(TrainerKind::kMultimodal);
  auto batch = train::make_batch<float>(fixtures::window_set(w), 0, 2);
  const auto p1 = predict_proba(mm, batch);
  batch.eda.setConstant(123.0f);
  CHECK(p1 != predict_proba(mm, batch));
}

TEST_CASE("batch of one equals row of batch") {
  auto b = small_bundle();
  const auto w = fixtures::random_windows(3, 25, 24, 32, 6);
  const auto batch = train::make_batch<float>(fixtures::window_set(w), 0, 3);
  const auto z = encode_thermal_batch(b, batch);
  for (int i = 0; i < 3; ++i) {
    const auto single = thermal_encode(b, w[i].thermal);
    for (int j = 0; j < z.cols(); ++j) CHECK(std::abs(single[j] - z(i, j)) <= 1e-6);
  }
}

TEST_CASE("encoder sizes are equal across trainer kinds; multimodal classifier takes 2d") {
  auto ref = small_bundle();
  for (TrainerKind kind : all_trainer_kinds()) {
    auto b = small_bundle(kind);
    CHECK(b.thermal_encoder_size() == ref.thermal_encoder_size());
    CHECK(b.eda_encoder_size() == ref.eda_encoder_size());
  }
  auto mm = small_bundle(TrainerKind::kMultimodal);
  CHECK(mm.classifier.in_features() == 2 * mm.config.d());
  CHECK(ref.classifier.in_features() == ref.config.d());
}

TEST_CASE("mismatched EDA and thermal dims are rejected") {
  ModelConfig c = ModelConfig::desk();
  c.eda.output_dim = c.d() + 1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  auto b = small_bundle();
  const std::vector<float> wrong(10, 0.0f);
  CHECK_THROWS_AS(thermal_encode(b, wrong), ValidationError);
}

TEST_CASE("gradients of every parameter group match finite differences (reduced config)") {
  const auto windows = fixtures::random_windows(2, 4, 8, 8, 7);
  const auto batch = train::make_batch<double>(fixtures::window_set(windows), 0, 2);
  train::TrainConfig cfg;
  cfg.model = ModelConfig::reduced();
  cfg.weights = {0.7, 0.3};
  for (TrainerKind kind : {TrainerKind::kCoteach, TrainerKind::kMultimodal, TrainerKind::kHallucination}) {
    cfg.kind = kind;
    ModelBundle<double> b(cfg.model, kind, cfg.weights, 11);
    for (const auto& g : fixtures::gradient_check(b, batch, cfg)) {
      // The hallucination regression treats z_e as a fixed target, so the EDA
      // encoder gets only the real-embedding classifier gradient.
      if (kind == TrainerKind::kHallucination && g.name.rfind("eda.", 0) == 0) continue;
      CHECK_MESSAGE(g.relative_error <= 1e-4, std::string(trainer_kind_name(kind)), " ", g.name, " ", g.relative_error);
    }
  }
}

TEST_CASE("EDA-stream loss does not reach the thermal encoder") {
  const auto windows = fixtures::random_windows(2, 4, 8, 8, 8);
  const auto batch = train::make_batch<double>(fixtures::window_set(windows), 0, 2);
  train::TrainConfig cfg;
  cfg.model = ModelConfig::reduced();
  cfg.kind = TrainerKind::kEda;
  ModelBundle<double> b(cfg.model, TrainerKind::kEda, {}, 2);
  b.zero_grad();
  std::mt19937_64 rng(1);
  train::compute_batch_loss(b, batch, cfg, &rng, true);
  nn::ParamRefs<double> thermal;
  b.thermal.collect(thermal);
  for (auto* p : thermal) {
    for (double g : p->grad) CHECK(g == 0.0);
  }
}
