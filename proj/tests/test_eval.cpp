#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "thermaco/eval.hpp"

using namespace thermaco;

namespace {

const eval::PreparedDataset& small_dataset() {
  static const eval::PreparedDataset data = [] {
    const auto c = fixtures::short_config(8);
    std::vector<SessionRecord> sessions;
    for (int i = 0; i < c.n_participants; ++i) sessions.push_back(synth::generate_participant(c, i));
    return eval::prepare_dataset(sessions, {});
  }();
  return data;
}

eval::ExperimentConfig quick_config() {
  eval::ExperimentConfig c;
  c.k = 2;
  c.inner_val_participants = 1;
  c.train.epochs = 1;
  c.train.windows_per_epoch = 32;
  c.train.batch_size = 16;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

eval::PredictionRecord record(double distance, int label, int predicted) {
  eval::PredictionRecord r;
  r.kind = TrainerKind::kCoteach;
  r.distance_feet = distance;
  r.label = label;
  r.predicted = predicted;
  r.window_id = "w" + std::to_string(distance) + std::to_string(label) + std::to_string(predicted);
  return r;
}

}  // namespace

TEST_CASE("prepared dataset mirrors the sessions") {
  const auto& d = small_dataset();
  CHECK(d.sessions() == 8);
  for (std::size_t s = 0; s < d.sessions(); ++s) {
    CHECK(d.windows[s].size() == prep::window_starts(120.0, {}).size());
    for (const auto& w : d.windows[s]) {
      CHECK(w.session_index == s);
      CHECK(w.participant_id == d.participants[s]);
    }
  }
}

TEST_CASE("fold windows are balanced and person-disjoint") {
  const auto& d = small_dataset();
  const auto cfg = quick_config();
  const auto plan = eval::make_split_plan(d, cfg);
  REQUIRE(plan.folds.size() == 2);
  for (int f = 0; f < 2; ++f) {
    const auto fw = eval::fold_windows(d, plan, f, cfg);
    std::set<std::string> train_p, inner_p, val_p;
    for (const auto* w : fw.train) train_p.insert(w->participant_id);
    for (const auto* w : fw.inner_val) inner_p.insert(w->participant_id);
    for (const auto* w : fw.val) val_p.insert(w->participant_id);
    CHECK(inner_p.size() == 1);
    for (const auto& p : val_p) {
      CHECK(train_p.count(p) == 0);
      CHECK(inner_p.count(p) == 0);
    }
    for (const auto& p : inner_p) CHECK(train_p.count(p) == 0);
    const auto stress = std::count_if(fw.val.begin(), fw.val.end(), [](auto* w) { return w->label == kStress; });
    CHECK(2 * stress == static_cast<long>(fw.val.size()));
  }
  CHECK_THROWS_AS(eval::fold_windows(d, plan, 5, cfg), ValidationError);
}

TEST_CASE("task-disjoint selection filters stress windows by task") {
  const auto& d = small_dataset();
  const auto cfg = quick_config();
  const auto plan = eval::make_split_plan(d, cfg);
  const auto fw = eval::fold_windows(d, plan, 0, cfg, eval::Protocol::kTaskDisjoint);
  const auto in = [](const std::vector<std::string>& names, const std::string& n) {
    return std::find(names.begin(), names.end(), n) != names.end();
  };
  for (const auto* w : fw.train) {
    if (w->label == kStress) CHECK(in(eval::kTrainStressTasks, w->task_name));
  }
  for (const auto* w : fw.val) {
    if (w->label == kStress) CHECK(in(eval::kEvalStressTasks, w->task_name));
  }

  auto c = fixtures::short_config(4);
  c.task_template = {{"calm-video", 0, 30.0}, {"stress-video", 1, 30.0}, {"arithmetic", 1, 30.0}};
  std::vector<SessionRecord> sessions;
  for (int i = 0; i < 4; ++i) sessions.push_back(synth::generate_participant(c, i));
  const auto few = eval::prepare_dataset(sessions, {});
  CHECK_THROWS_AS(eval::task_disjoint_experiment(few, quick_config()), ValidationError);
}

TEST_CASE("aggregate is the mean of fold rates with summed counts") {
  std::vector<MetricsReport> folds{metrics_from_counts(3, 1, 5, 1), metrics_from_counts(2, 2, 2, 4)};
  const auto a = eval::aggregate_folds(folds);
  CHECK(std::abs(a.f1 - (folds[0].f1 + folds[1].f1) / 2) <= 1e-12);
  CHECK(std::abs(a.accuracy - (folds[0].accuracy + folds[1].accuracy) / 2) <= 1e-12);
  CHECK(a.tp == 5);
  CHECK(a.fn == 5);
}

TEST_CASE("distance stratification partitions predictions") {
  std::vector<eval::PredictionRecord> preds{record(5.5, 1, 1), record(6.9, 0, 0), record(7.0, 1, 0),
                                            record(8.2, 0, 1), record(11.0, 1, 1), record(9.5, 0, 0)};
  const auto bands = eval::distance_stratified_report(preds, TrainerKind::kCoteach);
  REQUIRE(bands.size() == 3);
  CHECK(bands[0].stratum == "5-7ft");
  std::int64_t total = 0;
  for (const auto& b : bands) total += b.total();
  CHECK(total == 6);
  CHECK(bands[0].f1 == 1.0);
  CHECK(bands[1].f1 == 0.0);
  CHECK(bands[2].tp == 1);
  CHECK(bands[2].tn == 1);

  const std::vector<eval::PredictionRecord> near_only{record(5.5, 1, 1)};
  const auto sparse = eval::distance_stratified_report(near_only, TrainerKind::kCoteach);
  CHECK(sparse[2].total() == 0);
  CHECK(sparse[2].f1_undefined);
  CHECK_THROWS_AS(eval::distance_stratified_report(preds, TrainerKind::kCoteach, {{7, 9}, {5, 8}}), ValidationError);
}

TEST_CASE("k-fold experiment: shared plan, recomputable metrics, deterministic files") {
  const auto& d = small_dataset();
  auto cfg = quick_config();
  auto report = eval::kfold_experiment(d, cfg);
  CHECK(report.protocol == "person-disjoint-kfold");
  CHECK(report.plan_hash == eval::make_split_plan(d, cfg).hash());
  REQUIRE(report.kinds.size() == 4);

  // Every kind is evaluated on the same windows of every fold.
  std::map<TrainerKind, std::vector<std::string>> ids;
  for (const auto& p : report.predictions) ids[p.kind].push_back(std::to_string(p.fold) + p.window_id);
  for (auto& [kind, v] : ids) {
    std::sort(v.begin(), v.end());
    CHECK(v == ids.begin()->second);
  }

  // Fold metrics and aggregates are recomputable from stored predictions.
  for (const auto& k : report.kinds) {
    std::vector<MetricsReport> recomputed;
    for (std::size_t f = 0; f < k.folds.size(); ++f) {
      std::vector<int> pred, lab;
      for (const auto& p : report.predictions) {
        if (p.kind == k.kind && p.fold == static_cast<int>(f)) {
          pred.push_back(p.predicted);
          lab.push_back(p.label);
          CHECK(p.predicted == (p.stress_probability >= 0.5 ? 1 : 0));
        }
      }
      recomputed.push_back(compute_metrics(pred, lab));
      CHECK(std::abs(recomputed.back().f1 - k.folds[f].f1) <= 1e-9);
    }
    CHECK(std::abs(eval::aggregate_folds(recomputed).f1 - k.aggregate.f1) <= 1e-9);
    CHECK(k.histories.size() == 2);
  }
  CHECK(report.distance.size() == 4);

  fixtures::TempDir tmp("report");
  eval::write_report(tmp.path() / "a", report);
  const auto again = eval::kfold_experiment(d, cfg);
  eval::write_report(tmp.path() / "b", again);
  for (const auto& e : std::filesystem::recursive_directory_iterator(tmp.path() / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(e.path(), tmp.path() / "a");
    CHECK_MESSAGE(slurp(e.path()) == slurp(tmp.path() / "b" / rel), rel.string());
  }
  const auto back = eval::read_predictions_csv(tmp.path() / "a" / "predictions.csv");
  REQUIRE(back.size() == report.predictions.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].window_id == report.predictions[i].window_id);
    CHECK(back[i].stress_probability == report.predictions[i].stress_probability);
    CHECK(back[i].distance_feet == report.predictions[i].distance_feet);
    CHECK(back[i].kind == report.predictions[i].kind);
  }

  cfg.jobs = 2;
  const auto parallel = eval::kfold_experiment(d, cfg);
  eval::write_report(tmp.path() / "c", parallel);
  CHECK(slurp(tmp.path() / "a" / "predictions.csv") == slurp(tmp.path() / "c" / "predictions.csv"));
}

TEST_CASE("masked-region evaluation") {
  const auto& d = small_dataset();
  auto cfg = quick_config();
  const auto plan = eval::make_split_plan(d, cfg);
  const auto fw = eval::fold_windows(d, plan, 0, cfg);
  auto tc = cfg.train;
  tc.kind = TrainerKind::kCoteach;
  auto trained = train::train_model(fw.train, fw.inner_val, tc);
  const auto rows = eval::masked_region_eval(trained.bundle, fw.val, eval::all_body_parts());
  REQUIRE(rows.size() == 9);
  CHECK(rows[0].stratum == "unmasked");
  const auto probs = train::predict_stress(trained.bundle, fw.val);
  std::vector<int> pred, lab;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    pred.push_back(probs[i] >= 0.5);
    lab.push_back(fw.val[i]->label);
  }
  const auto plain = compute_metrics(pred, lab);
  CHECK(rows[0].tp == plain.tp);
  CHECK(rows[0].fp == plain.fp);
  CHECK(rows[0].f1 == plain.f1);
  CHECK(rows[1].stratum == std::string(body_part_name(BodyPart::kLeftFace)));
  CHECK_THROWS_AS(eval::masked_region_eval(trained.bundle, {}, eval::all_body_parts()), ValidationError);
}
