#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "run_config.hpp"
#include "thermaco/session_io.hpp"

namespace fs = std::filesystem;
using namespace thermaco;
using cli::Json;

namespace {

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
  int jobs = 0;
  std::string out;
  std::string data;
  std::string checkpoint;
};

Json effective(const Common& c, std::vector<std::string> extra) {
  std::vector<std::string> all = c.overrides;
  all.insert(all.end(), extra.begin(), extra.end());
  if (c.jobs > 0) all.push_back("jobs=" + std::to_string(c.jobs));
  return cli::load_config(c.config_file, all);
}

eval::PreparedDataset load_prepared(const Common& c, const Json& config) {
  if (c.data.empty()) throw ValidationError("--data is required");
  const auto sessions = synth::load_dataset(c.data);
  if (sessions.empty()) throw ValidationError("dataset '" + c.data + "' holds no sessions");
  return eval::prepare_dataset(sessions, cli::windowing_spec(config), config.at("jobs"));
}

fs::path output_dir(const Common& c, const Json& config) {
  if (c.out.empty()) throw ValidationError("--out is required");
  const auto dir = cli::resolve_run_dir(c.out);
  cli::echo_config(dir, config);
  return dir;
}

eval::Protocol protocol_of(const Json& config) {
  const std::string p = config.at("eval").at("protocol");
  if (p == "kfold") return eval::Protocol::kPersonDisjoint;
  if (p == "task-disjoint") return eval::Protocol::kTaskDisjoint;
  throw ValidationError("eval.protocol must be 'kfold' or 'task-disjoint'");
}

eval::FoldWindows fold_of(const eval::PreparedDataset& data, const Json& config) {
  const auto ec = cli::experiment_config(config);
  const auto plan = eval::make_split_plan(data, ec);
  return eval::fold_windows(data, plan, config.at("train").at("fold"), ec, protocol_of(config));
}

void write_json(const fs::path& path, const Json& j) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  os << j.dump(2) << '\n';
}

void write_val_predictions(const fs::path& path, ModelBundle<float>& bundle, const train::WindowSet& windows, int fold) {
  const auto probs = train::predict_stress(bundle, windows);
  std::vector<eval::PredictionRecord> rows;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& w = *windows[i];
    rows.push_back({w.id(), fold, bundle.kind, w.session_id, w.participant_id, w.distance_feet, w.task_name,
                    w.start_time, w.label, probs[i] >= 0.5 ? kStress : kNonStress, probs[i]});
  }
  eval::write_predictions_csv(path, rows);
}

int cmd_synth(const Common& c, Json config) {
  const auto sc = cli::synth_config(config);
  const auto dir = output_dir(c, config);
  synth::generate_benchmark(sc, dir);
  std::cout << "wrote " << sc.n_participants << " sessions to " << dir.string() << "\n";
  return 0;
}

int cmd_preprocess(const Common& c, Json config) {
  if (c.data.empty()) throw ValidationError("--data is required");
  const auto spec = cli::windowing_spec(config);
  const auto ec = cli::experiment_config(config);
  const auto sessions = synth::load_dataset(c.data);
  const auto data = eval::prepare_dataset(sessions, spec, ec.jobs);
  const auto dir = output_dir(c, config);
  const auto plan = eval::make_split_plan(data, ec);
  std::vector<std::vector<prep::WindowRef>> refs;
  for (std::size_t i = 0; i < sessions.size(); ++i) refs.push_back(prep::extract_window_refs(sessions[i], spec, i));
  prep::write_fold_cache(dir / "folds", plan, sessions, refs);
  std::ofstream os(dir / "windows.csv", std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write windows.csv");
  os << "session,participant,distance_feet,windows,stress,non_stress\n";
  for (std::size_t i = 0; i < data.sessions(); ++i) {
    std::size_t stress = 0;
    for (const auto& w : data.windows[i]) stress += w.label == kStress;
    os << data.session_ids[i] << ',' << data.participants[i] << ',' << format_double(data.distances[i]) << ','
       << data.windows[i].size() << ',' << stress << ',' << data.windows[i].size() - stress << '\n';
  }
  std::cout << "prepared " << data.sessions() << " sessions, " << plan.folds.size() << " folds in " << dir.string() << "\n";
  return 0;
}

int cmd_train(const Common& c, Json config) {
  const auto tc = cli::train_config(config);
  const auto data = load_prepared(c, config);
  const auto fold = fold_of(data, config);
  const auto dir = output_dir(c, config);
  auto result = train::train_model(fold.train, fold.inner_val, tc);
  train::save_checkpoint(result.bundle, dir / "checkpoint");
  train::write_history_csv(dir / "history.csv", result.history);
  const int f = config.at("train").at("fold");
  write_val_predictions(dir / "val_predictions.csv", result.bundle, fold.val, f);
  const double f1 = train::evaluate_f1(result.bundle, fold.val);
  std::cout << trainer_kind_name(tc.kind) << " fold " << f << ": best epoch " << result.best_epoch << ", val F1 " << f1
            << "\n";
  return 0;
}

int cmd_evaluate(const Common& c, Json config) {
  const auto data = load_prepared(c, config);
  if (!c.checkpoint.empty()) {
    auto bundle = train::load_checkpoint(c.checkpoint);
    const auto fold = fold_of(data, config);
    const auto dir = output_dir(c, config);
    const int f = config.at("train").at("fold");
    write_val_predictions(dir / "predictions.csv", bundle, fold.val, f);
    std::vector<BodyPart> regions;
    if (config.at("eval").at("masked_regions").get<bool>()) regions = eval::all_body_parts();
    const auto rows = eval::masked_region_eval(bundle, fold.val, regions);
    eval::write_metrics_csv(dir / "metrics.csv", rows);
    std::cout << "unmasked F1 " << rows.front().f1 << " on " << fold.val.size() << " windows\n";
    return 0;
  }
  const auto ec = cli::experiment_config(config);
  const auto dir = output_dir(c, config);
  const auto report = protocol_of(config) == eval::Protocol::kTaskDisjoint ? eval::task_disjoint_experiment(data, ec)
                                                                           : eval::kfold_experiment(data, ec);
  eval::write_report(dir, report);
  for (const auto& k : report.kinds) {
    std::cout << trainer_kind_name(k.kind) << ": mean F1 " << k.aggregate.f1 << ", accuracy " << k.aggregate.accuracy
              << "\n";
  }
  return 0;
}

int cmd_search(const Common& c, Json config) {
  const auto base = cli::train_config(config);
  const auto space = cli::search_space(config);
  const auto data = load_prepared(c, config);
  const auto fold = fold_of(data, config);
  const auto dir = output_dir(c, config);
  const auto result = train::random_search(fold.train, fold.inner_val, base, space);
  train::write_trials_csv(dir / "trials.csv", result.trials);
  const auto& best = result.trials[result.best_trial];
  write_json(dir / "best.json", Json{{"trial", best.trial},
                                     {"learning_rate", best.learning_rate},
                                     {"alpha", best.alpha},
                                     {"beta", best.beta},
                                     {"val_f1", best.val_f1}});
  std::cout << "best trial " << best.trial << ": val F1 " << best.val_f1 << "\n";
  return 0;
}

int cmd_landscape(const Common& c, Json config) {
  if (c.checkpoint.empty()) throw ValidationError("--checkpoint is required");
  const auto spec = cli::landscape_spec(config);
  auto bundle = train::load_checkpoint(c.checkpoint);
  const auto data = load_prepared(c, config);
  const auto fold = fold_of(data, config);
  const auto dir = output_dir(c, config);
  const int n = config.at("interpret").at("landscape_batch");
  if (n < 1) throw ValidationError("interpret.landscape_batch must be >= 1");
  const auto batch = train::make_batch<float>(fold.val, 0, std::min<std::size_t>(fold.val.size(), n));
  const auto grid = interpret::bundle_landscape(bundle, batch, spec);
  interpret::write_landscape_csv(dir / "landscape.csv", grid);
  std::cout << "center loss " << grid.center_loss << " over " << grid.alphas.size() << "x" << grid.betas.size() << " grid\n";
  return 0;
}

int cmd_attribute(const Common& c, Json config) {
  if (c.checkpoint.empty()) throw ValidationError("--checkpoint is required");
  const auto& ic = config.at("interpret");
  auto bundle = train::load_checkpoint(c.checkpoint);
  const auto data = load_prepared(c, config);
  const auto fold = fold_of(data, config);
  const int index = ic.at("window_index");
  if (index < 0 || static_cast<std::size_t>(index) >= fold.val.size()) {
    throw ValidationError("interpret.window_index out of range (fold has " + std::to_string(fold.val.size()) + " windows)");
  }
  const auto dir = output_dir(c, config);
  std::mt19937_64 rng(ic.at("seed").get<std::uint64_t>());
  const auto grid = interpret::grid_shapley(bundle, *fold.val[index], {ic.at("grid_rows"), ic.at("grid_cols")},
                                            ic.at("n_samples"), rng);
  interpret::write_attribution_csv(dir / "attribution.csv", grid);
  write_json(dir / "attribution.json", Json{{"window_id", fold.val[index]->id()},
                                            {"label", fold.val[index]->label},
                                            {"full_value", grid.full_value},
                                            {"base_value", grid.base_value},
                                            {"efficiency_residual", grid.efficiency_residual},
                                            {"features", grid.n_features},
                                            {"evaluations", grid.n_evaluations},
                                            {"exact", grid.exact}});
  std::cout << "attributed " << grid.n_features << " cells, efficiency residual " << grid.efficiency_residual << "\n";
  return 0;
}

int cmd_bench_stream(const Common& c, Json config, const std::string& session) {
  if (c.checkpoint.empty()) throw ValidationError("--checkpoint is required");
  if (session.empty()) throw ValidationError("--session is required");
  const auto spec = cli::windowing_spec(config);
  const auto options = cli::stream_options(config);
  auto bundle = train::load_checkpoint(c.checkpoint);
  const auto dir = output_dir(c, config);
  const auto report = stream::replay_benchmark(fs::path(session), bundle, spec, options);
  stream::write_stream_report(dir, report);
  std::cout << report.windows << " windows, mean latency " << report.latency_mean_s << " s, " << report.deadline_misses
            << " deadline misses\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"thermaco: thermal stress detection with EDA co-teaching"};
  app.require_subcommand(1);
  Common common;
  std::string session;
  std::string trainer, protocol;
  int fold = -1, epochs = 0;
  long long seed = -1;
  bool realtime = false;

  auto add_common = [&](CLI::App* sub, bool data, bool checkpoint) {
    sub->add_option("--config", common.config_file, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--set", common.overrides, "Override a config value: section.key=value");
    sub->add_option("--jobs", common.jobs, "Worker thread cap")->check(CLI::PositiveNumber);
    sub->add_option("--out", common.out, "Output directory")->required();
    if (data) sub->add_option("--data", common.data, "Dataset directory written by synth")->required();
    if (checkpoint) sub->add_option("--checkpoint", common.checkpoint, "Checkpoint directory");
  };

  auto* synth_cmd = app.add_subcommand("synth", "Generate the synthetic benchmark");
  add_common(synth_cmd, false, false);
  synth_cmd->add_option("--seed", seed, "Master seed");
  auto* prep_cmd = app.add_subcommand("preprocess", "Window the dataset and write the fold cache");
  add_common(prep_cmd, true, false);
  auto* train_cmd = app.add_subcommand("train", "Train one model on one fold");
  add_common(train_cmd, true, false);
  train_cmd->add_option("--trainer", trainer, "Trainer kind");
  train_cmd->add_option("--fold", fold, "Fold index");
  train_cmd->add_option("--epochs", epochs, "Maximum epochs");
  train_cmd->add_option("--seed", seed, "Training seed");
  auto* eval_cmd = app.add_subcommand("evaluate", "Run an evaluation protocol or score a checkpoint");
  add_common(eval_cmd, true, true);
  eval_cmd->add_option("--protocol", protocol, "kfold or task-disjoint");
  eval_cmd->add_option("--fold", fold, "Fold index for checkpoint scoring");
  eval_cmd->add_option("--epochs", epochs, "Maximum epochs");
  auto* search_cmd = app.add_subcommand("search", "Random search over learning rate, alpha and beta");
  add_common(search_cmd, true, false);
  search_cmd->add_option("--trainer", trainer, "Trainer kind");
  search_cmd->add_option("--fold", fold, "Fold index");
  auto* land_cmd = app.add_subcommand("landscape", "Filter-normalized loss-landscape sweep");
  add_common(land_cmd, true, true);
  land_cmd->add_option("--fold", fold, "Fold index");
  auto* attr_cmd = app.add_subcommand("attribute", "Grid-Shapley attribution of one window");
  add_common(attr_cmd, true, true);
  attr_cmd->add_option("--fold", fold, "Fold index");
  auto* stream_cmd = app.add_subcommand("bench-stream", "Replay a session through streaming inference");
  add_common(stream_cmd, false, true);
  stream_cmd->add_option("--session", session, "Session directory")->required();
  stream_cmd->add_flag("--realtime", realtime, "Pace frames at the sensor rate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    if (e.get_exit_code() == 0) return 0;
    std::cerr << app.help();
    return 1;
  }

  try {
    std::vector<std::string> extra;
    auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (seed >= 0) extra.push_back((name == "synth" ? "synth.master_seed=" : "train.seed=") + std::to_string(seed));
    if (!trainer.empty()) extra.push_back("train.trainer=\"" + trainer + "\"");
    if (fold >= 0) extra.push_back("train.fold=" + std::to_string(fold));
    if (epochs > 0) extra.push_back("train.epochs=" + std::to_string(epochs));
    if (!protocol.empty()) extra.push_back("eval.protocol=\"" + protocol + "\"");
    if (realtime) extra.push_back("stream.realtime=true");
    Json config = effective(common, extra);
    if (name == "synth") return cmd_synth(common, config);
    if (name == "preprocess") return cmd_preprocess(common, config);
    if (name == "train") return cmd_train(common, config);
    if (name == "evaluate") return cmd_evaluate(common, config);
    if (name == "search") return cmd_search(common, config);
    if (name == "landscape") return cmd_landscape(common, config);
    if (name == "attribute") return cmd_attribute(common, config);
    return cmd_bench_stream(common, config, session);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << "\n";
    return 2;
  }
}
