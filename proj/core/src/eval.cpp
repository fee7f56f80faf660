#include "thermaco/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "json.hpp"
#include "thermaco/session_io.hpp"

namespace thermaco::eval {

namespace {

using json = nlohmann::ordered_json;

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first error.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn fn) {
  const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), 1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  if (error) std::rethrow_exception(error);
}

bool contains(const std::vector<std::string>& names, const std::string& name) {
  return std::find(names.begin(), names.end(), name) != names.end();
}

/// Class-balanced windows of one session; the balancing draw depends only on
/// the seed and the session, so every fold and kind sees the same selection.
train::WindowSet balanced_session(const PreparedDataset& data, std::size_t session, std::uint64_t seed,
                                  const std::vector<std::string>* stress_tasks) {
  train::WindowSet pool;
  for (const auto& w : data.windows[session]) {
    if (stress_tasks && w.label == kStress && !contains(*stress_tasks, w.task_name)) continue;
    pool.push_back(&w);
  }
  auto rng = stream(seed, 0xBA1, session);
  return prep::balance_undersample(pool, [](const prep::PreparedWindow* w) { return w->label; }, rng);
}

FoldWindows select_fold(const PreparedDataset& data, const prep::Fold& fold, int fold_index, const ExperimentConfig& config,
                     const std::vector<std::string>* train_tasks, const std::vector<std::string>* eval_tasks) {
  std::vector<std::string> people;
  for (auto s : fold.train_sessions) {
    if (!contains(people, data.participants[s])) people.push_back(data.participants[s]);
  }
  std::sort(people.begin(), people.end());
  auto rng = stream(config.seed, 0x1A7, static_cast<std::uint64_t>(fold_index));
  std::shuffle(people.begin(), people.end(), rng);
  const std::size_t n_inner = std::min<std::size_t>(static_cast<std::size_t>(config.inner_val_participants),
                                                    people.empty() ? 0 : people.size() - 1);
  const std::vector<std::string> inner(people.begin(), people.begin() + static_cast<std::ptrdiff_t>(n_inner));

  FoldWindows out;
  for (auto s : fold.train_sessions) {
    const auto w = balanced_session(data, s, config.seed, train_tasks);
    auto& dst = contains(inner, data.participants[s]) ? out.inner_val : out.train;
    dst.insert(dst.end(), w.begin(), w.end());
  }
  for (auto s : fold.val_sessions) {
    const auto w = balanced_session(data, s, config.seed, eval_tasks);
    out.val.insert(out.val.end(), w.begin(), w.end());
  }
  if (out.train.empty() || out.val.empty()) throw ValidationError("fold " + std::to_string(fold_index) + " has no windows");
  return out;
}

std::string config_echo(const ExperimentConfig& c, const std::string& protocol) {
  json kinds = json::array();
  for (auto k : c.kinds) kinds.push_back(trainer_kind_name(k));
  const auto& t = c.train;
  json j{{"protocol", protocol},
         {"kinds", kinds},
         {"k", c.k},
         {"val_sessions_per_fold", c.val_sessions_per_fold},
         {"inner_val_participants", c.inner_val_participants},
         {"seed", c.seed},
         {"train",
          {{"epochs", t.epochs},
           {"batch_size", t.batch_size},
           {"learning_rate", t.learning_rate},
           {"alpha", t.weights.alpha},
           {"beta", t.weights.beta},
           {"similarity", t.similarity == train::Similarity::kMse ? "mse" : "cmd"},
           {"cmd_order", t.cmd_order},
           {"seed", t.seed},
           {"augment", t.augment},
           {"patience", t.patience},
           {"windows_per_epoch", t.windows_per_epoch},
           {"embedding_dim", t.model.d()}}}};
  return j.dump(2);
}

ExperimentReport run_protocol(const PreparedDataset& data, const ExperimentConfig& config, const std::string& protocol,
                              const std::vector<std::string>* train_tasks) {
  config.validate();
  const auto plan = make_split_plan(data, config);
  const Protocol protocol_kind = train_tasks ? Protocol::kTaskDisjoint : Protocol::kPersonDisjoint;
  std::vector<FoldWindows> folds;
  for (std::size_t f = 0; f < plan.folds.size(); ++f) folds.push_back(fold_windows(data, plan, static_cast<int>(f), config, protocol_kind));

  struct Task {
    std::size_t kind_index;
    std::size_t fold;
  };
  std::vector<Task> tasks;
  for (std::size_t k = 0; k < config.kinds.size(); ++k) {
    for (std::size_t f = 0; f < folds.size(); ++f) tasks.push_back({k, f});
  }
  struct Outcome {
    MetricsReport metrics;
    int best_epoch = 0;
    std::vector<train::EpochRecord> history;
    std::vector<PredictionRecord> predictions;
  };
  std::vector<Outcome> outcomes(tasks.size());

  parallel_for(tasks.size(), config.jobs, [&](std::size_t i) {
    const auto [ki, f] = tasks[i];
    train::TrainConfig tc = config.train;
    tc.kind = config.kinds[ki];
    tc.seed = config.train.seed * 1000003ULL + f;
    auto result = train::train_model(folds[f].train, folds[f].inner_val, tc);
    const auto probs = train::predict_stress(result.bundle, folds[f].val);
    Outcome& out = outcomes[i];
    std::vector<int> pred, labels;
    for (std::size_t j = 0; j < probs.size(); ++j) {
      const auto& w = *folds[f].val[j];
      PredictionRecord r;
      r.window_id = w.id();
      r.fold = static_cast<int>(f);
      r.kind = tc.kind;
      r.session_id = w.session_id;
      r.participant_id = w.participant_id;
      r.distance_feet = w.distance_feet;
      r.task_name = w.task_name;
      r.start_time = w.start_time;
      r.label = w.label;
      r.stress_probability = probs[j];
      r.predicted = probs[j] >= 0.5 ? kStress : kNonStress;
      pred.push_back(r.predicted);
      labels.push_back(r.label);
      out.predictions.push_back(std::move(r));
    }
    out.metrics = compute_metrics(pred, labels, "fold" + std::to_string(f));
    out.best_epoch = result.best_epoch;
    out.history = std::move(result.history);
  });

  ExperimentReport report;
  report.protocol = protocol;
  report.plan_hash = plan.hash();
  report.config_echo = config_echo(config, protocol);
  for (std::size_t k = 0; k < config.kinds.size(); ++k) {
    KindReport kr;
    kr.kind = config.kinds[k];
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (tasks[i].kind_index != k) continue;
      kr.folds.push_back(outcomes[i].metrics);
      kr.best_epochs.push_back(outcomes[i].best_epoch);
      kr.histories.push_back(outcomes[i].history);
      report.predictions.insert(report.predictions.end(), outcomes[i].predictions.begin(), outcomes[i].predictions.end());
    }
    kr.aggregate = aggregate_folds(kr.folds);
    report.kinds.push_back(std::move(kr));
  }
  stratify_by_distance(report);
  return report;
}

json metrics_json(const MetricsReport& m) {
  json j;
  if (m.stratum) j["stratum"] = *m.stratum;
  j["f1"] = m.f1;
  j["accuracy"] = m.accuracy;
  j["sensitivity"] = m.sensitivity;
  j["specificity"] = m.specificity;
  j["precision"] = m.precision;
  j["tp"] = m.tp;
  j["fp"] = m.fp;
  j["tn"] = m.tn;
  j["fn"] = m.fn;
  return j;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

PreparedDataset prepare_dataset(const std::vector<SessionRecord>& sessions, const prep::WindowingSpec& spec, int jobs) {
  spec.validate();
  PreparedDataset data;
  data.windows.resize(sessions.size());
  for (const auto& s : sessions) {
    data.session_ids.push_back(s.session_id);
    data.participants.push_back(s.participant_id);
    data.distances.push_back(s.distance_feet);
    data.schedules.push_back(s.task_schedule);
  }
  parallel_for(sessions.size(), jobs, [&](std::size_t i) {
    data.windows[i] = prep::prepare_session(prep::znorm_eda(sessions[i]), spec, i);
  });
  return data;
}

void ExperimentConfig::validate() const {
  if (kinds.empty()) throw ValidationError("experiment: no trainer kinds");
  if (k < 2) throw ValidationError("experiment: k must be >= 2");
  if (val_sessions_per_fold < 0) throw ValidationError("experiment: val_sessions_per_fold must be >= 0");
  if (inner_val_participants < 0) throw ValidationError("experiment: inner_val_participants must be >= 0");
  if (jobs < 1) throw ValidationError("experiment: jobs must be >= 1");
  train.validate();
}

const KindReport& ExperimentReport::kind(TrainerKind k) const {
  for (const auto& r : kinds) {
    if (r.kind == k) return r;
  }
  throw ValidationError(std::string("report has no trainer kind '") + trainer_kind_name(k) + "'");
}

std::string DistanceBand::label() const {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g-%gft", lo, hi);
  return buf;
}

std::vector<DistanceBand> default_distance_bands() { return {{5.0, 7.0}, {7.0, 9.0}, {9.0, 11.0}}; }

MetricsReport aggregate_folds(const std::vector<MetricsReport>& folds) {
  MetricsReport agg;
  agg.stratum = "mean";
  if (folds.empty()) return agg;
  const double n = static_cast<double>(folds.size());
  for (const auto& m : folds) {
    agg.sensitivity += m.sensitivity / n;
    agg.specificity += m.specificity / n;
    agg.accuracy += m.accuracy / n;
    agg.f1 += m.f1 / n;
    agg.precision += m.precision / n;
    agg.tp += m.tp;
    agg.fp += m.fp;
    agg.tn += m.tn;
    agg.fn += m.fn;
    agg.sensitivity_undefined |= m.sensitivity_undefined;
    agg.specificity_undefined |= m.specificity_undefined;
    agg.precision_undefined |= m.precision_undefined;
    agg.f1_undefined |= m.f1_undefined;
  }
  return agg;
}

prep::SplitPlan make_split_plan(const PreparedDataset& dataset, const ExperimentConfig& config) {
  if (dataset.sessions() == 0) throw ValidationError("experiment: empty dataset");
  if (config.k < 1) throw ValidationError("experiment: k must be >= 1");
  const int per_fold = config.val_sessions_per_fold > 0 ? config.val_sessions_per_fold
                                                        : static_cast<int>(dataset.sessions()) / config.k;
  auto rng = stream(config.seed, 0x9A1, 0);
  return prep::person_disjoint_folds(dataset.participants, config.k, per_fold, rng, config.seed);
}

FoldWindows fold_windows(const PreparedDataset& dataset, const prep::SplitPlan& plan, int fold,
                         const ExperimentConfig& config, Protocol protocol) {
  if (fold < 0 || static_cast<std::size_t>(fold) >= plan.folds.size()) {
    throw ValidationError("fold " + std::to_string(fold) + " out of range (plan has " + std::to_string(plan.folds.size()) + ")");
  }
  const bool task = protocol == Protocol::kTaskDisjoint;
  auto out = select_fold(dataset, plan.folds[fold], fold, config, task ? &kTrainStressTasks : nullptr,
                         task ? &kEvalStressTasks : nullptr);
  std::set<std::string> train_people;
  for (auto* w : out.train) train_people.insert(w->participant_id);
  for (auto* w : out.inner_val) train_people.insert(w->participant_id);
  for (auto* w : out.val) {
    if (train_people.count(w->participant_id)) {
      throw std::logic_error("fold " + std::to_string(fold) + " leaks participant " + w->participant_id);
    }
  }
  return out;
}

ExperimentReport kfold_experiment(const PreparedDataset& dataset, const ExperimentConfig& config) {
  return run_protocol(dataset, config, "person-disjoint-kfold", nullptr);
}

ExperimentReport task_disjoint_experiment(const PreparedDataset& dataset, const ExperimentConfig& config) {
  for (std::size_t s = 0; s < dataset.sessions(); ++s) {
    std::set<std::string> stress;
    for (const auto& seg : dataset.schedules[s]) {
      if (seg.label == kStress) stress.insert(seg.name);
    }
    if (stress.size() < 4) {
      throw ValidationError("task-disjoint: session '" + dataset.session_ids[s] + "' has fewer than 4 stress tasks");
    }
    for (const auto* names : {&kTrainStressTasks, &kEvalStressTasks}) {
      for (const auto& name : *names) {
        if (!stress.count(name)) {
          throw ValidationError("task-disjoint: session '" + dataset.session_ids[s] + "' lacks stress task '" + name + "'");
        }
      }
    }
  }
  return run_protocol(dataset, config, "task-disjoint", &kTrainStressTasks);
}

std::vector<MetricsReport> distance_stratified_report(const std::vector<PredictionRecord>& predictions, TrainerKind kind,
                                                      const std::vector<DistanceBand>& bands) {
  if (bands.empty()) throw ValidationError("distance bands: empty list");
  for (std::size_t i = 0; i < bands.size(); ++i) {
    if (!(bands[i].lo < bands[i].hi)) throw ValidationError("distance bands: each band needs lo < hi");
    if (i > 0 && bands[i].lo < bands[i - 1].hi) throw ValidationError("distance bands: bands overlap or are unsorted");
  }
  std::vector<std::vector<int>> pred(bands.size()), labels(bands.size());
  for (const auto& p : predictions) {
    if (p.kind != kind) continue;
    for (std::size_t b = 0; b < bands.size(); ++b) {
      const bool last = b + 1 == bands.size();
      if (p.distance_feet >= bands[b].lo && (p.distance_feet < bands[b].hi || (last && p.distance_feet <= bands[b].hi))) {
        pred[b].push_back(p.predicted);
        labels[b].push_back(p.label);
        break;
      }
    }
  }
  std::vector<MetricsReport> out;
  for (std::size_t b = 0; b < bands.size(); ++b) {
    out.push_back(pred[b].empty() ? metrics_from_counts(0, 0, 0, 0, bands[b].label())
                                  : compute_metrics(pred[b], labels[b], bands[b].label()));
  }
  return out;
}

void stratify_by_distance(ExperimentReport& report, const std::vector<DistanceBand>& bands) {
  report.distance.clear();
  for (const auto& k : report.kinds) report.distance.push_back({k.kind, distance_stratified_report(report.predictions, k.kind, bands)});
}

std::vector<BodyPart> all_body_parts() {
  std::vector<BodyPart> out;
  for (int p = 1; p <= kNumBodyParts; ++p) out.push_back(static_cast<BodyPart>(p));
  return out;
}

std::vector<MetricsReport> masked_region_eval(ModelBundle<float>& bundle, const train::WindowSet& windows,
                                              const std::vector<BodyPart>& regions) {
  if (windows.empty()) throw ValidationError("masked-region eval: no windows");
  for (const auto* w : windows) {
    if (w->part_map.size() != w->thermal.size()) throw ValidationError("masked-region eval: window '" + w->id() + "' lacks a part map");
  }
  std::vector<int> labels;
  for (const auto* w : windows) labels.push_back(w->label);
  auto score = [&](const train::WindowSet& set, const std::string& stratum) {
    const auto probs = train::predict_stress(bundle, set);
    std::vector<int> pred;
    for (double p : probs) pred.push_back(p >= 0.5 ? kStress : kNonStress);
    return compute_metrics(pred, labels, stratum);
  };
  std::vector<MetricsReport> rows{score(windows, "unmasked")};
  for (auto region : regions) {
    std::vector<prep::PreparedWindow> masked;
    masked.reserve(windows.size());
    for (const auto* w : windows) {
      masked.push_back(*w);
      prep::mask_parts(masked.back(), {region});
    }
    train::WindowSet set;
    for (const auto& w : masked) set.push_back(&w);
    rows.push_back(score(set, body_part_name(region)));
  }
  return rows;
}

void write_predictions_csv(const std::filesystem::path& path, const std::vector<PredictionRecord>& predictions) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  os << "window_id,fold,kind,session,participant,distance_feet,task,start_time,label,predicted,stress_probability\n";
  for (const auto& p : predictions) {
    os << p.window_id << ',' << p.fold << ',' << trainer_kind_name(p.kind) << ',' << p.session_id << ','
       << p.participant_id << ',' << format_double(p.distance_feet) << ',' << p.task_name << ','
       << format_double(p.start_time) << ',' << p.label << ',' << p.predicted << ','
       << format_double(p.stress_probability) << '\n';
  }
}

std::vector<PredictionRecord> read_predictions_csv(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read '" + path.string() + "'");
  std::string line;
  std::getline(is, line);
  std::vector<PredictionRecord> out;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 11) throw IoError(path.string() + ": row " + std::to_string(row) + " has " + std::to_string(f.size()) + " fields");
    try {
      PredictionRecord p;
      p.window_id = f[0];
      p.fold = std::stoi(f[1]);
      p.kind = trainer_kind_from_name(f[2]);
      p.session_id = f[3];
      p.participant_id = f[4];
      p.distance_feet = std::stod(f[5]);
      p.task_name = f[6];
      p.start_time = std::stod(f[7]);
      p.label = std::stoi(f[8]);
      p.predicted = std::stoi(f[9]);
      p.stress_probability = std::stod(f[10]);
      out.push_back(std::move(p));
    } catch (const std::logic_error&) {
      throw IoError(path.string() + ": malformed row " + std::to_string(row));
    }
  }
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsReport>& rows) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  os << "stratum,f1,accuracy,sensitivity,specificity,precision,tp,fp,tn,fn\n";
  for (const auto& m : rows) {
    os << m.stratum.value_or("") << ',' << format_double(m.f1) << ',' << format_double(m.accuracy) << ','
       << format_double(m.sensitivity) << ',' << format_double(m.specificity) << ',' << format_double(m.precision)
       << ',' << m.tp << ',' << m.fp << ',' << m.tn << ',' << m.fn << '\n';
  }
}

void write_report(const std::filesystem::path& directory, const ExperimentReport& report) {
  std::error_code ec;
  std::filesystem::create_directories(directory / "history", ec);
  if (ec) throw IoError("cannot create report directory '" + directory.string() + "'");
  json j;
  j["protocol"] = report.protocol;
  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(report.plan_hash));
  j["plan_hash"] = hash;
  j["config"] = json::parse(report.config_echo);
  json kinds = json::array();
  for (const auto& k : report.kinds) {
    json folds = json::array();
    for (const auto& m : k.folds) folds.push_back(metrics_json(m));
    kinds.push_back({{"kind", trainer_kind_name(k.kind)},
                     {"aggregate", metrics_json(k.aggregate)},
                     {"folds", folds},
                     {"best_epochs", k.best_epochs}});
    for (std::size_t f = 0; f < k.histories.size(); ++f) {
      train::write_history_csv(directory / "history" / (std::string(trainer_kind_name(k.kind)) + "_fold" + std::to_string(f) + ".csv"),
                               k.histories[f]);
    }
  }
  j["kinds"] = kinds;
  json distance = json::array();
  for (const auto& d : report.distance) {
    json bands = json::array();
    for (const auto& m : d.bands) bands.push_back(metrics_json(m));
    distance.push_back({{"kind", trainer_kind_name(d.kind)}, {"bands", bands}});
  }
  j["distance"] = distance;
  {
    std::ofstream os(directory / "summary.json", std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write '" + (directory / "summary.json").string() + "'");
    os << j.dump(2) << '\n';
  }
  write_predictions_csv(directory / "predictions.csv", report.predictions);
}

}  // namespace thermaco::eval
