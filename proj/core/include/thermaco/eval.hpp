#pragma once

// Evaluation protocols: person-disjoint k-fold, task-disjoint generalization,
// distance stratification of stored predictions and masked-region evaluation.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "thermaco/datamodel.hpp"
#include "thermaco/preprocess.hpp"
#include "thermaco/training.hpp"

namespace thermaco::eval {

/// Every window of every session, prepared once. Protocols select from it.
struct PreparedDataset {
  std::vector<std::string> session_ids;
  std::vector<std::string> participants;  // per session
  std::vector<double> distances;          // per session
  std::vector<std::vector<TaskSegment>> schedules;
  std::vector<std::vector<prep::PreparedWindow>> windows;  // per session

  std::size_t sessions() const { return windows.size(); }
};

/// Per-session EDA z-scoring, windowing and window preparation.
PreparedDataset prepare_dataset(const std::vector<SessionRecord>& sessions, const prep::WindowingSpec& spec,
                                int jobs = 1);

struct ExperimentConfig {
  std::vector<TrainerKind> kinds{TrainerKind::kCoteach, TrainerKind::kThermal, TrainerKind::kEda,
                                 TrainerKind::kMultimodal};
  int k = 4;
  int val_sessions_per_fold = 0;    // 0 = sessions / k
  int inner_val_participants = 3;   // held out of each fold's training set for early stopping
  train::TrainConfig train;
  std::uint64_t seed = 11;
  int jobs = 1;

  void validate() const;
};

struct PredictionRecord {
  std::string window_id;
  int fold = 0;
  TrainerKind kind = TrainerKind::kCoteach;
  std::string session_id;
  std::string participant_id;
  double distance_feet = 0.0;
  std::string task_name;
  double start_time = 0.0;
  int label = kNonStress;
  int predicted = kNonStress;
  double stress_probability = 0.0;
};

struct KindReport {
  TrainerKind kind = TrainerKind::kCoteach;
  std::vector<MetricsReport> folds;
  MetricsReport aggregate;  // rates averaged over folds, confusion counts summed
  std::vector<int> best_epochs;
  std::vector<std::vector<train::EpochRecord>> histories;
};

struct DistanceBand {
  double lo = 0.0;
  double hi = 0.0;  // exclusive, except for the last band
  std::string label() const;
};

/// [5,7), [7,9), [9,11].
std::vector<DistanceBand> default_distance_bands();

struct StratifiedReport {
  TrainerKind kind = TrainerKind::kCoteach;
  std::vector<MetricsReport> bands;  // stratum = band label
};

struct ExperimentReport {
  std::string protocol;
  std::vector<KindReport> kinds;
  std::vector<PredictionRecord> predictions;
  std::vector<StratifiedReport> distance;
  std::uint64_t plan_hash = 0;
  std::string config_echo;  // structured text of the effective configuration

  const KindReport& kind(TrainerKind kind) const;
};

enum class Protocol { kPersonDisjoint, kTaskDisjoint };

/// Person-disjoint split plan for the dataset under the experiment seed.
prep::SplitPlan make_split_plan(const PreparedDataset& dataset, const ExperimentConfig& config);

struct FoldWindows {
  train::WindowSet train;
  train::WindowSet inner_val;  // early-stopping participants, carved from the fold's training side
  train::WindowSet val;
};

/// Class-balanced window selection of one fold. Participants never cross
/// between the training side and val.
FoldWindows fold_windows(const PreparedDataset& dataset, const prep::SplitPlan& plan, int fold,
                         const ExperimentConfig& config, Protocol protocol = Protocol::kPersonDisjoint);

/// Mean of the per-fold rates; counts are summed.
MetricsReport aggregate_folds(const std::vector<MetricsReport>& folds);

/// Person-disjoint folds shared by every requested trainer kind. Each fold's
/// training sessions are class-balanced per session; validation likewise.
ExperimentReport kfold_experiment(const PreparedDataset& dataset, const ExperimentConfig& config);

inline const std::vector<std::string> kTrainStressTasks{"stress-video", "arithmetic"};
inline const std::vector<std::string> kEvalStressTasks{"song-prep", "memory"};

/// Stress training windows come only from kTrainStressTasks, stress evaluation
/// windows only from kEvalStressTasks; non-stress windows follow the usual
/// person-disjoint split.
ExperimentReport task_disjoint_experiment(const PreparedDataset& dataset, const ExperimentConfig& config);

/// Metrics per distance band, recomputed from stored predictions of one kind.
std::vector<MetricsReport> distance_stratified_report(const std::vector<PredictionRecord>& predictions,
                                                      TrainerKind kind,
                                                      const std::vector<DistanceBand>& bands = default_distance_bands());

/// Fills report.distance for every kind in the report.
void stratify_by_distance(ExperimentReport& report, const std::vector<DistanceBand>& bands = default_distance_bands());

/// First row "unmasked", then one row per region with that region's pixels
/// zeroed in every frame of every window.
std::vector<MetricsReport> masked_region_eval(ModelBundle<float>& bundle, const train::WindowSet& windows,
                                              const std::vector<BodyPart>& regions);

std::vector<BodyPart> all_body_parts();

/// summary.json, predictions.csv and one history CSV per (kind, fold).
void write_report(const std::filesystem::path& directory, const ExperimentReport& report);
void write_predictions_csv(const std::filesystem::path& path, const std::vector<PredictionRecord>& predictions);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsReport>& rows);

/// Reads predictions written by write_predictions_csv.
std::vector<PredictionRecord> read_predictions_csv(const std::filesystem::path& path);

}  // namespace thermaco::eval
