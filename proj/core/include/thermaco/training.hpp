#pragma once

// Trainers (co-teaching and the comparison baselines), seeded random search
// and checkpoint I/O.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "thermaco/losses.hpp"
#include "thermaco/models.hpp"
#include "thermaco/preprocess.hpp"

namespace thermaco::train {

enum class Similarity { kMse, kCmd };

struct TrainConfig {
  TrainerKind kind = TrainerKind::kCoteach;
  ModelConfig model = ModelConfig::desk();
  int epochs = 100;
  int batch_size = 32;
  double learning_rate = 1e-3;
  loss::LossWeights weights{1.0, 1.0};
  Similarity similarity = Similarity::kMse;
  int cmd_order = 5;
  std::uint64_t seed = 1;
  bool augment = false;
  prep::MaskAugmentSpec augment_spec;
  int patience = 10;
  // Training windows drawn per epoch (0 = all). Each epoch reshuffles the full
  // set and takes a prefix, so every window is eventually visited.
  int windows_per_epoch = 0;

  void validate() const;
};

/// Per-epoch means of the loss components. For baseline kinds, l_aux holds
/// the loss that has no co-teaching counterpart (joint-head cross-entropy,
/// feature-regression error).
struct EpochRecord {
  int epoch = 0;
  double l_t = 0.0;
  double l_e = 0.0;
  double l_s = 0.0;
  double l_c = 0.0;
  double total = 0.0;
  double val_f1 = 0.0;
  double l_aux = 0.0;
};

struct LossBreakdown {
  double l_t = 0.0;
  double l_e = 0.0;
  double l_s = 0.0;
  double l_c = 0.0;
  double l_aux = 0.0;
  double total = 0.0;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(int epoch, const std::string& what);
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

struct TrainResult {
  ModelBundle<float> bundle;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_f1 = 0.0;
};

using WindowSet = std::vector<const prep::PreparedWindow*>;

/// Stacks windows [begin, end) into a batch.
template <typename T>
Batch<T> make_batch(const WindowSet& windows, std::size_t begin, std::size_t end);

/// Two-phase translation training: phase 1 fits the regressor, phase 2 the
/// EDA encoder + classifier.
enum class Phase { kMain, kTranslationRegress, kTranslationClassify };

/// Loss of one batch for the bundle's trainer kind. With `rng` the networks
/// run in training mode (dropout, batch statistics); otherwise in inference
/// mode. With `accumulate` the parameter gradients of the total are added to
/// the bundle's grad buffers.
template <typename T>
LossBreakdown compute_batch_loss(ModelBundle<T>& bundle, const Batch<T>& batch, const TrainConfig& config,
                                 std::mt19937_64* rng, bool accumulate, Phase phase = Phase::kMain);

/// Stress probabilities (batch inference, inputs per the bundle's kind).
std::vector<double> predict_stress(ModelBundle<float>& bundle, const WindowSet& windows, int batch_size = 64);

/// F1 of thresholded (0.5) predictions.
double evaluate_f1(ModelBundle<float>& bundle, const WindowSet& windows, int batch_size = 64);

/// Trains any kind; dispatches to the co-teaching or baseline procedure.
TrainResult train_model(const WindowSet& train, const WindowSet& val, const TrainConfig& config);
TrainResult train_coteach(const WindowSet& train, const WindowSet& val, const TrainConfig& config);
TrainResult train_baseline(TrainerKind kind, const WindowSet& train, const WindowSet& val, TrainConfig config);

/// Mean squared error of the translation regressor on a window set.
double translation_regression_mse(ModelBundle<float>& bundle, const WindowSet& windows);

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history);

// ---- random search ----

struct SearchSpace {
  double lr_min = 1e-4;
  double lr_max = 1e-2;
  double alpha_min = 0.0;
  double alpha_max = 2.0;
  double beta_min = 0.0;
  double beta_max = 2.0;
  int n_trials = 10;
  std::uint64_t seed = 7;

  void validate() const;
};

struct TrialRecord {
  int trial = 0;
  double learning_rate = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double val_f1 = 0.0;
};

struct SearchResult {
  TrainConfig best;
  std::vector<TrialRecord> trials;
  int best_trial = 0;
};

/// Draws the trial configurations only (log-uniform lr, uniform alpha/beta).
std::vector<TrialRecord> sample_trials(const SearchSpace& space);

/// Trains one model per trial and ranks by validation F1 (first trial wins ties).
/// `evaluate` may replace training for tests; by default each trial trains
/// with train_model and reports best validation F1.
SearchResult random_search(const WindowSet& train, const WindowSet& val, const TrainConfig& base,
                           const SearchSpace& space,
                           const std::function<double(const TrainConfig&)>& evaluate = nullptr);

void write_trials_csv(const std::filesystem::path& path, const std::vector<TrialRecord>& trials);

// ---- checkpoints ----

class ChecksumError : public IoError {
 public:
  using IoError::IoError;
};

/// Writes <dir>/params.bin (named little-endian float32 arrays, each with a
/// CRC-32) and <dir>/config.json.
void save_checkpoint(ModelBundle<float>& bundle, const std::filesystem::path& dir);
ModelBundle<float> load_checkpoint(const std::filesystem::path& dir);

}  // namespace thermaco::train
