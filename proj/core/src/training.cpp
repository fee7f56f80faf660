#include "thermaco/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "thermaco/session_io.hpp"

namespace thermaco::train {

using nn::Mat;
using nn::Mode;

void TrainConfig::validate() const {
  model.validate();
  weights.validate();
  if (epochs <= 0) throw ValidationError("train config: epochs must be positive");
  if (batch_size <= 0) throw ValidationError("train config: batch_size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ValidationError("train config: learning rate must be positive");
  if (patience <= 0) throw ValidationError("train config: patience must be positive");
  if (windows_per_epoch < 0) throw ValidationError("train config: windows_per_epoch must be >= 0");
  if (similarity == Similarity::kCmd && cmd_order < 1) throw ValidationError("train config: cmd order must be >= 1");
  augment_spec.validate();
}

DivergenceError::DivergenceError(int epoch, const std::string& what)
    : std::runtime_error("training diverged in epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}

template <typename T>
Batch<T> make_batch(const WindowSet& windows, std::size_t begin, std::size_t end) {
  if (begin >= end || end > windows.size()) throw ValidationError("make_batch: empty or out-of-range slice");
  Batch<T> b;
  const auto& first = *windows[begin];
  b.size = static_cast<int>(end - begin);
  b.frames = first.frames;
  b.height = first.height;
  b.width = first.width;
  const std::size_t per = first.thermal.size();
  b.thermal.resize(per * b.size);
  b.eda.resize(b.size, EdaFeatureVector::kSize);
  b.labels.resize(b.size);
  for (std::size_t i = begin; i < end; ++i) {
    const auto& w = *windows[i];
    if (w.thermal.size() != per) throw ValidationError("make_batch: windows differ in shape");
    const std::size_t r = i - begin;
    std::copy(w.thermal.begin(), w.thermal.end(), b.thermal.begin() + r * per);
    const auto f = w.eda.to_array();
    for (std::size_t j = 0; j < f.size(); ++j) b.eda(r, j) = static_cast<T>(f[j]);
    b.labels[r] = w.label;
  }
  return b;
}

namespace {

template <typename T>
Mat<T> concat_cols(const Mat<T>& a, const Mat<T>& b) {
  Mat<T> out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

/// Cross-entropy of softmax(logits); fills dlogits when requested.
template <typename T>
double ce_from_logits(const Mat<T>& logits, std::span<const int> labels, Mat<T>* dlogits) {
  const Mat<T> p = nn::softmax_rows(logits);
  Mat<T> dp;
  const double l = loss::task_loss_batch(p, labels, dlogits ? &dp : nullptr);
  if (dlogits) *dlogits = nn::softmax_backward(p, dp);
  return l;
}

}  // namespace

template <typename T>
LossBreakdown compute_batch_loss(ModelBundle<T>& b, const Batch<T>& batch, const TrainConfig& config,
                                 std::mt19937_64* rng, bool accumulate, Phase phase) {
  const Mode mode = rng ? Mode::kTrain : Mode::kInfer;
  const std::span<const int> labels(batch.labels);
  const double alpha = config.weights.alpha;
  const double beta = config.weights.beta;
  const int n = batch.size;

  typename ThermalEncoder<T>::Cache tc;
  typename Mlp2<T>::Cache ec, c1, c2, c3, hc;
  auto* tcp = accumulate ? &tc : nullptr;
  auto* ecp = accumulate ? &ec : nullptr;
  auto* c1p = accumulate ? &c1 : nullptr;
  auto* c2p = accumulate ? &c2 : nullptr;
  auto* c3p = accumulate ? &c3 : nullptr;
  auto* hcp = accumulate ? &hc : nullptr;

  LossBreakdown out;
  switch (b.kind) {
    case TrainerKind::kCoteach: {
      const Mat<T> zt = b.thermal.forward(batch.thermal, n, mode, rng, tcp);
      const Mat<T> ze = b.eda.forward(batch.eda, mode, rng, ecp);
      const Mat<T> pt = nn::softmax_rows(b.classifier.forward(zt, mode, rng, c1p));
      const Mat<T> pe = nn::softmax_rows(b.classifier.forward(ze, mode, rng, c2p));
      Mat<T> dpt, dpe, dzt_s, dze_s, dpt_c, dpe_c;
      out.l_t = loss::task_loss_batch(pt, labels, accumulate ? &dpt : nullptr);
      out.l_e = loss::task_loss_batch(pe, labels, accumulate ? &dpe : nullptr);
      out.l_s = config.similarity == Similarity::kMse
                    ? loss::similarity_loss_batch(zt, ze, accumulate ? &dzt_s : nullptr, accumulate ? &dze_s : nullptr)
                    : loss::cmd_loss_batch(zt, ze, config.cmd_order, accumulate ? &dzt_s : nullptr,
                                           accumulate ? &dze_s : nullptr);
      out.l_c = loss::consistency_loss_batch(pt, pe, accumulate ? &dpt_c : nullptr, accumulate ? &dpe_c : nullptr);
      out.total = loss::total_loss(out.l_t, out.l_e, out.l_s, out.l_c, config.weights);
      if (accumulate) {
        const Mat<T> dlt = nn::softmax_backward(pt, Mat<T>(dpt + static_cast<T>(beta) * dpt_c));
        const Mat<T> dle = nn::softmax_backward(pe, Mat<T>(dpe + static_cast<T>(beta) * dpe_c));
        Mat<T> dzt = b.classifier.backward(c1, dlt);
        Mat<T> dze = b.classifier.backward(c2, dle);
        dzt += static_cast<T>(alpha) * dzt_s;
        dze += static_cast<T>(alpha) * dze_s;
        b.thermal.backward(tc, dzt);
        b.eda.backward(ec, dze);
      }
      break;
    }
    case TrainerKind::kThermal: {
      const Mat<T> zt = b.thermal.forward(batch.thermal, n, mode, rng, tcp);
      Mat<T> dl;
      out.l_t = ce_from_logits(b.classifier.forward(zt, mode, rng, c1p), labels, accumulate ? &dl : nullptr);
      out.total = out.l_t;
      if (accumulate) b.thermal.backward(tc, b.classifier.backward(c1, dl));
      break;
    }
    case TrainerKind::kEda: {
      const Mat<T> ze = b.eda.forward(batch.eda, mode, rng, ecp);
      Mat<T> dl;
      out.l_e = ce_from_logits(b.classifier.forward(ze, mode, rng, c2p), labels, accumulate ? &dl : nullptr);
      out.total = out.l_e;
      if (accumulate) b.eda.backward(ec, b.classifier.backward(c2, dl));
      break;
    }
    case TrainerKind::kMultimodal: {
      const Mat<T> zt = b.thermal.forward(batch.thermal, n, mode, rng, tcp);
      const Mat<T> ze = b.eda.forward(batch.eda, mode, rng, ecp);
      Mat<T> dl;
      out.l_aux = ce_from_logits(b.classifier.forward(concat_cols(zt, ze), mode, rng, c1p), labels,
                                 accumulate ? &dl : nullptr);
      out.total = out.l_aux;
      if (accumulate) {
        const Mat<T> dz = b.classifier.backward(c1, dl);
        const int d = static_cast<int>(zt.cols());
        b.thermal.backward(tc, dz.leftCols(d));
        b.eda.backward(ec, dz.rightCols(d));
      }
      break;
    }
    case TrainerKind::kMultitask: {
      const Mat<T> zt = b.thermal.forward(batch.thermal, n, mode, rng, tcp);
      const Mat<T> ze = b.eda.forward(batch.eda, mode, rng, ecp);
      Mat<T> dlt, dle, dlj;
      out.l_t = ce_from_logits(b.classifier.forward(zt, mode, rng, c1p), labels, accumulate ? &dlt : nullptr);
      out.l_e = ce_from_logits(b.eda_head.forward(ze, mode, rng, c2p), labels, accumulate ? &dle : nullptr);
      out.l_aux = ce_from_logits(b.joint_head.forward(concat_cols(zt, ze), mode, rng, c3p), labels,
                                 accumulate ? &dlj : nullptr);
      out.total = out.l_t + out.l_e + out.l_aux;
      if (accumulate) {
        const int d = static_cast<int>(zt.cols());
        const Mat<T> dzj = b.joint_head.backward(c3, dlj);
        Mat<T> dzt = b.classifier.backward(c1, dlt);
        Mat<T> dze = b.eda_head.backward(c2, dle);
        dzt += dzj.leftCols(d);
        dze += dzj.rightCols(d);
        b.thermal.backward(tc, dzt);
        b.eda.backward(ec, dze);
      }
      break;
    }
    case TrainerKind::kTranslation: {
      if (phase == Phase::kTranslationRegress) {
        const Mat<T> zt = b.thermal.forward(batch.thermal, n, mode, rng, tcp);
        const Mat<T> pred = b.regressor.forward(zt, mode, rng, hcp);
        Mat<T> dpred;
        out.l_aux = loss::mse_batch(pred, batch.eda, accumulate ? &dpred : nullptr);
        out.total = out.l_aux;
        if (accumulate) b.thermal.backward(tc, b.regressor.backward(hc, dpred));
      } else if (phase == Phase::kTranslationClassify) {
        const Mat<T> ze = b.eda.forward(batch.eda, mode, rng, ecp);
        Mat<T> dl;
        out.l_e = ce_from_logits(b.classifier.forward(ze, mode, rng, c2p), labels, accumulate ? &dl : nullptr);
        out.total = out.l_e;
        if (accumulate) b.eda.backward(ec, b.classifier.backward(c2, dl));
      } else {
        // Whole thermal -> features -> F_E -> F_C pipeline.
        const Mat<T> zt = b.thermal.forward(batch.thermal, n, mode, rng, tcp);
        const Mat<T> feats = b.regressor.forward(zt, mode, rng, hcp);
        const Mat<T> ze = b.eda.forward(feats, mode, rng, ecp);
        Mat<T> dl;
        out.l_t = ce_from_logits(b.classifier.forward(ze, mode, rng, c1p), labels, accumulate ? &dl : nullptr);
        out.total = out.l_t;
        if (accumulate) {
          const Mat<T> dfeats = b.eda.backward(ec, b.classifier.backward(c1, dl));
          b.thermal.backward(tc, b.regressor.backward(hc, dfeats));
        }
      }
      break;
    }
    case TrainerKind::kHallucination: {
      const Mat<T> zt = b.thermal.forward(batch.thermal, n, mode, rng, tcp);
      const Mat<T> ze = b.eda.forward(batch.eda, mode, rng, ecp);
      const Mat<T> zh = b.hallucinator.forward(zt, mode, rng, hcp);
      Mat<T> dl_real, dl_hall, dzh_s;
      out.l_aux = ce_from_logits(b.classifier.forward(concat_cols(zt, ze), mode, rng, c1p), labels,
                                 accumulate ? &dl_real : nullptr);
      out.l_t = ce_from_logits(b.classifier.forward(concat_cols(zt, zh), mode, rng, c2p), labels,
                               accumulate ? &dl_hall : nullptr);
      // The EDA embedding is the regression target only (no gradient through it).
      out.l_s = loss::mse_batch(zh, ze, accumulate ? &dzh_s : nullptr);
      out.total = out.l_t + out.l_aux + out.l_s;
      if (accumulate) {
        const int d = static_cast<int>(zt.cols());
        const Mat<T> dreal = b.classifier.backward(c1, dl_real);
        const Mat<T> dhall = b.classifier.backward(c2, dl_hall);
        Mat<T> dzh = dhall.rightCols(d);
        dzh += dzh_s;
        Mat<T> dzt = dreal.leftCols(d);
        dzt += dhall.leftCols(d);
        dzt += b.hallucinator.backward(hc, dzh);
        b.thermal.backward(tc, dzt);
        b.eda.backward(ec, dreal.rightCols(d));
      }
      break;
    }
  }
  return out;
}

std::vector<double> predict_stress(ModelBundle<float>& bundle, const WindowSet& windows, int batch_size) {
  std::vector<double> out;
  out.reserve(windows.size());
  for (std::size_t i = 0; i < windows.size(); i += batch_size) {
    const std::size_t end = std::min(windows.size(), i + static_cast<std::size_t>(batch_size));
    const auto batch = make_batch<float>(windows, i, end);
    const Mat<float> p = predict_proba(bundle, batch);
    for (Eigen::Index r = 0; r < p.rows(); ++r) out.push_back(p(r, 1));
  }
  return out;
}

double evaluate_f1(ModelBundle<float>& bundle, const WindowSet& windows, int batch_size) {
  if (windows.empty()) return 0.0;
  const auto probs = predict_stress(bundle, windows, batch_size);
  std::vector<int> pred(probs.size()), labels(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    pred[i] = probs[i] >= 0.5 ? kStress : kNonStress;
    labels[i] = windows[i]->label;
  }
  return compute_metrics(pred, labels).f1;
}

double translation_regression_mse(ModelBundle<float>& bundle, const WindowSet& windows) {
  if (windows.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < windows.size(); i += 64) {
    const std::size_t end = std::min(windows.size(), i + 64);
    const auto batch = make_batch<float>(windows, i, end);
    const Mat<float> zt = encode_thermal_batch(bundle, batch);
    const Mat<float> pred = bundle.regressor.forward(zt, Mode::kInfer, nullptr, nullptr);
    sum += (pred - batch.eda).cast<double>().squaredNorm();
  }
  return sum / (static_cast<double>(windows.size()) * EdaFeatureVector::kSize);
}

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag)};
  return std::mt19937_64(seq);
}

void check_shapes(const WindowSet& windows, const ModelConfig& model) {
  for (const auto* w : windows) {
    if (w->frames != model.thermal.frames || w->height != model.thermal.height || w->width != model.thermal.width) {
      throw ValidationError("training window shape " + std::to_string(w->frames) + "x" + std::to_string(w->height) +
                            "x" + std::to_string(w->width) + " does not match the model's " +
                            std::to_string(model.thermal.frames) + "x" + std::to_string(model.thermal.height) + "x" +
                            std::to_string(model.thermal.width));
    }
  }
}

using Snapshot = std::vector<std::vector<float>>;

Snapshot take_snapshot(const nn::ParamRefs<float>& params) {
  Snapshot s;
  s.reserve(params.size());
  for (const auto* p : params) s.push_back(p->value);
  return s;
}

void restore_snapshot(nn::ParamRefs<float>& params, const Snapshot& s) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = s[i];
}

void apply_augmentation(Batch<float>& batch, const WindowSet& windows, std::size_t begin,
                        const prep::MaskAugmentSpec& spec, std::mt19937_64& rng) {
  const std::size_t per = windows[begin]->thermal.size();
  for (int r = 0; r < batch.size; ++r) {
    const auto parts = prep::draw_masked_parts(spec, rng);
    if (parts.empty()) continue;
    std::array<bool, kNumBodyParts + 1> hit{};
    for (BodyPart p : parts) hit[static_cast<int>(p)] = true;
    const auto& pm = windows[begin + r]->part_map;
    float* px = batch.thermal.data() + r * per;
    for (std::size_t i = 0; i < per; ++i) {
      if (hit[pm[i]]) px[i] = 0.0f;
    }
  }
}

TrainResult run_training(const WindowSet& train, const WindowSet& val, const TrainConfig& config) {
  config.validate();
  if (train.empty()) throw ValidationError("training set is empty");
  check_shapes(train, config.model);
  check_shapes(val, config.model);

  TrainResult result{ModelBundle<float>(config.model, config.kind, config.weights, config.seed), {}, 0, 0.0};
  ModelBundle<float>& bundle = result.bundle;
  auto params = bundle.parameters();
  auto order_rng = stream(config.seed, 1);
  auto dropout_rng = stream(config.seed, 2);
  auto augment_rng = stream(config.seed, 3);

  std::vector<Phase> phases{Phase::kMain};
  if (config.kind == TrainerKind::kTranslation) phases = {Phase::kTranslationRegress, Phase::kTranslationClassify};

  WindowSet order = train;
  int global_epoch = 0;
  for (Phase phase : phases) {
    nn::Adam<float> adam(config.learning_rate);
    Snapshot best = take_snapshot(params);
    double best_score = -std::numeric_limits<double>::infinity();
    int since_best = 0;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
      ++global_epoch;
      std::shuffle(order.begin(), order.end(), order_rng);
      const std::size_t n =
          config.windows_per_epoch > 0 ? std::min(order.size(), std::size_t(config.windows_per_epoch)) : order.size();
      EpochRecord rec;
      rec.epoch = global_epoch;
      for (std::size_t i = 0; i < n; i += config.batch_size) {
        const std::size_t end = std::min(n, i + static_cast<std::size_t>(config.batch_size));
        Batch<float> batch = make_batch<float>(order, i, end);
        if (config.augment) apply_augmentation(batch, order, i, config.augment_spec, augment_rng);
        bundle.zero_grad();
        const LossBreakdown lb = compute_batch_loss(bundle, batch, config, &dropout_rng, true, phase);
        if (!std::isfinite(lb.total)) throw DivergenceError(global_epoch, "non-finite loss");
        adam.step(params);
        const double w = static_cast<double>(end - i) / static_cast<double>(n);
        rec.l_t += w * lb.l_t;
        rec.l_e += w * lb.l_e;
        rec.l_s += w * lb.l_s;
        rec.l_c += w * lb.l_c;
        rec.l_aux += w * lb.l_aux;
        rec.total += w * lb.total;
      }
      double score;
      if (val.empty()) {
        rec.val_f1 = 0.0;
        score = epoch;  // nothing to select on: keep the latest
      } else if (phase == Phase::kTranslationRegress) {
        rec.val_f1 = evaluate_f1(bundle, val);
        score = -translation_regression_mse(bundle, val);
      } else {
        rec.val_f1 = evaluate_f1(bundle, val);
        score = rec.val_f1;
      }
      result.history.push_back(rec);
      if (score > best_score) {
        best_score = score;
        best = take_snapshot(params);
        result.best_epoch = global_epoch;
        since_best = 0;
      } else if (++since_best >= config.patience) {
        break;
      }
    }
    restore_snapshot(params, best);
  }
  result.best_val_f1 = val.empty() ? 0.0 : evaluate_f1(bundle, val);
  return result;
}

}  // namespace

TrainResult train_coteach(const WindowSet& train, const WindowSet& val, const TrainConfig& config) {
  if (config.kind != TrainerKind::kCoteach) throw ValidationError("train_coteach: config names another trainer kind");
  return run_training(train, val, config);
}

TrainResult train_baseline(TrainerKind kind, const WindowSet& train, const WindowSet& val, TrainConfig config) {
  if (kind == TrainerKind::kCoteach) throw ValidationError("train_baseline: coteach is not a baseline");
  config.kind = kind;
  return run_training(train, val, config);
}

TrainResult train_model(const WindowSet& train, const WindowSet& val, const TrainConfig& config) {
  return config.kind == TrainerKind::kCoteach ? train_coteach(train, val, config)
                                              : train_baseline(config.kind, train, val, config);
}

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  os << "epoch,l_t,l_e,l_s,l_c,total,val_f1,l_aux\n";
  for (const auto& r : history) {
    os << r.epoch << ',' << format_double(r.l_t) << ',' << format_double(r.l_e) << ',' << format_double(r.l_s) << ','
       << format_double(r.l_c) << ',' << format_double(r.total) << ',' << format_double(r.val_f1) << ','
       << format_double(r.l_aux) << '\n';
  }
}

// ---------------------------------------------------------------- random search

void SearchSpace::validate() const {
  if (n_trials < 1) throw ValidationError("search space: n_trials must be >= 1");
  if (!(lr_min > 0.0) || !(lr_max >= lr_min)) throw ValidationError("search space: need 0 < lr_min <= lr_max");
  if (alpha_min < 0.0 || alpha_max < alpha_min) throw ValidationError("search space: empty alpha range");
  if (beta_min < 0.0 || beta_max < beta_min) throw ValidationError("search space: empty beta range");
}

std::vector<TrialRecord> sample_trials(const SearchSpace& space) {
  space.validate();
  std::mt19937_64 rng(space.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<TrialRecord> trials;
  const double llo = std::log(space.lr_min), lhi = std::log(space.lr_max);
  for (int t = 0; t < space.n_trials; ++t) {
    TrialRecord r;
    r.trial = t;
    r.learning_rate = std::exp(llo + (lhi - llo) * u(rng));
    r.alpha = space.alpha_min + (space.alpha_max - space.alpha_min) * u(rng);
    r.beta = space.beta_min + (space.beta_max - space.beta_min) * u(rng);
    trials.push_back(r);
  }
  return trials;
}

SearchResult random_search(const WindowSet& train, const WindowSet& val, const TrainConfig& base,
                           const SearchSpace& space, const std::function<double(const TrainConfig&)>& evaluate) {
  SearchResult result;
  result.trials = sample_trials(space);
  double best = -std::numeric_limits<double>::infinity();
  for (auto& trial : result.trials) {
    TrainConfig cfg = base;
    cfg.learning_rate = trial.learning_rate;
    cfg.weights = {trial.alpha, trial.beta};
    trial.val_f1 = evaluate ? evaluate(cfg) : train_model(train, val, cfg).best_val_f1;
    if (trial.val_f1 > best) {
      best = trial.val_f1;
      result.best = cfg;
      result.best_trial = trial.trial;
    }
  }
  return result;
}

void write_trials_csv(const std::filesystem::path& path, const std::vector<TrialRecord>& trials) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  os << "trial,learning_rate,alpha,beta,val_f1\n";
  for (const auto& t : trials) {
    os << t.trial << ',' << format_double(t.learning_rate) << ',' << format_double(t.alpha) << ','
       << format_double(t.beta) << ',' << format_double(t.val_f1) << '\n';
  }
}

template Batch<float> make_batch<float>(const WindowSet&, std::size_t, std::size_t);
template Batch<double> make_batch<double>(const WindowSet&, std::size_t, std::size_t);
template LossBreakdown compute_batch_loss<float>(ModelBundle<float>&, const Batch<float>&, const TrainConfig&,
                                                 std::mt19937_64*, bool, Phase);
template LossBreakdown compute_batch_loss<double>(ModelBundle<double>&, const Batch<double>&, const TrainConfig&,
                                                  std::mt19937_64*, bool, Phase);

}  // namespace thermaco::train
