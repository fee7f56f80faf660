#include "thermaco/models.hpp"

#include <cmath>
#include <stdexcept>

namespace thermaco {

using nn::FeatureMap;
using nn::Mat;
using nn::Mode;

const char* trainer_kind_name(TrainerKind kind) {
  switch (kind) {
    case TrainerKind::kCoteach: return "coteach";
    case TrainerKind::kThermal: return "thermal";
    case TrainerKind::kEda: return "eda";
    case TrainerKind::kMultimodal: return "multimodal";
    case TrainerKind::kMultitask: return "multitask";
    case TrainerKind::kTranslation: return "translation";
    case TrainerKind::kHallucination: return "hallucination";
  }
  return "unknown";
}

TrainerKind trainer_kind_from_name(const std::string& name) {
  for (TrainerKind k : all_trainer_kinds()) {
    if (name == trainer_kind_name(k)) return k;
  }
  throw ValidationError("unknown trainer kind '" + name + "'");
}

const std::vector<TrainerKind>& all_trainer_kinds() {
  static const std::vector<TrainerKind> kinds{TrainerKind::kCoteach,    TrainerKind::kThermal,
                                              TrainerKind::kEda,        TrainerKind::kMultimodal,
                                              TrainerKind::kMultitask,  TrainerKind::kTranslation,
                                              TrainerKind::kHallucination};
  return kinds;
}

bool kind_uses_eda_at_inference(TrainerKind kind) {
  return kind == TrainerKind::kEda || kind == TrainerKind::kMultimodal;
}

void ThermalEncoderConfig::validate() const {
  if (frames <= 0 || height <= 0 || width <= 0) throw ValidationError("thermal encoder: frame shape must be positive");
  if (stem_channels <= 0 || stem_kernel <= 0 || stem_stride <= 0) throw ValidationError("thermal encoder: bad stem");
  for (const auto& b : blocks) {
    if (b.channels <= 0 || b.stride <= 0) throw ValidationError("thermal encoder: bad residual block");
  }
  if (pool_height <= 0 || pool_width <= 0) throw ValidationError("thermal encoder: bad pooling size");
  if (attention_layers < 0 || attention_heads <= 0 || feedforward_dim <= 0) {
    throw ValidationError("thermal encoder: bad attention settings");
  }
  if (embedding_dim() % attention_heads != 0) throw ValidationError("thermal encoder: d must be divisible by heads");
  if (dropout < 0.0 || dropout >= 1.0) throw ValidationError("thermal encoder: dropout must be in [0,1)");
  int h = height, w = width;
  auto shrink = [&](int k, int s, int p) {
    h = (h + 2 * p - k) / s + 1;
    w = (w + 2 * p - k) / s + 1;
  };
  shrink(stem_kernel, stem_stride, stem_kernel / 2);
  for (const auto& b : blocks) shrink(3, b.stride, 1);
  if (h < pool_height || w < pool_width) {
    throw ValidationError("thermal encoder: frames too small for the trunk (final map " + std::to_string(h) + "x" +
                          std::to_string(w) + ")");
  }
}

void ModelConfig::validate() const {
  thermal.validate();
  if (eda.output_dim != d()) {
    throw ValidationError("model config: EDA embedding dim " + std::to_string(eda.output_dim) +
                          " differs from thermal embedding dim " + std::to_string(d()));
  }
  if (eda.input_dim != static_cast<int>(EdaFeatureVector::kSize)) throw ValidationError("model config: EDA input dim must be 6");
  if (eda.hidden_dim <= 0 || classifier.hidden_dim <= 0) throw ValidationError("model config: hidden dims must be positive");
  if (classifier.classes != 2) throw ValidationError("model config: classifier must have 2 classes");
}

ModelConfig ModelConfig::full(int frames, int height, int width) {
  ModelConfig c;
  c.thermal.frames = frames;
  c.thermal.height = height;
  c.thermal.width = width;
  c.eda.output_dim = c.d();
  return c;
}

ModelConfig ModelConfig::desk(int frames, int height, int width) {
  ModelConfig c;
  c.thermal.frames = frames;
  c.thermal.height = height;
  c.thermal.width = width;
  c.thermal.stem_channels = 8;
  c.thermal.blocks = {{8, 2}, {16, 1}, {16, 2}};
  c.thermal.feedforward_dim = 128;
  c.eda.hidden_dim = 64;
  c.classifier.hidden_dim = 64;
  c.eda.output_dim = c.d();
  return c;
}

ModelConfig ModelConfig::reduced() {
  ModelConfig c;
  c.thermal.frames = 4;
  c.thermal.height = 8;
  c.thermal.width = 8;
  c.thermal.stem_channels = 2;
  c.thermal.blocks = {{2, 1}, {2, 2}, {2, 1}};
  c.thermal.attention_layers = 1;
  c.thermal.attention_heads = 2;
  c.thermal.feedforward_dim = 8;
  c.eda.hidden_dim = 8;
  c.classifier.hidden_dim = 8;
  c.eda.output_dim = c.d();
  return c;
}

// ---------------------------------------------------------------- Mlp2

template <typename T>
Mlp2<T>::Mlp2(const std::string& name, int in, int hidden, int out, double dropout, std::mt19937_64& rng)
    : first(name + ".fc1", in, hidden, rng), second(name + ".fc2", hidden, out, rng), in_(in), out_(out), dropout_(dropout) {}

template <typename T>
Mat<T> Mlp2<T>::forward(const Mat<T>& x, Mode mode, std::mt19937_64* rng, Cache* cache) const {
  Mat<T> h = first.forward(x);
  nn::relu_inplace(h);
  Mat<T> hd = h;
  Mat<T> mask = nn::dropout_inplace(hd, dropout_, mode, rng);
  Mat<T> y = second.forward(hd);
  if (cache) {
    cache->x = x;
    cache->hidden = std::move(h);
    cache->mask = std::move(mask);
  }
  return y;
}

template <typename T>
Mat<T> Mlp2<T>::backward(const Cache& cache, const Mat<T>& dy) {
  Mat<T> hd = cache.hidden;
  if (cache.mask.size() != 0) hd.array() *= cache.mask.array();
  Mat<T> dh = second.backward(hd, dy);
  nn::dropout_backward_inplace(cache.mask, dh);
  nn::relu_backward_inplace(cache.hidden, dh);
  return first.backward(cache.x, dh);
}

template <typename T>
void Mlp2<T>::collect(nn::ParamRefs<T>& out) {
  if (empty()) return;
  first.collect(out);
  second.collect(out);
}

// ---------------------------------------------------------------- ThermalEncoder

template <typename T>
ThermalEncoder<T>::ThermalEncoder(const ThermalEncoderConfig& config, std::mt19937_64& rng) : config_(config) {
  config_.validate();
  stem_ = nn::Conv2d<T>("thermal.stem", 1, config.stem_channels, config.stem_kernel, config.stem_stride,
                        config.stem_kernel / 2, rng);
  stem_bn_ = nn::BatchNorm2d<T>("thermal.stem_bn", config.stem_channels);
  int in = config.stem_channels;
  for (std::size_t i = 0; i < config.blocks.size(); ++i) {
    const auto& spec = config.blocks[i];
    const std::string name = "thermal.block" + std::to_string(i);
    Block b;
    b.conv1 = nn::Conv2d<T>(name + ".conv1", in, spec.channels, 3, spec.stride, 1, rng);
    b.bn1 = nn::BatchNorm2d<T>(name + ".bn1", spec.channels);
    b.conv2 = nn::Conv2d<T>(name + ".conv2", spec.channels, spec.channels, 3, 1, 1, rng);
    b.bn2 = nn::BatchNorm2d<T>(name + ".bn2", spec.channels);
    if (spec.stride != 1 || in != spec.channels) {
      b.projection = true;
      b.proj = nn::Conv2d<T>(name + ".proj", in, spec.channels, 1, spec.stride, 0, rng);
      b.proj_bn = nn::BatchNorm2d<T>(name + ".proj_bn", spec.channels);
    }
    blocks_.push_back(std::move(b));
    in = spec.channels;
  }
  const int d = config.embedding_dim();
  temporal_ = nn::TemporalEncoder<T>("thermal.temporal", d, config.attention_layers, config.attention_heads,
                                     config.feedforward_dim, config.dropout, config.positional_encoding, rng);
}

namespace {

template <typename T>
FeatureMap<T> run_bn(nn::BatchNorm2d<T>& bn, const FeatureMap<T>& x, Mode mode, typename nn::BatchNorm2d<T>::Cache* c) {
  return mode == Mode::kTrain ? bn.forward_train(x, c) : bn.forward_infer(x);
}

template <typename T>
void add_inplace(FeatureMap<T>& a, const FeatureMap<T>& b) {
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

}  // namespace

template <typename T>
Mat<T> ThermalEncoder<T>::forward(std::span<const T> pixels, int batch, Mode mode, std::mt19937_64* rng,
                                  Cache* cache) {
  const int steps = config_.frames;
  const std::size_t expected = std::size_t(batch) * steps * config_.height * config_.width;
  if (pixels.size() != expected) {
    throw ValidationError("thermal encoder: expected " + std::to_string(expected) + " pixels, got " +
                          std::to_string(pixels.size()));
  }
  FeatureMap<T> x(1, batch * steps, config_.height, config_.width);
  std::copy(pixels.begin(), pixels.end(), x.data.begin());

  const bool keep = cache != nullptr;
  if (keep) {
    cache->batch = batch;
    cache->blocks.assign(blocks_.size(), {});
  }
  FeatureMap<T> h = stem_.forward(x, keep ? &cache->stem : nullptr);
  h = run_bn(stem_bn_, h, mode, keep ? &cache->stem_bn : nullptr);
  nn::relu_inplace(h.data);
  if (keep) cache->stem_out = h;

  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    Block& b = blocks_[i];
    BlockCache* bc = keep ? &cache->blocks[i] : nullptr;
    FeatureMap<T> a = b.conv1.forward(h, bc ? &bc->conv1 : nullptr);
    a = run_bn(b.bn1, a, mode, bc ? &bc->bn1 : nullptr);
    nn::relu_inplace(a.data);
    if (bc) bc->act1 = a;
    FeatureMap<T> o = b.conv2.forward(a, bc ? &bc->conv2 : nullptr);
    o = run_bn(b.bn2, o, mode, bc ? &bc->bn2 : nullptr);
    if (b.projection) {
      FeatureMap<T> s = b.proj.forward(h, bc ? &bc->proj : nullptr);
      s = run_bn(b.proj_bn, s, mode, bc ? &bc->proj_bn : nullptr);
      add_inplace(o, s);
    } else {
      add_inplace(o, h);
    }
    nn::relu_inplace(o.data);
    if (bc) bc->out = o;
    h = std::move(o);
  }
  if (keep) {
    cache->trunk_height = h.height;
    cache->trunk_width = h.width;
  }
  FeatureMap<T> pooled = nn::adaptive_avg_pool(h, config_.pool_height, config_.pool_width);
  Mat<T> tokens = nn::flatten_per_sample(pooled);
  return temporal_.forward(tokens, batch, steps, mode, rng, keep ? &cache->temporal : nullptr);
}

template <typename T>
void ThermalEncoder<T>::backward(const Cache& cache, const Mat<T>& dz) {
  const int steps = config_.frames;
  Mat<T> dtokens = temporal_.backward(cache.temporal, dz, cache.batch, steps);
  const int channels = blocks_.empty() ? config_.stem_channels : config_.blocks.back().channels;
  FeatureMap<T> dpooled = nn::unflatten_per_sample(dtokens, channels, config_.pool_height, config_.pool_width);
  FeatureMap<T> dh = nn::adaptive_avg_pool_backward(dpooled, cache.trunk_height, cache.trunk_width);

  for (std::size_t i = blocks_.size(); i-- > 0;) {
    Block& b = blocks_[i];
    const BlockCache& bc = cache.blocks[i];
    nn::relu_backward_inplace(bc.out.data, dh.data);
    // Branch path.
    FeatureMap<T> d2 = b.bn2.backward(bc.bn2, dh);
    FeatureMap<T> da = b.conv2.backward(bc.conv2, d2);
    nn::relu_backward_inplace(bc.act1.data, da.data);
    FeatureMap<T> d1 = b.bn1.backward(bc.bn1, da);
    FeatureMap<T> dx = b.conv1.backward(bc.conv1, d1);
    // Shortcut path.
    if (b.projection) {
      FeatureMap<T> ds = b.proj_bn.backward(bc.proj_bn, dh);
      add_inplace(dx, b.proj.backward(bc.proj, ds));
    } else {
      add_inplace(dx, dh);
    }
    dh = std::move(dx);
  }
  nn::relu_backward_inplace(cache.stem_out.data, dh.data);
  FeatureMap<T> ds = stem_bn_.backward(cache.stem_bn, dh);
  stem_.backward(cache.stem, ds);  // input gradient unused
}

template <typename T>
void ThermalEncoder<T>::collect(nn::ParamRefs<T>& out) {
  stem_.collect(out);
  stem_bn_.collect(out);
  for (auto& b : blocks_) {
    b.conv1.collect(out);
    b.bn1.collect(out);
    b.conv2.collect(out);
    b.bn2.collect(out);
    if (b.projection) {
      b.proj.collect(out);
      b.proj_bn.collect(out);
    }
  }
  temporal_.collect(out);
}

// ---------------------------------------------------------------- ModelBundle

template <typename T>
ModelBundle<T>::ModelBundle(const ModelConfig& cfg, TrainerKind k, loss::LossWeights w, std::uint64_t s)
    : config(cfg), kind(k), weights(w), seed(s) {
  config.validate();
  weights.validate();
  std::mt19937_64 rng(seed);
  const int d = config.d();
  thermal = ThermalEncoder<T>(config.thermal, rng);
  eda = Mlp2<T>("eda", config.eda.input_dim, config.eda.hidden_dim, d, config.eda.dropout, rng);
  const bool wide = kind == TrainerKind::kMultimodal || kind == TrainerKind::kHallucination;
  const auto& cc = config.classifier;
  classifier = Mlp2<T>("classifier", wide ? 2 * d : d, cc.hidden_dim, cc.classes, cc.dropout, rng);
  switch (kind) {
    case TrainerKind::kMultitask:
      eda_head = Mlp2<T>("eda_head", d, cc.hidden_dim, cc.classes, cc.dropout, rng);
      joint_head = Mlp2<T>("joint_head", 2 * d, cc.hidden_dim, cc.classes, cc.dropout, rng);
      break;
    case TrainerKind::kTranslation:
      regressor = Mlp2<T>("regressor", d, cc.hidden_dim, config.eda.input_dim, cc.dropout, rng);
      break;
    case TrainerKind::kHallucination:
      hallucinator = Mlp2<T>("hallucinator", d, cc.hidden_dim, d, cc.dropout, rng);
      break;
    default:
      break;
  }
}

template <typename T>
nn::ParamRefs<T> ModelBundle<T>::parameters() {
  nn::ParamRefs<T> out;
  thermal.collect(out);
  eda.collect(out);
  classifier.collect(out);
  eda_head.collect(out);
  joint_head.collect(out);
  regressor.collect(out);
  hallucinator.collect(out);
  return out;
}

template <typename T>
std::size_t ModelBundle<T>::thermal_encoder_size() {
  nn::ParamRefs<T> refs;
  thermal.collect(refs);
  std::size_t n = 0;
  for (auto* p : refs) n += p->trainable ? p->size() : 0;
  return n;
}

template <typename T>
std::size_t ModelBundle<T>::eda_encoder_size() {
  nn::ParamRefs<T> refs;
  eda.collect(refs);
  std::size_t n = 0;
  for (auto* p : refs) n += p->size();
  return n;
}

template <typename T>
void ModelBundle<T>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

// ---------------------------------------------------------------- single-window API

namespace {

template <typename T>
std::vector<T> to_scalar(std::span<const float> v) {
  return std::vector<T>(v.begin(), v.end());
}

template <typename T>
std::vector<double> row_to_vector(const Mat<T>& m, Eigen::Index r = 0) {
  std::vector<double> out(m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) out[j] = static_cast<double>(m(r, j));
  return out;
}

template <typename T>
Mat<T> features_row(const EdaFeatureVector& f) {
  const auto a = f.to_array();
  Mat<T> m(1, a.size());
  for (std::size_t j = 0; j < a.size(); ++j) m(0, j) = static_cast<T>(a[j]);
  return m;
}

template <typename T>
std::array<double, 2> probs_of(const Mat<T>& logits) {
  // Softmax in double so the two probabilities sum to 1 at double precision.
  const double a = static_cast<double>(logits(0, 0));
  const double b = static_cast<double>(logits(0, 1));
  const double m = std::max(a, b);
  const double ea = std::exp(a - m);
  const double eb = std::exp(b - m);
  return {ea / (ea + eb), eb / (ea + eb)};
}

template <typename T>
Mat<T> concat_cols(const Mat<T>& a, const Mat<T>& b) {
  Mat<T> out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

}  // namespace

template <typename T>
std::vector<double> thermal_encode(ModelBundle<T>& bundle, std::span<const float> window) {
  const auto px = to_scalar<T>(window);
  return row_to_vector(bundle.thermal.forward(px, 1, Mode::kInfer, nullptr, nullptr));
}

template <typename T>
std::vector<double> eda_encode(ModelBundle<T>& bundle, const EdaFeatureVector& features) {
  return row_to_vector(bundle.eda.forward(features_row<T>(features), Mode::kInfer, nullptr, nullptr));
}

template <typename T>
std::array<double, 2> classify(ModelBundle<T>& bundle, std::span<const double> z) {
  if (static_cast<int>(z.size()) != bundle.classifier.in_features()) {
    throw ValidationError("classify: input has " + std::to_string(z.size()) + " values, classifier expects " +
                          std::to_string(bundle.classifier.in_features()));
  }
  Mat<T> row(1, z.size());
  for (std::size_t j = 0; j < z.size(); ++j) {
    if (!std::isfinite(z[j])) throw ValidationError("classify: non-finite input");
    row(0, j) = static_cast<T>(z[j]);
  }
  return probs_of(bundle.classifier.forward(row, Mode::kInfer, nullptr, nullptr));
}

template <typename T>
TwoStreamOutput forward_train(ModelBundle<T>& bundle, std::span<const float> window, const EdaFeatureVector& features,
                              std::mt19937_64* rng) {
  const Mode mode = rng ? Mode::kTrain : Mode::kInfer;
  const auto px = to_scalar<T>(window);
  const Mat<T> zt = bundle.thermal.forward(px, 1, mode, rng, nullptr);
  const Mat<T> ze = bundle.eda.forward(features_row<T>(features), mode, rng, nullptr);
  TwoStreamOutput out;
  out.y_t = probs_of(bundle.classifier.forward(zt, mode, rng, nullptr));
  out.y_e = probs_of(bundle.classifier.forward(ze, mode, rng, nullptr));
  out.z_t = row_to_vector(zt);
  out.z_e = row_to_vector(ze);
  return out;
}

namespace {

/// Class logits from z_t for every kind whose inference is thermal-only.
template <typename T>
Mat<T> thermal_only_logits(ModelBundle<T>& bundle, const Mat<T>& zt) {
  const Mode m = Mode::kInfer;
  switch (bundle.kind) {
    case TrainerKind::kEda:
    case TrainerKind::kMultimodal:
      throw ValidationError(std::string("thermal-only inference is undefined for trainer kind '") +
                            trainer_kind_name(bundle.kind) + "', which consumes EDA");
    case TrainerKind::kTranslation: {
      const Mat<T> feats = bundle.regressor.forward(zt, m, nullptr, nullptr);
      return bundle.classifier.forward(bundle.eda.forward(feats, m, nullptr, nullptr), m, nullptr, nullptr);
    }
    case TrainerKind::kHallucination: {
      const Mat<T> zh = bundle.hallucinator.forward(zt, m, nullptr, nullptr);
      return bundle.classifier.forward(concat_cols(zt, zh), m, nullptr, nullptr);
    }
    default:
      return bundle.classifier.forward(zt, m, nullptr, nullptr);
  }
}

}  // namespace

template <typename T>
std::array<double, 2> forward_infer(ModelBundle<T>& bundle, std::span<const float> window) {
  const auto z = thermal_encode(bundle, window);
  if (bundle.kind == TrainerKind::kCoteach || bundle.kind == TrainerKind::kThermal ||
      bundle.kind == TrainerKind::kMultitask) {
    return classify(bundle, z);
  }
  Mat<T> zt(1, z.size());
  for (std::size_t j = 0; j < z.size(); ++j) zt(0, j) = static_cast<T>(z[j]);
  return probs_of(thermal_only_logits(bundle, zt));
}

template <typename T>
Mat<T> encode_thermal_batch(ModelBundle<T>& bundle, const Batch<T>& batch) {
  return bundle.thermal.forward(batch.thermal, batch.size, Mode::kInfer, nullptr, nullptr);
}

template <typename T>
Mat<T> predict_proba(ModelBundle<T>& bundle, const Batch<T>& batch) {
  const Mode m = Mode::kInfer;
  switch (bundle.kind) {
    case TrainerKind::kEda:
      return nn::softmax_rows(bundle.classifier.forward(bundle.eda.forward(batch.eda, m, nullptr, nullptr), m, nullptr, nullptr));
    case TrainerKind::kMultimodal: {
      const Mat<T> zt = encode_thermal_batch(bundle, batch);
      const Mat<T> ze = bundle.eda.forward(batch.eda, m, nullptr, nullptr);
      return nn::softmax_rows(bundle.classifier.forward(concat_cols(zt, ze), m, nullptr, nullptr));
    }
    case TrainerKind::kTranslation: {
      const Mat<T> zt = encode_thermal_batch(bundle, batch);
      const Mat<T> feats = bundle.regressor.forward(zt, m, nullptr, nullptr);
      const Mat<T> ze = bundle.eda.forward(feats, m, nullptr, nullptr);
      return nn::softmax_rows(bundle.classifier.forward(ze, m, nullptr, nullptr));
    }
    case TrainerKind::kHallucination: {
      const Mat<T> zt = encode_thermal_batch(bundle, batch);
      const Mat<T> zh = bundle.hallucinator.forward(zt, m, nullptr, nullptr);
      return nn::softmax_rows(bundle.classifier.forward(concat_cols(zt, zh), m, nullptr, nullptr));
    }
    default: {
      const Mat<T> zt = encode_thermal_batch(bundle, batch);
      return nn::softmax_rows(bundle.classifier.forward(zt, m, nullptr, nullptr));
    }
  }
}

#define THERMACO_INSTANTIATE(T)                                                                                  \
  template class Mlp2<T>;                                                                                        \
  template class ThermalEncoder<T>;                                                                              \
  template class ModelBundle<T>;                                                                                 \
  template std::vector<double> thermal_encode<T>(ModelBundle<T>&, std::span<const float>);                       \
  template std::vector<double> eda_encode<T>(ModelBundle<T>&, const EdaFeatureVector&);                          \
  template std::array<double, 2> classify<T>(ModelBundle<T>&, std::span<const double>);                          \
  template TwoStreamOutput forward_train<T>(ModelBundle<T>&, std::span<const float>, const EdaFeatureVector&,     \
                                            std::mt19937_64*);                                                   \
  template std::array<double, 2> forward_infer<T>(ModelBundle<T>&, std::span<const float>);                      \
  template Mat<T> predict_proba<T>(ModelBundle<T>&, const Batch<T>&);                                            \
  template Mat<T> encode_thermal_batch<T>(ModelBundle<T>&, const Batch<T>&);

THERMACO_INSTANTIATE(float)
THERMACO_INSTANTIATE(double)
#undef THERMACO_INSTANTIATE

}  // namespace thermaco
