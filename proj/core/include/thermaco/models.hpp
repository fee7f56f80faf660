#pragma once

// The three networks of the method and the bundle that holds them:
//   F_T  thermal encoder   frames -> ResNet trunk -> 2x2 pool -> transformer -> mean over time
//   F_E  EDA encoder       6 summary features -> two affine layers
//   F_C  classifier        embedding -> two affine layers -> softmax over {non-stress, stress}
// Baseline trainer kinds add their own heads to the same bundle.

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "thermaco/datamodel.hpp"
#include "thermaco/losses.hpp"
#include "thermaco/nn/layers.hpp"
#include "thermaco/nn/transformer.hpp"

namespace thermaco {

enum class TrainerKind { kCoteach, kThermal, kEda, kMultimodal, kMultitask, kTranslation, kHallucination };

const char* trainer_kind_name(TrainerKind kind);
TrainerKind trainer_kind_from_name(const std::string& name);
const std::vector<TrainerKind>& all_trainer_kinds();
/// True for kinds whose inference consumes EDA (eda-only, multimodal).
bool kind_uses_eda_at_inference(TrainerKind kind);

struct ResidualBlockSpec {
  int channels = 64;
  int stride = 1;
};

struct ThermalEncoderConfig {
  int frames = 25;
  int height = 24;
  int width = 32;
  int stem_channels = 64;
  int stem_kernel = 7;
  int stem_stride = 2;
  std::vector<ResidualBlockSpec> blocks{{64, 1}, {64, 1}, {64, 1}};
  int pool_height = 2;
  int pool_width = 2;
  int attention_layers = 2;
  int attention_heads = 4;
  int feedforward_dim = 512;
  double dropout = 0.2;
  bool positional_encoding = true;

  int embedding_dim() const { return pool_height * pool_width * (blocks.empty() ? stem_channels : blocks.back().channels); }
  void validate() const;
};

struct EdaEncoderConfig {
  int input_dim = 6;
  int hidden_dim = 128;
  int output_dim = 256;
  double dropout = 0.2;
};

struct ClassifierConfig {
  int hidden_dim = 128;
  int classes = 2;
  double dropout = 0.2;
};

struct ModelConfig {
  ThermalEncoderConfig thermal;
  EdaEncoderConfig eda;
  ClassifierConfig classifier;

  int d() const { return thermal.embedding_dim(); }
  /// Throws ValidationError unless the EDA output dimension equals d.
  void validate() const;

  /// 64-channel trunk, d = 256, as described for the full-size model.
  static ModelConfig full(int frames = 25, int height = 240, int width = 320);
  /// Narrow trunk sized for single-core desk runs on 24x32 frames.
  static ModelConfig desk(int frames = 25, int height = 24, int width = 32);
  /// 4 frames of 8x8, d = 8; used for gradient checks.
  static ModelConfig reduced();
};

/// One minibatch. Thermal pixels are normalized windows, sample-major
/// (sample, frame, row, col); EDA holds one 6-feature row per sample.
template <typename T>
struct Batch {
  int size = 0;
  int frames = 0;
  int height = 0;
  int width = 0;
  std::vector<T> thermal;
  nn::Mat<T> eda;
  std::vector<int> labels;
};

/// Two affine layers with ReLU and dropout between them.
template <typename T>
class Mlp2 {
 public:
  struct Cache {
    nn::Mat<T> x;
    nn::Mat<T> hidden;  // post-ReLU
    nn::Mat<T> mask;
  };

  Mlp2() = default;
  Mlp2(const std::string& name, int in, int hidden, int out, double dropout, std::mt19937_64& rng);

  nn::Mat<T> forward(const nn::Mat<T>& x, nn::Mode mode, std::mt19937_64* rng, Cache* cache) const;
  nn::Mat<T> backward(const Cache& cache, const nn::Mat<T>& dy);
  void collect(nn::ParamRefs<T>& out);
  bool empty() const { return in_ == 0; }
  int in_features() const { return in_; }
  int out_features() const { return out_; }

  nn::Linear<T> first;
  nn::Linear<T> second;

 private:
  int in_ = 0;
  int out_ = 0;
  double dropout_ = 0.0;
};

template <typename T>
class ThermalEncoder {
 public:
  struct Block {
    nn::Conv2d<T> conv1;
    nn::BatchNorm2d<T> bn1;
    nn::Conv2d<T> conv2;
    nn::BatchNorm2d<T> bn2;
    bool projection = false;
    nn::Conv2d<T> proj;
    nn::BatchNorm2d<T> proj_bn;
  };
  struct BlockCache {
    typename nn::Conv2d<T>::Cache conv1, conv2, proj;
    typename nn::BatchNorm2d<T>::Cache bn1, bn2, proj_bn;
    nn::FeatureMap<T> act1;  // post-ReLU after bn1
    nn::FeatureMap<T> out;   // post-ReLU block output
  };
  struct Cache {
    int batch = 0;
    typename nn::Conv2d<T>::Cache stem;
    typename nn::BatchNorm2d<T>::Cache stem_bn;
    nn::FeatureMap<T> stem_out;
    std::vector<BlockCache> blocks;
    int trunk_height = 0;
    int trunk_width = 0;
    typename nn::TemporalEncoder<T>::Cache temporal;
  };

  ThermalEncoder() = default;
  ThermalEncoder(const ThermalEncoderConfig& config, std::mt19937_64& rng);

  /// pixels: batch * frames * height * width values. Returns batch x d.
  /// Training mode updates batch-norm running statistics.
  nn::Mat<T> forward(std::span<const T> pixels, int batch, nn::Mode mode, std::mt19937_64* rng, Cache* cache);
  void backward(const Cache& cache, const nn::Mat<T>& dz);
  void collect(nn::ParamRefs<T>& out);
  const ThermalEncoderConfig& config() const { return config_; }

 private:
  ThermalEncoderConfig config_;
  nn::Conv2d<T> stem_;
  nn::BatchNorm2d<T> stem_bn_;
  std::vector<Block> blocks_;
  nn::TemporalEncoder<T> temporal_;
};

/// Parameters plus configuration of every network a trainer kind uses.
/// Both encoders exist for every kind so that encoder sizes are identical
/// across comparisons.
template <typename T>
class ModelBundle {
 public:
  ModelBundle() = default;
  ModelBundle(const ModelConfig& config, TrainerKind kind, loss::LossWeights weights, std::uint64_t seed);

  ModelConfig config;
  TrainerKind kind = TrainerKind::kCoteach;
  loss::LossWeights weights;
  std::uint64_t seed = 0;

  ThermalEncoder<T> thermal;
  Mlp2<T> eda;         // F_E
  Mlp2<T> classifier;  // F_C (input 2d for multimodal and hallucination)
  Mlp2<T> eda_head;    // multitask: EDA-only head
  Mlp2<T> joint_head;  // multitask: concatenated-embedding head
  Mlp2<T> regressor;   // translation: z_t -> 6 EDA features
  Mlp2<T> hallucinator;  // hallucination: z_t -> pseudo z_e

  /// Every parameter (including batch-norm running statistics) in a fixed order.
  nn::ParamRefs<T> parameters();
  std::size_t thermal_encoder_size();
  std::size_t eda_encoder_size();
  void zero_grad();
};

struct TwoStreamOutput {
  std::array<double, 2> y_t{};
  std::array<double, 2> y_e{};
  std::vector<double> z_t;
  std::vector<double> z_e;
};

// Single-window API. Windows are normalized thermal pixels (frames * H * W).
template <typename T>
std::vector<double> thermal_encode(ModelBundle<T>& bundle, std::span<const float> window);
template <typename T>
std::vector<double> eda_encode(ModelBundle<T>& bundle, const EdaFeatureVector& features);
/// Softmax of the shared classifier on a d-vector (inference mode).
template <typename T>
std::array<double, 2> classify(ModelBundle<T>& bundle, std::span<const double> z);
/// Both streams through the shared classifier. Training mode when rng is
/// given (dropout active, batch statistics), inference mode otherwise.
template <typename T>
TwoStreamOutput forward_train(ModelBundle<T>& bundle, std::span<const float> window, const EdaFeatureVector& features,
                              std::mt19937_64* rng);
/// Thermal-only inference: classify(thermal_encode(window)) for co-teaching;
/// baseline kinds use their own thermal-only head. EDA-consuming kinds throw.
template <typename T>
std::array<double, 2> forward_infer(ModelBundle<T>& bundle, std::span<const float> window);

/// Batched inference for any trainer kind, consuming only the inputs the kind
/// declares (EDA rows are ignored by thermal-only kinds). Returns batch x 2.
template <typename T>
nn::Mat<T> predict_proba(ModelBundle<T>& bundle, const Batch<T>& batch);

/// Inference-mode z_t for a batch.
template <typename T>
nn::Mat<T> encode_thermal_batch(ModelBundle<T>& bundle, const Batch<T>& batch);

}  // namespace thermaco
