#pragma once

// Minimal layer library with explicit forward/backward passes. Activations of
// the convolutional trunk use a channel-major CNHW layout so a convolution is
// one GEMM over an im2col buffer; dense activations are row-major matrices
// with one row per sample (or token).

#include <algorithm>
#include <cstdint>
#include <utility>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace thermaco::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Mode { kTrain, kInfer };

/// Named parameter array. shape[0] is the "filter" axis: output channels for
/// convolutions, output units for affine layers.
template <typename T>
struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, std::vector<int> s, bool is_trainable = true);

  std::size_t size() const { return value.size(); }
  int filters() const { return shape.empty() ? 1 : shape[0]; }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <typename T>
using ParamRefs = std::vector<Parameter<T>*>;

template <typename T>
struct FeatureMap {
  int channels = 0;
  int batch = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;  // CNHW

  FeatureMap() = default;
  FeatureMap(int c, int n, int h, int w) : channels(c), batch(n), height(h), width(w), data(std::size_t(c) * n * h * w) {}
  std::size_t plane() const { return std::size_t(batch) * height * width; }
  T* channel(int c) { return data.data() + c * plane(); }
  const T* channel(int c) const { return data.data() + c * plane(); }
};

/// y = x W^T + b.
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out, std::mt19937_64& rng);

  Mat<T> forward(const Mat<T>& x) const;
  /// Accumulates parameter gradients; returns dL/dx.
  Mat<T> backward(const Mat<T>& x, const Mat<T>& dy);
  void collect(ParamRefs<T>& out);

  int in_features() const { return in_; }
  int out_features() const { return out_; }

  Parameter<T> weight;
  Parameter<T> bias;

 private:
  int in_ = 0;
  int out_ = 0;
};

template <typename T>
class Conv2d {
 public:
  struct Cache {
    Mat<T> cols;
    int in_height = 0;
    int in_width = 0;
    int batch = 0;
  };

  Conv2d() = default;
  Conv2d(const std::string& name, int in, int out, int kernel, int stride, int padding, std::mt19937_64& rng);

  /// Keeps the im2col buffer in `cache` when non-null.
  FeatureMap<T> forward(const FeatureMap<T>& x, Cache* cache) const;
  FeatureMap<T> backward(const Cache& cache, const FeatureMap<T>& dy);
  void collect(ParamRefs<T>& out);

  int out_size(int in) const { return (in + 2 * padding_ - kernel_) / stride_ + 1; }
  /// Output columns [first, last) whose tap kx lands inside a row of `in` pixels.
  std::pair<int, int> valid_range(int kx, int in, int out) const {
    const int lo_num = padding_ - kx;
    const int first = lo_num <= 0 ? 0 : (lo_num + stride_ - 1) / stride_;
    const int hi_num = in - 1 + padding_ - kx;
    const int last = hi_num < 0 ? 0 : std::min(out, hi_num / stride_ + 1);
    return {std::min(first, last), last};
  }
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

  Parameter<T> weight;  // out x (in * k * k)

 private:
  int in_ = 0;
  int out_ = 0;
  int kernel_ = 1;
  int stride_ = 1;
  int padding_ = 0;
};

/// Per-channel batch normalization. Training mode normalizes with batch
/// statistics and updates the running estimates (momentum 0.1, unbiased
/// variance); inference mode uses the running estimates.
template <typename T>
class BatchNorm2d {
 public:
  struct Cache {
    std::vector<T> xhat;
    std::vector<T> inv_std;
  };

  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels, double momentum = 0.1, double eps = 1e-5);

  FeatureMap<T> forward_train(const FeatureMap<T>& x, Cache* cache);
  FeatureMap<T> forward_infer(const FeatureMap<T>& x) const;
  FeatureMap<T> backward(const Cache& cache, const FeatureMap<T>& dy);
  void collect(ParamRefs<T>& out);

  Parameter<T> gamma;
  Parameter<T> beta;
  Parameter<T> running_mean;
  Parameter<T> running_var;

 private:
  double momentum_ = 0.1;
  double eps_ = 1e-5;
};

/// Row-wise layer normalization with affine parameters.
template <typename T>
class LayerNorm {
 public:
  struct Cache {
    Mat<T> xhat;
    std::vector<T> inv_std;
  };

  LayerNorm() = default;
  LayerNorm(const std::string& name, int features, double eps = 1e-5);

  Mat<T> forward(const Mat<T>& x, Cache* cache) const;
  Mat<T> backward(const Cache& cache, const Mat<T>& dy);
  void collect(ParamRefs<T>& out);

  Parameter<T> gamma;
  Parameter<T> beta;

 private:
  double eps_ = 1e-5;
};

// Elementwise helpers.
template <typename T>
void relu_inplace(std::vector<T>& v);
template <typename T>
void relu_inplace(Mat<T>& m);
/// dy *= (y > 0), with y the ReLU output.
template <typename T>
void relu_backward_inplace(const std::vector<T>& y, std::vector<T>& dy);
template <typename T>
void relu_backward_inplace(const Mat<T>& y, Mat<T>& dy);

/// Inverted dropout. In inference mode (or p == 0) returns an empty mask and
/// leaves x untouched.
template <typename T>
Mat<T> dropout_inplace(Mat<T>& x, double p, Mode mode, std::mt19937_64* rng);
template <typename T>
void dropout_backward_inplace(const Mat<T>& mask, Mat<T>& dy);

/// Adaptive average pooling with PyTorch bin edges.
template <typename T>
FeatureMap<T> adaptive_avg_pool(const FeatureMap<T>& x, int out_h, int out_w);
template <typename T>
FeatureMap<T> adaptive_avg_pool_backward(const FeatureMap<T>& dy, int in_h, int in_w);

/// (C, N, h, w) -> N x (C*h*w), columns ordered channel-major like a flatten.
template <typename T>
Mat<T> flatten_per_sample(const FeatureMap<T>& x);
template <typename T>
FeatureMap<T> unflatten_per_sample(const Mat<T>& m, int channels, int height, int width);

/// Row-wise softmax.
template <typename T>
Mat<T> softmax_rows(const Mat<T>& logits);
/// Vector-Jacobian product of softmax: dlogits from dprobs.
template <typename T>
Mat<T> softmax_backward(const Mat<T>& probs, const Mat<T>& dprobs);

/// Adam with bias correction.
template <typename T>
class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// Applies one update to every trainable parameter in `params` (the list
  /// must have the same layout on every call).
  void step(ParamRefs<T>& params);
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  long step_count_ = 0;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
};

}  // namespace thermaco::nn
