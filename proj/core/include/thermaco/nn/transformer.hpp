#pragma once

// Post-norm transformer encoder over per-frame tokens, with sinusoidal
// positional encoding and mean pooling over time. Token matrices hold one row
// per (sample, time step), sample-major: row = b * steps + t.

#include <random>
#include <string>
#include <vector>

#include "thermaco/nn/layers.hpp"

namespace thermaco::nn {

/// Standard sin/cos table, steps x dim.
template <typename T>
Mat<T> sinusoidal_encoding(int steps, int dim);

template <typename T>
class EncoderLayer {
 public:
  struct Cache {
    Mat<T> x;
    Mat<T> q, k, v;
    std::vector<Mat<T>> attn;  // one steps x steps matrix per (sample, head)
    Mat<T> context;            // concatenated head outputs
    Mat<T> drop1;
    typename LayerNorm<T>::Cache ln1;
    Mat<T> x1;
    Mat<T> hidden;  // post-ReLU FFN activations
    Mat<T> drop_hidden;
    Mat<T> drop2;
    typename LayerNorm<T>::Cache ln2;
  };

  EncoderLayer() = default;
  EncoderLayer(const std::string& name, int dim, int heads, int ff_dim, double dropout, std::mt19937_64& rng);

  Mat<T> forward(const Mat<T>& x, int batch, int steps, Mode mode, std::mt19937_64* rng, Cache* cache) const;
  Mat<T> backward(const Cache& cache, const Mat<T>& dy, int batch, int steps);
  void collect(ParamRefs<T>& out);

 private:
  int dim_ = 0;
  int heads_ = 1;
  double dropout_ = 0.0;
  Linear<T> wq_, wk_, wv_, wo_;
  LayerNorm<T> ln1_;
  Linear<T> ff1_, ff2_;
  LayerNorm<T> ln2_;
};

template <typename T>
class TemporalEncoder {
 public:
  struct Cache {
    std::vector<typename EncoderLayer<T>::Cache> layers;
  };

  TemporalEncoder() = default;
  TemporalEncoder(const std::string& name, int dim, int layers, int heads, int ff_dim, double dropout,
                  bool positional, std::mt19937_64& rng);

  /// tokens: (batch * steps) x dim. Returns batch x dim (mean over time).
  Mat<T> forward(const Mat<T>& tokens, int batch, int steps, Mode mode, std::mt19937_64* rng, Cache* cache) const;
  /// Returns dL/dtokens.
  Mat<T> backward(const Cache& cache, const Mat<T>& dpooled, int batch, int steps);
  void collect(ParamRefs<T>& out);

 private:
  int dim_ = 0;
  bool positional_ = true;
  std::vector<EncoderLayer<T>> layers_;
};

}  // namespace thermaco::nn
