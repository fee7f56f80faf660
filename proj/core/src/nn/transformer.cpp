#include "thermaco/nn/transformer.hpp"

#include <cmath>
#include <stdexcept>

namespace thermaco::nn {

template <typename T>
Mat<T> sinusoidal_encoding(int steps, int dim) {
  Mat<T> pe(steps, dim);
  for (int t = 0; t < steps; ++t) {
    for (int i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / dim);
      const double a = t * freq;
      pe(t, i) = static_cast<T>(i % 2 == 0 ? std::sin(a) : std::cos(a));
    }
  }
  return pe;
}

template <typename T>
EncoderLayer<T>::EncoderLayer(const std::string& name, int dim, int heads, int ff_dim, double dropout,
                              std::mt19937_64& rng)
    : dim_(dim),
      heads_(heads),
      dropout_(dropout),
      wq_(name + ".attn.q", dim, dim, rng),
      wk_(name + ".attn.k", dim, dim, rng),
      wv_(name + ".attn.v", dim, dim, rng),
      wo_(name + ".attn.out", dim, dim, rng),
      ln1_(name + ".ln1", dim),
      ff1_(name + ".ff1", dim, ff_dim, rng),
      ff2_(name + ".ff2", ff_dim, dim, rng),
      ln2_(name + ".ln2", dim) {
  if (heads <= 0 || dim % heads != 0) throw std::invalid_argument("EncoderLayer: dim must be divisible by heads");
}

template <typename T>
Mat<T> EncoderLayer<T>::forward(const Mat<T>& x, int batch, int steps, Mode mode, std::mt19937_64* rng,
                                Cache* cache) const {
  const int dh = dim_ / heads_;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  Mat<T> q = wq_.forward(x);
  Mat<T> k = wk_.forward(x);
  Mat<T> v = wv_.forward(x);
  Mat<T> context(x.rows(), dim_);
  std::vector<Mat<T>> attn;
  if (cache) attn.reserve(std::size_t(batch) * heads_);
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads_; ++h) {
      const auto qb = q.block(b * steps, h * dh, steps, dh);
      const auto kb = k.block(b * steps, h * dh, steps, dh);
      const auto vb = v.block(b * steps, h * dh, steps, dh);
      Mat<T> scores = (qb * kb.transpose()) * scale;
      Mat<T> p = softmax_rows(scores);
      context.block(b * steps, h * dh, steps, dh).noalias() = p * vb;
      if (cache) attn.push_back(std::move(p));
    }
  }
  Mat<T> a = wo_.forward(context);
  Mat<T> drop1 = dropout_inplace(a, dropout_, mode, rng);
  Mat<T> r1 = x + a;
  typename LayerNorm<T>::Cache ln1c;
  Mat<T> x1 = ln1_.forward(r1, cache ? &ln1c : nullptr);

  Mat<T> hidden = ff1_.forward(x1);
  relu_inplace(hidden);
  Mat<T> hidden_d = hidden;
  Mat<T> drop_hidden = dropout_inplace(hidden_d, dropout_, mode, rng);
  Mat<T> f = ff2_.forward(hidden_d);
  Mat<T> drop2 = dropout_inplace(f, dropout_, mode, rng);
  Mat<T> r2 = x1 + f;
  typename LayerNorm<T>::Cache ln2c;
  Mat<T> y = ln2_.forward(r2, cache ? &ln2c : nullptr);

  if (cache) {
    cache->x = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->attn = std::move(attn);
    cache->context = std::move(context);
    cache->drop1 = std::move(drop1);
    cache->ln1 = std::move(ln1c);
    cache->x1 = std::move(x1);
    cache->hidden = std::move(hidden);
    cache->drop_hidden = std::move(drop_hidden);
    cache->drop2 = std::move(drop2);
    cache->ln2 = std::move(ln2c);
  }
  return y;
}

template <typename T>
Mat<T> EncoderLayer<T>::backward(const Cache& c, const Mat<T>& dy, int batch, int steps) {
  const int dh = dim_ / heads_;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  Mat<T> dr2 = ln2_.backward(c.ln2, dy);
  // r2 = x1 + f
  Mat<T> df = dr2;
  dropout_backward_inplace(c.drop2, df);
  Mat<T> hidden_d = c.hidden;
  if (c.drop_hidden.size() != 0) hidden_d.array() *= c.drop_hidden.array();
  Mat<T> dhidden = ff2_.backward(hidden_d, df);
  dropout_backward_inplace(c.drop_hidden, dhidden);
  relu_backward_inplace(c.hidden, dhidden);
  Mat<T> dx1 = dr2 + ff1_.backward(c.x1, dhidden);

  Mat<T> dr1 = ln1_.backward(c.ln1, dx1);
  Mat<T> da = dr1;
  dropout_backward_inplace(c.drop1, da);
  Mat<T> dcontext = wo_.backward(c.context, da);

  Mat<T> dq(c.q.rows(), dim_), dk(c.k.rows(), dim_), dv(c.v.rows(), dim_);
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads_; ++h) {
      const Mat<T>& p = c.attn[std::size_t(b) * heads_ + h];
      const auto qb = c.q.block(b * steps, h * dh, steps, dh);
      const auto kb = c.k.block(b * steps, h * dh, steps, dh);
      const auto vb = c.v.block(b * steps, h * dh, steps, dh);
      const auto dctx = dcontext.block(b * steps, h * dh, steps, dh);
      Mat<T> dp = dctx * vb.transpose();
      dv.block(b * steps, h * dh, steps, dh).noalias() = p.transpose() * dctx;
      Mat<T> ds = softmax_backward(p, dp) * scale;
      dq.block(b * steps, h * dh, steps, dh).noalias() = ds * kb;
      dk.block(b * steps, h * dh, steps, dh).noalias() = ds.transpose() * qb;
    }
  }
  Mat<T> dx = dr1;
  dx += wq_.backward(c.x, dq);
  dx += wk_.backward(c.x, dk);
  dx += wv_.backward(c.x, dv);
  return dx;
}

template <typename T>
void EncoderLayer<T>::collect(ParamRefs<T>& out) {
  wq_.collect(out);
  wk_.collect(out);
  wv_.collect(out);
  wo_.collect(out);
  ln1_.collect(out);
  ff1_.collect(out);
  ff2_.collect(out);
  ln2_.collect(out);
}

template <typename T>
TemporalEncoder<T>::TemporalEncoder(const std::string& name, int dim, int layers, int heads, int ff_dim,
                                    double dropout, bool positional, std::mt19937_64& rng)
    : dim_(dim), positional_(positional) {
  for (int l = 0; l < layers; ++l) {
    layers_.emplace_back(name + ".layer" + std::to_string(l), dim, heads, ff_dim, dropout, rng);
  }
}

template <typename T>
Mat<T> TemporalEncoder<T>::forward(const Mat<T>& tokens, int batch, int steps, Mode mode, std::mt19937_64* rng,
                                   Cache* cache) const {
  if (tokens.rows() != Eigen::Index(batch) * steps || tokens.cols() != dim_) {
    throw std::invalid_argument("TemporalEncoder: token matrix shape mismatch");
  }
  Mat<T> x = tokens;
  if (positional_) {
    const Mat<T> pe = sinusoidal_encoding<T>(steps, dim_);
    for (int b = 0; b < batch; ++b) x.block(b * steps, 0, steps, dim_) += pe;
  }
  if (cache) cache->layers.resize(layers_.size());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    x = layers_[l].forward(x, batch, steps, mode, rng, cache ? &cache->layers[l] : nullptr);
  }
  Mat<T> pooled(batch, dim_);
  for (int b = 0; b < batch; ++b) {
    pooled.row(b) = x.block(b * steps, 0, steps, dim_).colwise().sum() / static_cast<T>(steps);
  }
  return pooled;
}

template <typename T>
Mat<T> TemporalEncoder<T>::backward(const Cache& cache, const Mat<T>& dpooled, int batch, int steps) {
  Mat<T> dx(Eigen::Index(batch) * steps, dim_);
  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t < steps; ++t) dx.row(b * steps + t) = dpooled.row(b) / static_cast<T>(steps);
  }
  for (std::size_t l = layers_.size(); l-- > 0;) dx = layers_[l].backward(cache.layers[l], dx, batch, steps);
  return dx;  // positional encoding is additive and constant
}

template <typename T>
void TemporalEncoder<T>::collect(ParamRefs<T>& out) {
  for (auto& layer : layers_) layer.collect(out);
}

template Mat<float> sinusoidal_encoding<float>(int, int);
template Mat<double> sinusoidal_encoding<double>(int, int);
template class EncoderLayer<float>;
template class EncoderLayer<double>;
template class TemporalEncoder<float>;
template class TemporalEncoder<double>;

}  // namespace thermaco::nn
