#include "thermaco/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace thermaco::nn {

namespace {

template <typename T>
void uniform_init(std::vector<T>& v, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& x : v) x = static_cast<T>(dist(rng));
}

}  // namespace

template <typename T>
Parameter<T>::Parameter(std::string n, std::vector<int> s, bool is_trainable)
    : name(std::move(n)), shape(std::move(s)), trainable(is_trainable) {
  std::size_t count = 1;
  for (int d : shape) count *= static_cast<std::size_t>(d);
  value.assign(count, T(0));
  grad.assign(count, T(0));
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(const std::string& name, int in, int out, std::mt19937_64& rng)
    : weight(name + ".weight", {out, in}), bias(name + ".bias", {out}), in_(in), out_(out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  uniform_init(weight.value, bound, rng);
  uniform_init(bias.value, bound, rng);
}

template <typename T>
Mat<T> Linear<T>::forward(const Mat<T>& x) const {
  if (x.cols() != in_) throw std::invalid_argument("Linear: input width mismatch");
  Eigen::Map<const Mat<T>> w(weight.value.data(), out_, in_);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.value.data(), out_);
  Mat<T> y(x.rows(), out_);
  y.noalias() = x * w.transpose();
  y.rowwise() += b;
  return y;
}

template <typename T>
Mat<T> Linear<T>::backward(const Mat<T>& x, const Mat<T>& dy) {
  Eigen::Map<const Mat<T>> w(weight.value.data(), out_, in_);
  Eigen::Map<Mat<T>> dw(weight.grad.data(), out_, in_);
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(bias.grad.data(), out_);
  dw.noalias() += dy.transpose() * x;
  // Fixed summation order: Eigen's vectorized reductions depend on the
  // alignment of the grad buffer, which would break run-to-run determinism.
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    for (Eigen::Index c = 0; c < out_; ++c) db(c) += dy(r, c);
  }
  Mat<T> dx(dy.rows(), in_);
  dx.noalias() = dy * w;
  return dx;
}

template <typename T>
void Linear<T>::collect(ParamRefs<T>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(const std::string& name, int in, int out, int kernel, int stride, int padding,
                  std::mt19937_64& rng)
    : weight(name + ".weight", {out, in * kernel * kernel}),
      in_(in),
      out_(out),
      kernel_(kernel),
      stride_(stride),
      padding_(padding) {
  uniform_init(weight.value, 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel)), rng);
}

template <typename T>
FeatureMap<T> Conv2d<T>::forward(const FeatureMap<T>& x, Cache* cache) const {
  if (x.channels != in_) throw std::invalid_argument("Conv2d: channel mismatch");
  const int oh = out_size(x.height);
  const int ow = out_size(x.width);
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("Conv2d: input smaller than kernel");
  const int rows = in_ * kernel_ * kernel_;
  const std::size_t ncols = std::size_t(x.batch) * oh * ow;
  // Padding taps stay zero; one bulk clear is cheaper than per-row fills.
  Mat<T> cols = Mat<T>::Zero(rows, static_cast<Eigen::Index>(ncols));
  for (int ci = 0; ci < in_; ++ci) {
    const T* src_c = x.channel(ci);
    for (int ky = 0; ky < kernel_; ++ky) {
      for (int kx = 0; kx < kernel_; ++kx) {
        T* dst = cols.row((ci * kernel_ + ky) * kernel_ + kx).data();
        const auto [lo, hi] = valid_range(kx, x.width, ow);
        const int x0 = lo * stride_ - padding_ + kx;
        for (int n = 0; n < x.batch; ++n) {
          const T* src = src_c + std::size_t(n) * x.height * x.width;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride_ - padding_ + ky;
            if (iy < 0 || iy >= x.height) continue;  // stays zero
            T* d = dst + (std::size_t(n) * oh + oy) * ow;
            const T* srow = src + std::size_t(iy) * x.width + x0;
            for (int ox = lo, j = 0; ox < hi; ++ox, j += stride_) d[ox] = srow[j];
          }
        }
      }
    }
  }
  FeatureMap<T> y(out_, x.batch, oh, ow);
  Eigen::Map<const Mat<T>> w(weight.value.data(), out_, rows);
  Eigen::Map<Mat<T>> ym(y.data.data(), out_, static_cast<Eigen::Index>(ncols));
  ym.noalias() = w * cols;
  if (cache) {
    cache->cols = std::move(cols);
    cache->in_height = x.height;
    cache->in_width = x.width;
    cache->batch = x.batch;
  }
  return y;
}

template <typename T>
FeatureMap<T> Conv2d<T>::backward(const Cache& cache, const FeatureMap<T>& dy) {
  const int rows = in_ * kernel_ * kernel_;
  const auto ncols = static_cast<Eigen::Index>(dy.plane());
  Eigen::Map<const Mat<T>> dym(dy.data.data(), out_, ncols);
  Eigen::Map<const Mat<T>> w(weight.value.data(), out_, rows);
  Eigen::Map<Mat<T>> dw(weight.grad.data(), out_, rows);
  dw.noalias() += dym * cache.cols.transpose();
  Mat<T> dcols(rows, ncols);
  dcols.noalias() = w.transpose() * dym;

  FeatureMap<T> dx(in_, cache.batch, cache.in_height, cache.in_width);
  const int oh = dy.height;
  const int ow = dy.width;
  for (int ci = 0; ci < in_; ++ci) {
    T* dst_c = dx.channel(ci);
    for (int ky = 0; ky < kernel_; ++ky) {
      for (int kx = 0; kx < kernel_; ++kx) {
        const T* src = dcols.row((ci * kernel_ + ky) * kernel_ + kx).data();
        const auto [lo, hi] = valid_range(kx, cache.in_width, ow);
        const int x0 = lo * stride_ - padding_ + kx;
        for (int n = 0; n < cache.batch; ++n) {
          T* dst = dst_c + std::size_t(n) * cache.in_height * cache.in_width;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride_ - padding_ + ky;
            if (iy < 0 || iy >= cache.in_height) continue;
            const T* s = src + (std::size_t(n) * oh + oy) * ow;
            T* drow = dst + std::size_t(iy) * cache.in_width + x0;
            for (int ox = lo, j = 0; ox < hi; ++ox, j += stride_) drow[j] += s[ox];
          }
        }
      }
    }
  }
  return dx;
}

template <typename T>
void Conv2d<T>::collect(ParamRefs<T>& out) {
  out.push_back(&weight);
}

// ---------------------------------------------------------------- BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(const std::string& name, int channels, double momentum, double eps)
    : gamma(name + ".gamma", {channels}),
      beta(name + ".beta", {channels}),
      running_mean(name + ".running_mean", {channels}, false),
      running_var(name + ".running_var", {channels}, false),
      momentum_(momentum),
      eps_(eps) {
  std::fill(gamma.value.begin(), gamma.value.end(), T(1));
  std::fill(running_var.value.begin(), running_var.value.end(), T(1));
}

template <typename T>
FeatureMap<T> BatchNorm2d<T>::forward_train(const FeatureMap<T>& x, Cache* cache) {
  FeatureMap<T> y(x.channels, x.batch, x.height, x.width);
  const std::size_t m = x.plane();
  if (cache) {
    cache->xhat.resize(x.data.size());
    cache->inv_std.resize(x.channels);
  }
  for (int c = 0; c < x.channels; ++c) {
    const T* src = x.channel(c);
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) sum += src[i];
    const double mean = sum / static_cast<double>(m);
    double ss = 0.0;
    for (std::size_t i = 0; i < m; ++i) ss += (src[i] - mean) * (src[i] - mean);
    const double var = ss / static_cast<double>(m);
    const double inv_std = 1.0 / std::sqrt(var + eps_);
    const T g = gamma.value[c];
    const T b = beta.value[c];
    T* dst = y.channel(c);
    T* xh = cache ? cache->xhat.data() + c * m : nullptr;
    for (std::size_t i = 0; i < m; ++i) {
      const T v = static_cast<T>((src[i] - mean) * inv_std);
      if (xh) xh[i] = v;
      dst[i] = g * v + b;
    }
    if (cache) cache->inv_std[c] = static_cast<T>(inv_std);
    const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
    running_mean.value[c] = static_cast<T>((1.0 - momentum_) * running_mean.value[c] + momentum_ * mean);
    running_var.value[c] = static_cast<T>((1.0 - momentum_) * running_var.value[c] + momentum_ * unbiased);
  }
  return y;
}

template <typename T>
FeatureMap<T> BatchNorm2d<T>::forward_infer(const FeatureMap<T>& x) const {
  FeatureMap<T> y(x.channels, x.batch, x.height, x.width);
  const std::size_t m = x.plane();
  for (int c = 0; c < x.channels; ++c) {
    const T scale = static_cast<T>(gamma.value[c] / std::sqrt(static_cast<double>(running_var.value[c]) + eps_));
    const T shift = beta.value[c] - scale * running_mean.value[c];
    const T* src = x.channel(c);
    T* dst = y.channel(c);
    for (std::size_t i = 0; i < m; ++i) dst[i] = scale * src[i] + shift;
  }
  return y;
}

template <typename T>
FeatureMap<T> BatchNorm2d<T>::backward(const Cache& cache, const FeatureMap<T>& dy) {
  FeatureMap<T> dx(dy.channels, dy.batch, dy.height, dy.width);
  const std::size_t m = dy.plane();
  for (int c = 0; c < dy.channels; ++c) {
    const T* g = dy.channel(c);
    const T* xh = cache.xhat.data() + c * m;
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      sum_g += g[i];
      sum_gx += static_cast<double>(g[i]) * xh[i];
    }
    gamma.grad[c] += static_cast<T>(sum_gx);
    beta.grad[c] += static_cast<T>(sum_g);
    const double k = static_cast<double>(gamma.value[c]) * cache.inv_std[c] / static_cast<double>(m);
    const double md = static_cast<double>(m);
    T* d = dx.channel(c);
    for (std::size_t i = 0; i < m; ++i) d[i] = static_cast<T>(k * (md * g[i] - sum_g - xh[i] * sum_gx));
  }
  return dx;
}

template <typename T>
void BatchNorm2d<T>::collect(ParamRefs<T>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
  out.push_back(&running_mean);
  out.push_back(&running_var);
}

// ---------------------------------------------------------------- LayerNorm

template <typename T>
LayerNorm<T>::LayerNorm(const std::string& name, int features, double eps)
    : gamma(name + ".gamma", {features}), beta(name + ".beta", {features}), eps_(eps) {
  std::fill(gamma.value.begin(), gamma.value.end(), T(1));
}

template <typename T>
Mat<T> LayerNorm<T>::forward(const Mat<T>& x, Cache* cache) const {
  const auto rows = x.rows();
  const auto d = x.cols();
  Mat<T> y(rows, d);
  if (cache) {
    cache->xhat.resize(rows, d);
    cache->inv_std.resize(rows);
  }
  for (Eigen::Index r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) sum += x(r, j);
    const double mean = sum / static_cast<double>(d);
    double ss = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) ss += (x(r, j) - mean) * (x(r, j) - mean);
    const double inv_std = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps_);
    for (Eigen::Index j = 0; j < d; ++j) {
      const T v = static_cast<T>((x(r, j) - mean) * inv_std);
      if (cache) cache->xhat(r, j) = v;
      y(r, j) = gamma.value[j] * v + beta.value[j];
    }
    if (cache) cache->inv_std[r] = static_cast<T>(inv_std);
  }
  return y;
}

template <typename T>
Mat<T> LayerNorm<T>::backward(const Cache& cache, const Mat<T>& dy) {
  const auto rows = dy.rows();
  const auto d = dy.cols();
  Mat<T> dx(rows, d);
  const double dd = static_cast<double>(d);
  for (Eigen::Index r = 0; r < rows; ++r) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double g = static_cast<double>(dy(r, j)) * gamma.value[j];
      sum_g += g;
      sum_gx += g * cache.xhat(r, j);
      gamma.grad[j] += dy(r, j) * cache.xhat(r, j);
      beta.grad[j] += dy(r, j);
    }
    const double k = cache.inv_std[r] / dd;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double g = static_cast<double>(dy(r, j)) * gamma.value[j];
      dx(r, j) = static_cast<T>(k * (dd * g - sum_g - cache.xhat(r, j) * sum_gx));
    }
  }
  return dx;
}

template <typename T>
void LayerNorm<T>::collect(ParamRefs<T>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

// ---------------------------------------------------------------- elementwise

template <typename T>
void relu_inplace(std::vector<T>& v) {
  // NaN passes through so divergence stays detectable.
  for (auto& x : v) x = x < T(0) ? T(0) : x;
}

template <typename T>
void relu_inplace(Mat<T>& m) {
  m = m.unaryExpr([](T x) { return x < T(0) ? T(0) : x; });
}

template <typename T>
void relu_backward_inplace(const std::vector<T>& y, std::vector<T>& dy) {
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(y[i] > T(0))) dy[i] = T(0);
  }
}

template <typename T>
void relu_backward_inplace(const Mat<T>& y, Mat<T>& dy) {
  dy = (y.array() > T(0)).select(dy, T(0));
}

template <typename T>
Mat<T> dropout_inplace(Mat<T>& x, double p, Mode mode, std::mt19937_64* rng) {
  if (mode == Mode::kInfer || p <= 0.0) return {};
  if (!rng) throw std::invalid_argument("dropout: training mode needs a random stream");
  Mat<T> mask(x.rows(), x.cols());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = u(*rng) < p ? T(0) : keep_scale;
  x.array() *= mask.array();
  return mask;
}

template <typename T>
void dropout_backward_inplace(const Mat<T>& mask, Mat<T>& dy) {
  if (mask.size() == 0) return;
  dy.array() *= mask.array();
}

namespace {
inline int bin_start(int i, int in, int out) { return (i * in) / out; }
inline int bin_end(int i, int in, int out) { return ((i + 1) * in + out - 1) / out; }
}  // namespace

template <typename T>
FeatureMap<T> adaptive_avg_pool(const FeatureMap<T>& x, int out_h, int out_w) {
  FeatureMap<T> y(x.channels, x.batch, out_h, out_w);
  for (int c = 0; c < x.channels; ++c) {
    for (int n = 0; n < x.batch; ++n) {
      const T* src = x.channel(c) + std::size_t(n) * x.height * x.width;
      T* dst = y.channel(c) + std::size_t(n) * out_h * out_w;
      for (int py = 0; py < out_h; ++py) {
        const int y0 = bin_start(py, x.height, out_h), y1 = bin_end(py, x.height, out_h);
        for (int px = 0; px < out_w; ++px) {
          const int x0 = bin_start(px, x.width, out_w), x1 = bin_end(px, x.width, out_w);
          double s = 0.0;
          for (int yy = y0; yy < y1; ++yy)
            for (int xx = x0; xx < x1; ++xx) s += src[yy * x.width + xx];
          dst[py * out_w + px] = static_cast<T>(s / ((y1 - y0) * (x1 - x0)));
        }
      }
    }
  }
  return y;
}

template <typename T>
FeatureMap<T> adaptive_avg_pool_backward(const FeatureMap<T>& dy, int in_h, int in_w) {
  FeatureMap<T> dx(dy.channels, dy.batch, in_h, in_w);
  for (int c = 0; c < dy.channels; ++c) {
    for (int n = 0; n < dy.batch; ++n) {
      const T* src = dy.channel(c) + std::size_t(n) * dy.height * dy.width;
      T* dst = dx.channel(c) + std::size_t(n) * in_h * in_w;
      for (int py = 0; py < dy.height; ++py) {
        const int y0 = bin_start(py, in_h, dy.height), y1 = bin_end(py, in_h, dy.height);
        for (int px = 0; px < dy.width; ++px) {
          const int x0 = bin_start(px, in_w, dy.width), x1 = bin_end(px, in_w, dy.width);
          const T g = src[py * dy.width + px] / static_cast<T>((y1 - y0) * (x1 - x0));
          for (int yy = y0; yy < y1; ++yy)
            for (int xx = x0; xx < x1; ++xx) dst[yy * in_w + xx] += g;
        }
      }
    }
  }
  return dx;
}

template <typename T>
Mat<T> flatten_per_sample(const FeatureMap<T>& x) {
  const int hw = x.height * x.width;
  Mat<T> m(x.batch, x.channels * hw);
  for (int c = 0; c < x.channels; ++c) {
    for (int n = 0; n < x.batch; ++n) {
      const T* src = x.channel(c) + std::size_t(n) * hw;
      for (int i = 0; i < hw; ++i) m(n, c * hw + i) = src[i];
    }
  }
  return m;
}

template <typename T>
FeatureMap<T> unflatten_per_sample(const Mat<T>& m, int channels, int height, int width) {
  const int hw = height * width;
  FeatureMap<T> x(channels, static_cast<int>(m.rows()), height, width);
  for (int c = 0; c < channels; ++c) {
    for (int n = 0; n < x.batch; ++n) {
      T* dst = x.channel(c) + std::size_t(n) * hw;
      for (int i = 0; i < hw; ++i) dst[i] = m(n, c * hw + i);
    }
  }
  return x;
}

template <typename T>
Mat<T> softmax_rows(const Mat<T>& logits) {
  Mat<T> p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const T mx = logits.row(r).maxCoeff();
    double s = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) s += std::exp(static_cast<double>(logits(r, j) - mx));
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      p(r, j) = static_cast<T>(std::exp(static_cast<double>(logits(r, j) - mx)) / s);
    }
  }
  return p;
}

template <typename T>
Mat<T> softmax_backward(const Mat<T>& probs, const Mat<T>& dprobs) {
  Mat<T> d(probs.rows(), probs.cols());
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const T dot = probs.row(r).dot(dprobs.row(r));
    for (Eigen::Index j = 0; j < probs.cols(); ++j) d(r, j) = probs(r, j) * (dprobs(r, j) - dot);
  }
  return d;
}

// ---------------------------------------------------------------- Adam

template <typename T>
void Adam<T>::step(ParamRefs<T>& params) {
  if (m_.empty()) {
    for (auto* p : params) {
      m_.emplace_back(p->size(), T(0));
      v_.emplace_back(p->size(), T(0));
    }
  }
  if (m_.size() != params.size()) throw std::logic_error("Adam: parameter layout changed between steps");
  ++step_count_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
  const T step_size = static_cast<T>(lr_ / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(eps_);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto* p = params[k];
    if (!p->trainable) continue;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p->size(); ++i) {
      const T g = p->grad[i];
      m[i] = b1 * m[i] + (T(1) - b1) * g;
      v[i] = b2 * v[i] + (T(1) - b2) * g * g;
      p->value[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
    }
  }
}

#define THERMACO_INSTANTIATE(T)                                                                   \
  template struct Parameter<T>;                                                                   \
  template class Linear<T>;                                                                       \
  template class Conv2d<T>;                                                                       \
  template class BatchNorm2d<T>;                                                                  \
  template class LayerNorm<T>;                                                                    \
  template class Adam<T>;                                                                         \
  template void relu_inplace<T>(std::vector<T>&);                                                 \
  template void relu_inplace<T>(Mat<T>&);                                                         \
  template void relu_backward_inplace<T>(const std::vector<T>&, std::vector<T>&);                 \
  template void relu_backward_inplace<T>(const Mat<T>&, Mat<T>&);                                 \
  template Mat<T> dropout_inplace<T>(Mat<T>&, double, Mode, std::mt19937_64*);                    \
  template void dropout_backward_inplace<T>(const Mat<T>&, Mat<T>&);                              \
  template FeatureMap<T> adaptive_avg_pool<T>(const FeatureMap<T>&, int, int);                    \
  template FeatureMap<T> adaptive_avg_pool_backward<T>(const FeatureMap<T>&, int, int);           \
  template Mat<T> flatten_per_sample<T>(const FeatureMap<T>&);                                    \
  template FeatureMap<T> unflatten_per_sample<T>(const Mat<T>&, int, int, int);                   \
  template Mat<T> softmax_rows<T>(const Mat<T>&);                                                 \
  template Mat<T> softmax_backward<T>(const Mat<T>&, const Mat<T>&);

THERMACO_INSTANTIATE(float)
THERMACO_INSTANTIATE(double)
#undef THERMACO_INSTANTIATE

}  // namespace thermaco::nn
