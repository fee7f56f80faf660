#include "thermaco/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace thermaco::loss {

namespace {

void check_distribution(std::span<const double> p, const char* what) {
  if (p.empty()) throw ValidationError(std::string(what) + ": empty distribution");
  double s = 0.0;
  for (double v : p) {
    if (!std::isfinite(v) || v < 0.0) throw ValidationError(std::string(what) + ": probabilities must be finite and >= 0");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-6) throw ValidationError(std::string(what) + ": probabilities must sum to 1");
}

inline double floored_log(double p) { return std::log(std::max(p, kProbFloor)); }

}  // namespace

void LossWeights::validate() const {
  if (!std::isfinite(alpha) || alpha < 0.0) throw ValidationError("loss weights: alpha must be finite and >= 0");
  if (!std::isfinite(beta) || beta < 0.0) throw ValidationError("loss weights: beta must be finite and >= 0");
}

double task_loss(std::span<const double> y_pred, int y) {
  check_distribution(y_pred, "task_loss");
  if (y < 0 || static_cast<std::size_t>(y) >= y_pred.size()) throw ValidationError("task_loss: label out of range");
  return -floored_log(y_pred[y]);
}

double similarity_loss(std::span<const double> z_t, std::span<const double> z_e) {
  if (z_t.size() != z_e.size()) throw ValidationError("similarity_loss: embedding dimensions differ");
  if (z_t.empty()) throw ValidationError("similarity_loss: empty embeddings");
  double s = 0.0;
  for (std::size_t i = 0; i < z_t.size(); ++i) s += (z_t[i] - z_e[i]) * (z_t[i] - z_e[i]);
  return s / static_cast<double>(z_t.size());
}

double consistency_loss(std::span<const double> y_t, std::span<const double> y_e) {
  check_distribution(y_t, "consistency_loss");
  check_distribution(y_e, "consistency_loss");
  if (y_t.size() != y_e.size()) throw ValidationError("consistency_loss: distribution sizes differ");
  double s = 0.0;
  for (std::size_t c = 0; c < y_t.size(); ++c) {
    if (y_t[c] > 0.0) s += y_t[c] * (floored_log(y_t[c]) - floored_log(y_e[c]));
  }
  return std::max(s, 0.0);
}

double total_loss(double l_t, double l_e, double l_s, double l_c, const LossWeights& weights) {
  return l_t + l_e + weights.alpha * l_s + weights.beta * l_c;
}

double cmd_loss(const nn::Mat<double>& x, const nn::Mat<double>& y, int k) {
  const double lo = std::min(x.minCoeff(), y.minCoeff());
  const double hi = std::max(x.maxCoeff(), y.maxCoeff());
  return cmd_loss(x, y, k, lo, hi);
}

double cmd_loss(const nn::Mat<double>& x, const nn::Mat<double>& y, int k, double lower, double upper) {
  if (x.rows() < 2 || y.rows() < 2) throw ValidationError("cmd_loss: batches need at least two rows");
  if (x.cols() != y.cols()) throw ValidationError("cmd_loss: embedding dimensions differ");
  if (k < 1) throw ValidationError("cmd_loss: moment order must be >= 1");
  const double span = std::abs(upper - lower);
  if (!(span > 0.0) || !std::isfinite(span)) throw ValidationError("cmd_loss: degenerate bounds");
  const Eigen::RowVectorXd mx = x.colwise().mean();
  const Eigen::RowVectorXd my = y.colwise().mean();
  double total = (mx - my).norm() / span;
  const nn::Mat<double> cx = x.rowwise() - mx;
  const nn::Mat<double> cy = y.rowwise() - my;
  for (int order = 2; order <= k; ++order) {
    const Eigen::RowVectorXd momx = cx.array().pow(order).matrix().colwise().mean();
    const Eigen::RowVectorXd momy = cy.array().pow(order).matrix().colwise().mean();
    total += (momx - momy).norm() / std::pow(span, order);
  }
  return total;
}

template <typename T>
T task_loss_batch(const nn::Mat<T>& probs, std::span<const int> labels, nn::Mat<T>* dprobs) {
  const auto n = probs.rows();
  if (static_cast<std::size_t>(n) != labels.size() || n == 0) throw ValidationError("task_loss_batch: label count mismatch");
  if (dprobs) dprobs->setZero(n, probs.cols());
  double s = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const int y = labels[r];
    if (y < 0 || y >= probs.cols()) throw ValidationError("task_loss_batch: label out of range");
    const double p = probs(r, y);
    s -= floored_log(p);
    if (dprobs && p > kProbFloor) (*dprobs)(r, y) = static_cast<T>(-1.0 / (p * n));
  }
  return static_cast<T>(s / n);
}

template <typename T>
T similarity_loss_batch(const nn::Mat<T>& z_t, const nn::Mat<T>& z_e, nn::Mat<T>* dz_t, nn::Mat<T>* dz_e) {
  if (z_t.rows() != z_e.rows() || z_t.cols() != z_e.cols()) {
    throw ValidationError("similarity_loss_batch: embedding shapes differ");
  }
  const double count = static_cast<double>(z_t.size());
  const nn::Mat<T> diff = z_t - z_e;
  const double s = diff.template cast<double>().squaredNorm() / count;
  if (dz_t) *dz_t = diff * static_cast<T>(2.0 / count);
  if (dz_e) *dz_e = diff * static_cast<T>(-2.0 / count);
  return static_cast<T>(s);
}

template <typename T>
T consistency_loss_batch(const nn::Mat<T>& y_t, const nn::Mat<T>& y_e, nn::Mat<T>* dy_t, nn::Mat<T>* dy_e) {
  if (y_t.rows() != y_e.rows() || y_t.cols() != y_e.cols()) {
    throw ValidationError("consistency_loss_batch: shapes differ");
  }
  const auto n = y_t.rows();
  if (dy_t) dy_t->setZero(n, y_t.cols());
  if (dy_e) dy_e->setZero(n, y_t.cols());
  double s = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < y_t.cols(); ++c) {
      const double pt = y_t(r, c);
      const double pe = y_e(r, c);
      const double lt = floored_log(pt);
      const double le = floored_log(pe);
      if (pt > 0.0) s += pt * (lt - le);
      if (dy_t) (*dy_t)(r, c) = static_cast<T>(((lt - le) + (pt > kProbFloor ? 1.0 : 0.0)) / n);
      if (dy_e && pe > kProbFloor) (*dy_e)(r, c) = static_cast<T>(-pt / pe / n);
    }
  }
  return static_cast<T>(s / n);
}

template <typename T>
T cmd_loss_batch(const nn::Mat<T>& z_t, const nn::Mat<T>& z_e, int k, nn::Mat<T>* dz_t, nn::Mat<T>* dz_e) {
  if (z_t.rows() != z_e.rows() || z_t.cols() != z_e.cols()) throw ValidationError("cmd_loss_batch: shapes differ");
  const nn::Mat<double> x = z_t.template cast<double>();
  const nn::Mat<double> y = z_e.template cast<double>();
  const double lo = std::min(x.minCoeff(), y.minCoeff());
  const double hi = std::max(x.maxCoeff(), y.maxCoeff());
  const double value = cmd_loss(x, y, k, lo, hi);
  if (!dz_t && !dz_e) return static_cast<T>(value);

  const double span = hi - lo;
  const double n = static_cast<double>(x.rows());
  const Eigen::RowVectorXd mx = x.colwise().mean();
  const Eigen::RowVectorXd my = y.colwise().mean();
  const nn::Mat<double> cx = x.rowwise() - mx;
  const nn::Mat<double> cy = y.rowwise() - my;
  nn::Mat<double> gx = nn::Mat<double>::Zero(x.rows(), x.cols());
  nn::Mat<double> gy = nn::Mat<double>::Zero(y.rows(), y.cols());

  auto unit = [](const Eigen::RowVectorXd& v) -> Eigen::RowVectorXd {
    const double nv = v.norm();
    return nv > 0.0 ? Eigen::RowVectorXd(v / nv) : Eigen::RowVectorXd(Eigen::RowVectorXd::Zero(v.size()));
  };
  const Eigen::RowVectorXd u1 = unit(mx - my) / span;
  gx.rowwise() += u1 / n;
  gy.rowwise() -= u1 / n;

  // dc_k/dx_i = (k/n) [ (x_i - mu)^(k-1) - c_{k-1} ], with c_1 = 0.
  Eigen::RowVectorXd prev_x = Eigen::RowVectorXd::Zero(x.cols());
  Eigen::RowVectorXd prev_y = Eigen::RowVectorXd::Zero(y.cols());
  for (int order = 2; order <= k; ++order) {
    const Eigen::RowVectorXd momx = cx.array().pow(order).matrix().colwise().mean();
    const Eigen::RowVectorXd momy = cy.array().pow(order).matrix().colwise().mean();
    const Eigen::RowVectorXd u = unit(momx - momy) / std::pow(span, order);
    const nn::Mat<double> px = cx.array().pow(order - 1).matrix().rowwise() - prev_x;
    const nn::Mat<double> py = cy.array().pow(order - 1).matrix().rowwise() - prev_y;
    gx.array() += (px.array().rowwise() * u.array()) * (order / n);
    gy.array() -= (py.array().rowwise() * u.array()) * (order / n);
    prev_x = momx;
    prev_y = momy;
  }
  if (dz_t) *dz_t = gx.cast<T>();
  if (dz_e) *dz_e = gy.cast<T>();
  return static_cast<T>(value);
}

template <typename T>
T mse_batch(const nn::Mat<T>& pred, const nn::Mat<T>& target, nn::Mat<T>* dpred) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw ValidationError("mse_batch: shapes differ");
  const double count = static_cast<double>(pred.size());
  const nn::Mat<T> diff = pred - target;
  if (dpred) *dpred = diff * static_cast<T>(2.0 / count);
  return static_cast<T>(diff.template cast<double>().squaredNorm() / count);
}

#define THERMACO_INSTANTIATE(T)                                                                                 \
  template T task_loss_batch<T>(const nn::Mat<T>&, std::span<const int>, nn::Mat<T>*);                          \
  template T similarity_loss_batch<T>(const nn::Mat<T>&, const nn::Mat<T>&, nn::Mat<T>*, nn::Mat<T>*);          \
  template T consistency_loss_batch<T>(const nn::Mat<T>&, const nn::Mat<T>&, nn::Mat<T>*, nn::Mat<T>*);         \
  template T cmd_loss_batch<T>(const nn::Mat<T>&, const nn::Mat<T>&, int, nn::Mat<T>*, nn::Mat<T>*);            \
  template T mse_batch<T>(const nn::Mat<T>&, const nn::Mat<T>&, nn::Mat<T>*);

THERMACO_INSTANTIATE(float)
THERMACO_INSTANTIATE(double)
#undef THERMACO_INSTANTIATE

}  // namespace thermaco::loss
