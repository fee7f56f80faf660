#pragma once

// Training objectives: cross-entropy task loss, embedding similarity (mean
// squared error, or central moment discrepancy for the ablation), KL
// consistency between the two streams' predictions, and their weighted sum.
// Scalar forms operate on one sample; batch forms return the batch mean and
// optionally its gradient.

#include <span>

#include "thermaco/datamodel.hpp"
#include "thermaco/nn/layers.hpp"

namespace thermaco::loss {

inline constexpr double kProbFloor = 1e-12;

struct LossWeights {
  double alpha = 1.0;  // similarity
  double beta = 1.0;   // consistency

  void validate() const;
};

double task_loss(std::span<const double> y_pred, int y);
double similarity_loss(std::span<const double> z_t, std::span<const double> z_e);
/// KL(y_t || y_e) with the probability floor applied inside the logs.
double consistency_loss(std::span<const double> y_t, std::span<const double> y_e);
double total_loss(double l_t, double l_e, double l_s, double l_c, const LossWeights& weights);

/// Central moment discrepancy between two batches (rows are samples) with
/// moments up to order k. Bounds default to the joint min/max of both batches.
double cmd_loss(const nn::Mat<double>& x, const nn::Mat<double>& y, int k = 5);
double cmd_loss(const nn::Mat<double>& x, const nn::Mat<double>& y, int k, double lower, double upper);

// ---- batch forms (mean over rows); gradient outputs are overwritten ----

template <typename T>
T task_loss_batch(const nn::Mat<T>& probs, std::span<const int> labels, nn::Mat<T>* dprobs);

template <typename T>
T similarity_loss_batch(const nn::Mat<T>& z_t, const nn::Mat<T>& z_e, nn::Mat<T>* dz_t, nn::Mat<T>* dz_e);

template <typename T>
T consistency_loss_batch(const nn::Mat<T>& y_t, const nn::Mat<T>& y_e, nn::Mat<T>* dy_t, nn::Mat<T>* dy_e);

/// Bounds are taken from the batch and treated as constants for the gradient.
template <typename T>
T cmd_loss_batch(const nn::Mat<T>& z_t, const nn::Mat<T>& z_e, int k, nn::Mat<T>* dz_t, nn::Mat<T>* dz_e);

/// Plain mean squared error over all elements (regression heads).
template <typename T>
T mse_batch(const nn::Mat<T>& pred, const nn::Mat<T>& target, nn::Mat<T>* dpred);

}  // namespace thermaco::loss
