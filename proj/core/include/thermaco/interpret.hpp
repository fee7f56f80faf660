#pragma once

// Grid-Shapley attribution over the body region and filter-normalized
// loss-landscape sweeps.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <vector>

#include "thermaco/models.hpp"
#include "thermaco/nn/layers.hpp"
#include "thermaco/preprocess.hpp"

namespace thermaco::interpret {

struct GridDims {
  int rows = 8;
  int cols = 8;
};

struct AttributionGrid {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;   // rows * cols, row-major; inactive cells hold 0
  std::vector<std::uint8_t> active;  // 1 = cell intersects the body and is a feature
  double base_value = 0.0;      // f(all cells masked)
  double full_value = 0.0;      // f(x)
  double efficiency_residual = 0.0;  // |sum - (f(x) - f(empty))| / |f(x) - f(empty)|
  int n_features = 0;
  int n_evaluations = 0;
  bool exact = false;           // all coalitions enumerated

  double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
};

/// Maps a batch of (possibly masked) thermal windows to the explained scalar,
/// one value per window.
using WindowScorer = std::function<std::vector<double>(const std::vector<const std::vector<float>*>& windows)>;

/// Cells tile the bounding box of the body (part_map > 0 in any frame). Masking
/// a cell zeroes its pixels in every frame. Coalitions are enumerated exactly
/// when 2^M - 2 <= n_samples, otherwise drawn with Shapley-kernel weights
/// (paired with their complements) and solved by weighted least squares with
/// heavily weighted empty/full anchors. Throws ValidationError when
/// n_samples < M + 2.
AttributionGrid grid_shapley(const prep::PreparedWindow& window, GridDims dims, int n_samples, std::mt19937_64& rng,
                             const WindowScorer& scorer, int batch_size = 64);

/// Explains the bundle's stress-class probability (inference mode, the
/// window's own EDA features for kinds that consume them).
AttributionGrid grid_shapley(ModelBundle<float>& bundle, const prep::PreparedWindow& window, GridDims dims,
                             int n_samples, std::mt19937_64& rng);

/// Cell index (row-major) of every pixel of one frame, -1 outside the box.
std::vector<int> cell_index_map(const prep::PreparedWindow& window, GridDims dims);

void write_attribution_csv(const std::filesystem::path& path, const AttributionGrid& grid);

struct LandscapeSpec {
  int steps = 41;        // grid points per axis
  double extent = 1.0;   // axes span [-extent, extent]
  std::uint64_t seed = 0;

  void validate() const;
};

struct LandscapeGrid {
  std::vector<double> alphas;
  std::vector<double> betas;
  std::vector<double> values;        // alphas.size() x betas.size(), alpha-major
  std::vector<std::uint8_t> finite;  // 0 where the loss was NaN or infinite
  std::uint64_t seed = 0;
  double center_loss = 0.0;          // L(theta) evaluated before the sweep

  double at(std::size_t ia, std::size_t ib) const { return values[ia * betas.size() + ib]; }
};

/// Gaussian direction per trainable parameter, rescaled filter by filter
/// (groups along the first dimension) to the norm of the matching filter of
/// theta. Non-trainable parameters get a zero direction.
template <typename T>
std::vector<std::vector<T>> filter_normalized_direction(const nn::ParamRefs<T>& params, std::mt19937_64& rng);

/// Evaluates loss() at theta + a*delta + b*eta on the grid and restores theta
/// bitwise afterwards. Non-finite losses are recorded and flagged.
template <typename T>
LandscapeGrid loss_landscape(const nn::ParamRefs<T>& params, const std::function<double()>& loss,
                             const LandscapeSpec& spec);

/// Same, with explicit directions (one vector per parameter).
template <typename T>
LandscapeGrid loss_landscape(const nn::ParamRefs<T>& params, const std::function<double()>& loss,
                             const LandscapeSpec& spec, const std::vector<std::vector<T>>& delta,
                             const std::vector<std::vector<T>>& eta);

/// Inference-mode cross-entropy of the bundle's prediction on a fixed batch.
double bundle_cross_entropy(ModelBundle<float>& bundle, const Batch<float>& batch);

/// Sweep of bundle_cross_entropy over the bundle's parameters.
LandscapeGrid bundle_landscape(ModelBundle<float>& bundle, const Batch<float>& batch, const LandscapeSpec& spec);

void write_landscape_csv(const std::filesystem::path& path, const LandscapeGrid& grid);

}  // namespace thermaco::interpret
