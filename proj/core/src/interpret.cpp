#include "thermaco/interpret.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>

#include <Eigen/Dense>

#include "thermaco/session_io.hpp"

namespace thermaco::interpret {

namespace {

// Weight of the empty/full coalitions relative to the (unit-sum) sampled ones.
constexpr double kAnchorWeight = 1e6;
constexpr int kMaxExactFeatures = 20;

struct CellLayout {
  std::vector<int> cell_of_pixel;             // per frame pixel, -1 outside the box
  std::vector<std::vector<int>> pixels;       // per cell, frame pixel indices
  std::vector<int> features;                  // active cell ids
};

CellLayout layout_cells(const prep::PreparedWindow& w, GridDims dims) {
  if (dims.rows <= 0 || dims.cols <= 0) throw ValidationError("grid dims must be positive");
  const int H = w.height, W = w.width;
  const std::size_t fs = static_cast<std::size_t>(H) * W;
  if (w.frames <= 0 || w.part_map.size() != fs * w.frames || w.thermal.size() != fs * w.frames) {
    throw ValidationError("attribution: window lacks a part map of its own shape");
  }
  std::vector<std::uint8_t> body(fs, 0);
  for (int t = 0; t < w.frames; ++t) {
    for (std::size_t i = 0; i < fs; ++i) body[i] |= w.part_map[t * fs + i] > 0 ? 1 : 0;
  }
  int r0 = H, r1 = -1, c0 = W, c1 = -1;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      if (!body[static_cast<std::size_t>(y) * W + x]) continue;
      r0 = std::min(r0, y);
      r1 = std::max(r1, y);
      c0 = std::min(c0, x);
      c1 = std::max(c1, x);
    }
  }
  CellLayout out;
  out.cell_of_pixel.assign(fs, -1);
  out.pixels.resize(static_cast<std::size_t>(dims.rows) * dims.cols);
  if (r1 < 0) return out;
  const int bh = r1 - r0 + 1, bw = c1 - c0 + 1;
  std::vector<std::uint8_t> touches_body(out.pixels.size(), 0);
  for (int y = r0; y <= r1; ++y) {
    const int cr = static_cast<int>(static_cast<long long>(y - r0) * dims.rows / bh);
    for (int x = c0; x <= c1; ++x) {
      const int cc = static_cast<int>(static_cast<long long>(x - c0) * dims.cols / bw);
      const int cell = cr * dims.cols + cc;
      const std::size_t p = static_cast<std::size_t>(y) * W + x;
      out.cell_of_pixel[p] = cell;
      out.pixels[cell].push_back(static_cast<int>(p));
      if (body[p]) touches_body[cell] = 1;
    }
  }
  for (std::size_t c = 0; c < touches_body.size(); ++c) {
    if (touches_body[c]) out.features.push_back(static_cast<int>(c));
  }
  return out;
}

/// Scores coalitions (bit j set = feature j present) in batches.
class CoalitionEvaluator {
 public:
  CoalitionEvaluator(const prep::PreparedWindow& w, const CellLayout& layout, const WindowScorer& scorer, int batch)
      : w_(w), layout_(layout), scorer_(scorer), batch_(std::max(batch, 1)) {}

  std::vector<double> operator()(const std::vector<std::vector<std::uint8_t>>& coalitions) {
    std::vector<double> out;
    out.reserve(coalitions.size());
    const std::size_t fs = static_cast<std::size_t>(w_.height) * w_.width;
    for (std::size_t i = 0; i < coalitions.size(); i += batch_) {
      const std::size_t end = std::min(coalitions.size(), i + batch_);
      std::vector<std::vector<float>> masked(end - i, w_.thermal);
      std::vector<const std::vector<float>*> refs;
      for (std::size_t k = i; k < end; ++k) {
        auto& px = masked[k - i];
        for (std::size_t j = 0; j < layout_.features.size(); ++j) {
          if (coalitions[k][j]) continue;
          for (int p : layout_.pixels[layout_.features[j]]) {
            for (int t = 0; t < w_.frames; ++t) px[t * fs + p] = 0.0f;
          }
        }
        refs.push_back(&px);
      }
      const auto v = scorer_(refs);
      if (v.size() != refs.size()) throw ValidationError("attribution scorer returned the wrong number of values");
      out.insert(out.end(), v.begin(), v.end());
      evaluations_ += static_cast<int>(refs.size());
    }
    return out;
  }
  int evaluations() const { return evaluations_; }

 private:
  const prep::PreparedWindow& w_;
  const CellLayout& layout_;
  const WindowScorer& scorer_;
  std::size_t batch_;
  int evaluations_ = 0;
};

std::vector<double> exact_shapley(int m, const std::vector<double>& v) {
  std::vector<double> weight(m);
  for (int s = 0; s < m; ++s) {
    // s! (m - s - 1)! / m!
    weight[s] = std::exp(std::lgamma(s + 1.0) + std::lgamma(m - s + 0.0) - std::lgamma(m + 1.0));
  }
  std::vector<double> phi(m, 0.0);
  const std::uint32_t n = 1u << m;
  for (std::uint32_t s = 0; s < n; ++s) {
    const int size = std::popcount(s);
    for (int i = 0; i < m; ++i) {
      if (s & (1u << i)) continue;
      phi[i] += weight[size] * (v[s | (1u << i)] - v[s]);
    }
  }
  return phi;
}

}  // namespace

std::vector<int> cell_index_map(const prep::PreparedWindow& window, GridDims dims) {
  return layout_cells(window, dims).cell_of_pixel;
}

AttributionGrid grid_shapley(const prep::PreparedWindow& window, GridDims dims, int n_samples, std::mt19937_64& rng,
                             const WindowScorer& scorer, int batch_size) {
  const CellLayout layout = layout_cells(window, dims);
  const int m = static_cast<int>(layout.features.size());
  if (n_samples < m + 2) {
    throw ValidationError("grid_shapley: " + std::to_string(n_samples) + " samples underdetermine " +
                          std::to_string(m) + " features (need at least " + std::to_string(m + 2) + ")");
  }
  AttributionGrid g;
  g.rows = dims.rows;
  g.cols = dims.cols;
  g.values.assign(static_cast<std::size_t>(dims.rows) * dims.cols, 0.0);
  g.active.assign(g.values.size(), 0);
  g.n_features = m;
  for (int c : layout.features) g.active[c] = 1;

  CoalitionEvaluator eval(window, layout, scorer, batch_size);
  const std::vector<std::uint8_t> none(m, 0), all(m, 1);
  const auto ends = eval({none, all});
  g.base_value = ends[0];
  g.full_value = ends[1];
  std::vector<double> phi;

  if (m == 0) {
    phi.clear();
  } else if (m <= kMaxExactFeatures && (std::uint64_t{1} << m) - 2 <= static_cast<std::uint64_t>(n_samples)) {
    const std::uint32_t n = 1u << m;
    std::vector<std::vector<std::uint8_t>> coalitions;
    for (std::uint32_t s = 1; s + 1 < n; ++s) {
      std::vector<std::uint8_t> z(m);
      for (int j = 0; j < m; ++j) z[j] = (s >> j) & 1u;
      coalitions.push_back(std::move(z));
    }
    const auto mid = eval(coalitions);
    std::vector<double> v(n);
    v[0] = g.base_value;
    v[n - 1] = g.full_value;
    for (std::uint32_t s = 1; s + 1 < n; ++s) v[s] = mid[s - 1];
    phi = exact_shapley(m, v);
    g.exact = true;
  } else {
    // Coalition sizes follow the Shapley kernel mass; each draw is paired
    // with its complement.
    std::vector<double> size_mass(m + 1, 0.0);
    for (int s = 1; s < m; ++s) size_mass[s] = (m - 1.0) / (static_cast<double>(s) * (m - s));
    std::discrete_distribution<int> size_dist(size_mass.begin(), size_mass.end());
    std::vector<int> order(m);
    std::vector<std::vector<std::uint8_t>> coalitions;
    while (static_cast<int>(coalitions.size()) < n_samples) {
      const int s = size_dist(rng);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      std::vector<std::uint8_t> z(m, 0);
      for (int j = 0; j < s; ++j) z[order[j]] = 1;
      coalitions.push_back(z);
      if (static_cast<int>(coalitions.size()) < n_samples) {
        for (auto& b : z) b = 1 - b;
        coalitions.push_back(std::move(z));
      }
    }
    const auto v = eval(coalitions);
    const Eigen::Index rows = static_cast<Eigen::Index>(coalitions.size()) + 1;
    Eigen::MatrixXd a(rows, m);
    Eigen::VectorXd y(rows);
    const double w = std::sqrt(1.0 / static_cast<double>(coalitions.size()));
    for (std::size_t k = 0; k < coalitions.size(); ++k) {
      for (int j = 0; j < m; ++j) a(static_cast<Eigen::Index>(k), j) = w * coalitions[k][j];
      y(static_cast<Eigen::Index>(k)) = w * (v[k] - g.base_value);
    }
    const double wa = std::sqrt(kAnchorWeight);
    a.row(rows - 1).setConstant(wa);
    y(rows - 1) = wa * (g.full_value - g.base_value);
    const Eigen::VectorXd sol = a.colPivHouseholderQr().solve(y);
    phi.assign(sol.data(), sol.data() + m);
  }

  double sum = 0.0;
  for (int j = 0; j < m; ++j) {
    g.values[layout.features[j]] = phi[j];
    sum += phi[j];
  }
  const double gap = g.full_value - g.base_value;
  g.efficiency_residual = gap != 0.0 ? std::abs(sum - gap) / std::abs(gap) : std::abs(sum);
  g.n_evaluations = eval.evaluations();
  return g;
}

AttributionGrid grid_shapley(ModelBundle<float>& bundle, const prep::PreparedWindow& window, GridDims dims,
                             int n_samples, std::mt19937_64& rng) {
  const auto features = window.eda.to_array();
  WindowScorer scorer = [&](const std::vector<const std::vector<float>*>& windows) {
    Batch<float> b;
    b.size = static_cast<int>(windows.size());
    b.frames = window.frames;
    b.height = window.height;
    b.width = window.width;
    const std::size_t per = window.thermal.size();
    b.thermal.resize(per * windows.size());
    b.eda.resize(b.size, static_cast<Eigen::Index>(features.size()));
    b.labels.assign(windows.size(), window.label);
    for (std::size_t i = 0; i < windows.size(); ++i) {
      std::copy(windows[i]->begin(), windows[i]->end(), b.thermal.begin() + i * per);
      for (std::size_t j = 0; j < features.size(); ++j) b.eda(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = static_cast<float>(features[j]);
    }
    const auto p = predict_proba(bundle, b);
    std::vector<double> out(windows.size());
    for (std::size_t i = 0; i < windows.size(); ++i) out[i] = p(static_cast<Eigen::Index>(i), 1);
    return out;
  };
  return grid_shapley(window, dims, n_samples, rng, scorer);
}

void write_attribution_csv(const std::filesystem::path& path, const AttributionGrid& grid) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  os << "row,col,value,active\n";
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      os << r << ',' << c << ',' << format_double(grid.at(r, c)) << ','
         << static_cast<int>(grid.active[static_cast<std::size_t>(r) * grid.cols + c]) << '\n';
    }
  }
}

void LandscapeSpec::validate() const {
  if (steps < 2) throw ValidationError("landscape: steps must be >= 2");
  if (!(extent > 0.0) || !std::isfinite(extent)) throw ValidationError("landscape: extent must be positive");
}

template <typename T>
std::vector<std::vector<T>> filter_normalized_direction(const nn::ParamRefs<T>& params, std::mt19937_64& rng) {
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<std::vector<T>> dir;
  for (const auto* p : params) {
    std::vector<T> d(p->size(), T(0));
    if (p->trainable && p->size() > 0) {
      const std::size_t filters = static_cast<std::size_t>(std::max(p->filters(), 1));
      const std::size_t group = p->size() / filters;
      for (auto& x : d) x = static_cast<T>(unit(rng));
      for (std::size_t f = 0; f < filters; ++f) {
        double dn = 0.0, tn = 0.0;
        for (std::size_t i = f * group; i < (f + 1) * group; ++i) {
          dn += static_cast<double>(d[i]) * d[i];
          tn += static_cast<double>(p->value[i]) * p->value[i];
        }
        const double scale = dn > 0.0 ? std::sqrt(tn / dn) : 0.0;
        for (std::size_t i = f * group; i < (f + 1) * group; ++i) d[i] = static_cast<T>(d[i] * scale);
      }
    }
    dir.push_back(std::move(d));
  }
  return dir;
}

template <typename T>
LandscapeGrid loss_landscape(const nn::ParamRefs<T>& params, const std::function<double()>& loss,
                             const LandscapeSpec& spec, const std::vector<std::vector<T>>& delta,
                             const std::vector<std::vector<T>>& eta) {
  spec.validate();
  if (delta.size() != params.size() || eta.size() != params.size()) throw ValidationError("landscape: one direction per parameter required");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (delta[i].size() != params[i]->size() || eta[i].size() != params[i]->size()) {
      throw ValidationError("landscape: direction shape mismatch for '" + params[i]->name + "'");
    }
  }
  std::vector<std::vector<T>> theta;
  for (const auto* p : params) theta.push_back(p->value);

  LandscapeGrid g;
  g.seed = spec.seed;
  const int n = spec.steps;
  for (int i = 0; i < n; ++i) {
    // Integer numerator keeps the middle coordinate exactly 0 for odd n.
    const double x = spec.extent * static_cast<double>(2 * i - (n - 1)) / static_cast<double>(n - 1);
    g.alphas.push_back(x);
    g.betas.push_back(x);
  }
  g.center_loss = loss();
  auto restore = [&] {
    for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = theta[k];
  };
  try {
    for (double a : g.alphas) {
      for (double b : g.betas) {
        if (a == 0.0 && b == 0.0) {
          restore();
        } else {
          for (std::size_t k = 0; k < params.size(); ++k) {
            auto& v = params[k]->value;
            for (std::size_t i = 0; i < v.size(); ++i) {
              v[i] = static_cast<T>(theta[k][i] + static_cast<T>(a) * delta[k][i] + static_cast<T>(b) * eta[k][i]);
            }
          }
        }
        const double l = loss();
        g.values.push_back(l);
        g.finite.push_back(std::isfinite(l) ? 1 : 0);
      }
    }
  } catch (...) {
    restore();
    throw;
  }
  restore();
  return g;
}

template <typename T>
LandscapeGrid loss_landscape(const nn::ParamRefs<T>& params, const std::function<double()>& loss,
                             const LandscapeSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  const auto delta = filter_normalized_direction(params, rng);
  const auto eta = filter_normalized_direction(params, rng);
  return loss_landscape(params, loss, spec, delta, eta);
}

double bundle_cross_entropy(ModelBundle<float>& bundle, const Batch<float>& batch) {
  const auto p = predict_proba(bundle, batch);
  double sum = 0.0;
  for (int i = 0; i < batch.size; ++i) {
    sum -= std::log(std::max(static_cast<double>(p(i, batch.labels[i])), loss::kProbFloor));
  }
  return sum / batch.size;
}

LandscapeGrid bundle_landscape(ModelBundle<float>& bundle, const Batch<float>& batch, const LandscapeSpec& spec) {
  return loss_landscape<float>(bundle.parameters(), [&] { return bundle_cross_entropy(bundle, batch); }, spec);
}

void write_landscape_csv(const std::filesystem::path& path, const LandscapeGrid& grid) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  os << "alpha,beta,loss,finite\n";
  for (std::size_t i = 0; i < grid.alphas.size(); ++i) {
    for (std::size_t j = 0; j < grid.betas.size(); ++j) {
      os << format_double(grid.alphas[i]) << ',' << format_double(grid.betas[j]) << ',' << format_double(grid.at(i, j))
         << ',' << static_cast<int>(grid.finite[i * grid.betas.size() + j]) << '\n';
    }
  }
}

template std::vector<std::vector<float>> filter_normalized_direction<float>(const nn::ParamRefs<float>&, std::mt19937_64&);
template std::vector<std::vector<double>> filter_normalized_direction<double>(const nn::ParamRefs<double>&, std::mt19937_64&);
template LandscapeGrid loss_landscape<float>(const nn::ParamRefs<float>&, const std::function<double()>&, const LandscapeSpec&);
template LandscapeGrid loss_landscape<double>(const nn::ParamRefs<double>&, const std::function<double()>&, const LandscapeSpec&);
template LandscapeGrid loss_landscape<float>(const nn::ParamRefs<float>&, const std::function<double()>&, const LandscapeSpec&,
                                             const std::vector<std::vector<float>>&, const std::vector<std::vector<float>>&);
template LandscapeGrid loss_landscape<double>(const nn::ParamRefs<double>&, const std::function<double()>&,
                                              const LandscapeSpec&, const std::vector<std::vector<double>>&,
                                              const std::vector<std::vector<double>>&);

}  // namespace thermaco::interpret
