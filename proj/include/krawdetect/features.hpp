#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "krawdetect/error.hpp"
#include "krawdetect/keyed_selection.hpp"
#include "krawdetect/krawtchouk.hpp"

namespace krawdetect {

enum class IntegrationMode { Raw, Magnitude };

inline const char* to_string(IntegrationMode m) { return m == IntegrationMode::Raw ? "raw" : "magnitude"; }

inline IntegrationMode parse_integration_mode(const std::string& s) {
  if (s == "raw") return IntegrationMode::Raw;
  if (s == "magnitude") return IntegrationMode::Magnitude;
  throw ConfigError("integration mode must be 'raw' or 'magnitude', got '" + s + "'");
}

// Radial shells in (n, m) space: band i holds orders whose l2 norm lies in
// [i R / B, (i+1) R / B), R = |(W, H)|; the last band also takes norm == R.
struct BandPartition {
  std::size_t num_bands = 0;
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> thresholds;

  double radius() const noexcept { return thresholds.back(); }

  // 0-based band index.
  std::size_t band_of(int n, int m) const {
    if (n < 0 || m < 0 || n > static_cast<int>(width) || m > static_cast<int>(height))
      throw OrderError("order outside the partition range");
    const double r = std::hypot(static_cast<double>(n), static_cast<double>(m));
    auto b = static_cast<std::size_t>(r / radius() * static_cast<double>(num_bands));
    b = std::min(b, num_bands - 1);
    // Guard against rounding right at a threshold.
    while (b > 0 && r < thresholds[b]) --b;
    while (b + 1 < num_bands && r >= thresholds[b + 1]) ++b;
    return b;
  }

  friend bool operator==(const BandPartition&, const BandPartition&) = default;
};

inline BandPartition partition_bands(std::size_t width, std::size_t height, std::size_t num_bands) {
  if (num_bands < 1) throw ConfigError("num_bands must be >= 1");
  BandPartition p;
  p.num_bands = num_bands;
  p.width = width;
  p.height = height;
  const double r = std::hypot(static_cast<double>(width), static_cast<double>(height));
  p.thresholds.resize(num_bands + 1);
  for (std::size_t i = 0; i <= num_bands; ++i)
    p.thresholds[i] = r * static_cast<double>(i) / static_cast<double>(num_bands);
  return p;
}

struct FeatureSlot {
  std::size_t config = 0;  // index into the plan's retained configs
  std::size_t band = 0;
  friend bool operator==(const FeatureSlot&, const FeatureSlot&) = default;
};

struct FeatureVector {
  std::vector<double> values;
  std::vector<FeatureSlot> layout;
  bool standardized = false;

  std::size_t size() const noexcept { return values.size(); }
};

// Sums coefficients per (config, band). Raw mode is the signed sum; the
// magnitude mode sums |c| so symmetric perturbation energy does not cancel.
inline FeatureVector integrate_bands(const CoefficientSet& coeffs, const BandPartition& partition, IntegrationMode mode) {
  FeatureVector fv;
  const std::size_t nb = partition.num_bands;
  fv.values.assign(coeffs.configs.size() * nb, 0.0);
  for (std::size_t c = 0; c < coeffs.configs.size(); ++c)
    for (std::size_t b = 0; b < nb; ++b) fv.layout.push_back({c, b});
  std::vector<std::size_t> band(coeffs.orders.size());
  for (std::size_t k = 0; k < coeffs.orders.size(); ++k)
    band[k] = partition.band_of(coeffs.orders[k].n, coeffs.orders[k].m);
  for (std::size_t c = 0; c < coeffs.configs.size(); ++c)
    for (std::size_t k = 0; k < coeffs.orders.size(); ++k) {
      const double v = coeffs.at(c, k);
      fv.values[c * nb + band[k]] += mode == IntegrationMode::Raw ? v : std::abs(v);
    }
  return fv;
}

struct EnhancementOptions {
  double keep_fraction = 0.75;
  bool weighting = true;
};

// Per-entry statistics fitted on training features. Empty weights means
// weighting is off.
struct EnhancementState {
  std::vector<double> weights;
  std::vector<char> keep_mask;
  std::vector<double> mean;
  std::vector<double> stddev;

  std::size_t input_dim() const noexcept { return mean.size(); }
  std::size_t output_dim() const noexcept {
    return static_cast<std::size_t>(std::count(keep_mask.begin(), keep_mask.end(), 1));
  }

  friend bool operator==(const EnhancementState&, const EnhancementState&) = default;
};

inline constexpr double kVarianceFloor = 1e-12;

namespace detail {

// Sum of a sorted copy: independent of input order, bit for bit.
inline double order_free_sum(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

struct ColumnStats {
  double mean = 0.0;
  double var = 0.0;
};

inline ColumnStats column_stats(const std::vector<double>& v) {
  ColumnStats s;
  if (v.empty()) return s;
  s.mean = order_free_sum(v) / static_cast<double>(v.size());
  std::vector<double> sq(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - s.mean) * (v[i] - s.mean);
  s.var = order_free_sum(std::move(sq)) / static_cast<double>(v.size());
  return s;
}

}  // namespace detail

// Fisher weighting, point-biserial ranking and z-score statistics.
inline EnhancementState fit_enhancement(const std::vector<FeatureVector>& train, const std::vector<int>& labels,
                                        const EnhancementOptions& opts = {}) {
  if (train.size() != labels.size()) throw ShapeError("feature and label counts differ");
  if (train.empty()) throw DegenerateError("no training features");
  if (!(opts.keep_fraction > 0.0 && opts.keep_fraction <= 1.0)) throw ConfigError("keep_fraction must be in (0,1]");
  const std::size_t dim = train.front().size();
  std::size_t n1 = 0;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i].size() != dim) throw ShapeError("feature vectors differ in dimension");
    if (labels[i] != 0 && labels[i] != 1) throw RangeError("detector labels must be 0 or 1");
    n1 += labels[i] == 1 ? 1 : 0;
  }
  const std::size_t n0 = train.size() - n1;
  if (n0 == 0 || n1 == 0) throw DegenerateError("enhancement needs both clean and adversarial examples");

  EnhancementState st;
  st.mean.resize(dim);
  st.stddev.resize(dim);
  st.keep_mask.assign(dim, 0);
  std::vector<double> fisher(dim, 0.0);
  std::vector<double> relevance(dim, -1.0);
  std::vector<char> degenerate(dim, 0);

  std::vector<double> all, c0, c1;
  for (std::size_t j = 0; j < dim; ++j) {
    all.clear();
    c0.clear();
    c1.clear();
    for (std::size_t i = 0; i < train.size(); ++i) {
      const double v = train[i].values[j];
      all.push_back(v);
      (labels[i] == 1 ? c1 : c0).push_back(v);
    }
    const auto s = detail::column_stats(all);
    const auto s0 = detail::column_stats(c0);
    const auto s1 = detail::column_stats(c1);
    st.mean[j] = s.mean;
    st.stddev[j] = std::sqrt(s.var);
    if (st.stddev[j] <= kVarianceFloor * (1.0 + std::abs(s.mean))) {
      degenerate[j] = 1;
      st.stddev[j] = 1.0;
      continue;
    }
    const double pooled = std::sqrt((static_cast<double>(n0) * s0.var + static_cast<double>(n1) * s1.var) /
                                    static_cast<double>(n0 + n1));
    const double gap = std::abs(s1.mean - s0.mean);
    fisher[j] = gap / (pooled + kVarianceFloor);
    const double n = static_cast<double>(n0 + n1);
    relevance[j] = gap / st.stddev[j] * std::sqrt(static_cast<double>(n0) * static_cast<double>(n1)) / n;
  }

  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j < dim; ++j)
    if (!degenerate[j]) idx.push_back(j);
  if (idx.empty()) throw DegenerateError("every feature column is constant");
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return relevance[a] > relevance[b]; });
  const auto keep = std::min(idx.size(), static_cast<std::size_t>(std::ceil(opts.keep_fraction * static_cast<double>(dim) - 1e-9)));
  for (std::size_t k = 0; k < std::max<std::size_t>(keep, 1); ++k) st.keep_mask[idx[k]] = 1;

  if (opts.weighting) {
    st.weights.assign(dim, 0.0);
    double total = 0.0;
    for (std::size_t j : idx) total += fisher[j];
    for (std::size_t j : idx)
      st.weights[j] = total > 0.0 ? fisher[j] * static_cast<double>(idx.size()) / total : 1.0;
  }
  return st;
}

// Standardize, weight and drop masked entries.
inline FeatureVector apply_enhancement(const FeatureVector& raw, const EnhancementState& st) {
  if (raw.size() != st.input_dim()) throw ShapeError("feature dimension does not match enhancement state");
  FeatureVector out;
  out.standardized = true;
  for (std::size_t j = 0; j < raw.size(); ++j) {
    if (!st.keep_mask[j]) continue;
    double v = (raw.values[j] - st.mean[j]) / st.stddev[j];
    if (!st.weights.empty()) v *= st.weights[j];
    out.values.push_back(v);
    out.layout.push_back(raw.layout[j]);
  }
  return out;
}

// Plan-bound extraction pipeline: decomposition tables are built once.
class FeatureExtractor {
 public:
  FeatureExtractor(const SelectionPlan& plan, const BandPartition& partition, IntegrationMode mode)
      : decomposer_(partition.width, partition.height, plan.retained_configs, plan.order_mask),
        partition_(partition),
        mode_(mode) {
    for (const auto& o : plan.order_mask) partition_.band_of(o.n, o.m);
  }

  const Decomposer& decomposer() const noexcept { return decomposer_; }
  const BandPartition& partition() const noexcept { return partition_; }
  IntegrationMode mode() const noexcept { return mode_; }
  std::size_t raw_dim() const noexcept { return decomposer_.configs().size() * partition_.num_bands; }

  FeatureVector raw(const Image& img) const {
    if (img.width != partition_.width || img.height != partition_.height)
      throw ShapeError("image size does not match the band partition");
    return integrate_bands(decomposer_.decompose(img), partition_, mode_);
  }

  FeatureVector operator()(const Image& img, const EnhancementState* state = nullptr) const {
    auto fv = raw(img);
    return state ? apply_enhancement(fv, *state) : fv;
  }

 private:
  Decomposer decomposer_;
  BandPartition partition_;
  IntegrationMode mode_;
};

inline FeatureVector extract_feature_vector(const Image& img, const SelectionPlan& plan, const BandPartition& partition,
                                            const EnhancementState* state, IntegrationMode mode) {
  return FeatureExtractor(plan, partition, mode)(img, state);
}

}  // namespace krawdetect
