#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "krawdetect/error.hpp"
#include "krawdetect/image.hpp"

namespace krawdetect {

// Spatial parameters of the 2D basis. Shifting P moves the zeros of the
// polynomials left (P < 0.5) or right (P > 0.5) along the grid.
struct SpatialConfig {
  double px = 0.5;
  double py = 0.5;

  auto operator<=>(const SpatialConfig&) const = default;

  void validate() const {
    if (!(px > 0.0 && px < 1.0) || !(py > 0.0 && py < 1.0))
      throw RangeError("spatial parameters must lie strictly inside (0,1)");
  }
};

// Frequency order (n along x, m along y).
struct OrderPair {
  int n = 0;
  int m = 0;

  auto operator<=>(const OrderPair&) const = default;
};

inline std::vector<OrderPair> full_order_set(int max_n, int max_m) {
  std::vector<OrderPair> out;
  out.reserve(static_cast<std::size_t>((max_n + 1) * (max_m + 1)));
  for (int n = 0; n <= max_n; ++n)
    for (int m = 0; m <= max_m; ++m) out.push_back({n, m});
  return out;
}

struct TableOptions {
  double orthotol = 1e-8;
  // When false, an unstable high order raises StabilityError instead of
  // being dropped.
  bool truncate_unstable = true;
};

// values[l][z] = weighted Krawtchouk polynomial of order l at grid point z,
// for z in 0..L.
struct PolynomialTable {
  double p = 0.5;
  int domain = 0;  // L
  int max_order = 0;
  int requested_order = 0;
  double deviation = 0.0;  // orthonormality deviation of the retained rows
  std::vector<std::vector<double>> values;

  bool truncated() const noexcept { return max_order < requested_order; }
  double operator()(int l, int z) const { return values[static_cast<std::size_t>(l)][static_cast<std::size_t>(z)]; }
  std::span<const double> row(int l) const { return values[static_cast<std::size_t>(l)]; }
};

namespace detail {

inline void check_table_args(double p, int domain, int max_order) {
  if (!(p > 0.0 && p < 1.0)) throw RangeError("P must lie strictly inside (0,1)");
  if (domain < 1) throw RangeError("L must be a positive integer");
  if (max_order < 0 || max_order > domain)
    throw OrderError("max_order " + std::to_string(max_order) + " outside 0..L=" + std::to_string(domain));
}

// Rows 0..max_order by the normalized three-term recurrence. Row 0 is the
// square root of the binomial mass, evaluated in log space.
inline std::vector<std::vector<double>> krawtchouk_rows(double p, int domain, int max_order) {
  const auto n_pts = static_cast<std::size_t>(domain + 1);
  const double L = domain;
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(max_order + 1), std::vector<double>(n_pts));

  const double log_p = std::log(p);
  const double log_q = std::log1p(-p);
  const double log_fact_l = std::lgamma(L + 1.0);
  for (std::size_t z = 0; z < n_pts; ++z) {
    const double zd = static_cast<double>(z);
    const double log_mass = log_fact_l - std::lgamma(zd + 1.0) - std::lgamma(L - zd + 1.0) + zd * log_p + (L - zd) * log_q;
    rows[0][z] = std::exp(0.5 * log_mass);
  }
  if (max_order == 0) return rows;

  const double pq = p * (1.0 - p);
  const double s1 = 1.0 / std::sqrt(pq * L);
  for (std::size_t z = 0; z < n_pts; ++z) rows[1][z] = (p * L - static_cast<double>(z)) * s1 * rows[0][z];

  for (int l = 1; l < max_order; ++l) {
    const double ld = l;
    const double a_scale = 1.0 / std::sqrt(pq * (ld + 1.0) * (L - ld));
    const double b = std::sqrt(ld * (L - ld + 1.0) / ((ld + 1.0) * (L - ld)));
    const double centre = L * p - 2.0 * ld * p + ld;
    const auto& cur = rows[static_cast<std::size_t>(l)];
    const auto& prev = rows[static_cast<std::size_t>(l - 1)];
    auto& next = rows[static_cast<std::size_t>(l + 1)];
    for (std::size_t z = 0; z < n_pts; ++z)
      next[z] = (centre - static_cast<double>(z)) * a_scale * cur[z] - b * prev[z];
  }
  return rows;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace detail

// max over l, l' <= max_order of |<row_l, row_l'> - delta_ll'|.
inline double orthonormality_deviation(double p, int domain, int max_order) {
  detail::check_table_args(p, domain, max_order);
  const auto rows = detail::krawtchouk_rows(p, domain, max_order);
  double dev = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j <= i; ++j)
      dev = std::max(dev, std::abs(detail::dot(rows[i], rows[j]) - (i == j ? 1.0 : 0.0)));
  return dev;
}

inline PolynomialTable build_polynomial_table(double p, int domain, int max_order, const TableOptions& opts = {}) {
  detail::check_table_args(p, domain, max_order);
  auto rows = detail::krawtchouk_rows(p, domain, max_order);

  // Longest prefix whose Gram matrix stays within orthotol.
  int stable = -1;
  double dev = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double row_dev = 0.0;
    for (std::size_t j = 0; j <= i; ++j)
      row_dev = std::max(row_dev, std::abs(detail::dot(rows[i], rows[j]) - (i == j ? 1.0 : 0.0)));
    if (row_dev > opts.orthotol) break;
    dev = std::max(dev, row_dev);
    stable = static_cast<int>(i);
  }
  if (stable < 0)
    throw StabilityError("order 0 fails orthonormality for P=" + std::to_string(p) + ", L=" + std::to_string(domain));
  if (stable < max_order && !opts.truncate_unstable)
    throw StabilityError("orthonormality lost above order " + std::to_string(stable) + " for P=" + std::to_string(p) +
                         ", L=" + std::to_string(domain));
  rows.resize(static_cast<std::size_t>(stable + 1));

  PolynomialTable table;
  table.p = p;
  table.domain = domain;
  table.max_order = stable;
  table.requested_order = max_order;
  table.deviation = dev;
  table.values = std::move(rows);
  return table;
}

// Direct evaluation through the terminating 2F1 series and the closed-form
// norm. Kept in extended precision; used to cross-check the recurrence.
inline double eval_hypergeometric_reference(int l, int z, double p, int domain) {
  if (!(p > 0.0 && p < 1.0)) throw RangeError("P must lie strictly inside (0,1)");
  if (l < 0 || l > domain) throw OrderError("order outside 0..L");
  if (z < 0 || z > domain) throw RangeError("grid point outside 0..L");
  using real = long double;
  const real P = p;
  const real L = domain;

  const real log_mass = std::lgamma(L + 1) - std::lgamma(real(z) + 1) - std::lgamma(L - z + 1) +
                        z * std::log(P) + (L - z) * std::log1p(-P);
  const real mass = std::exp(log_mass);

  // (-1)^l ((1-P)/P)^l * l! / (-L)_l ; the sign factors cancel.
  real norm = 1;
  for (int k = 0; k < l; ++k) norm *= (1 - P) / P * real(k + 1) / (L - k);

  real term = 1;
  real series = 1;
  for (int k = 0; k < l; ++k) {
    term *= real(k - l) * real(k - z) / (real(k - domain) * real(k + 1) * P);
    series += term;
  }
  return static_cast<double>(std::sqrt(mass / norm) * series);
}

// Sign changes across a table row, skipping exact zeros.
inline int sign_change_count(std::span<const double> row) {
  int count = 0;
  double last = 0.0;
  for (double v : row) {
    if (v == 0.0) continue;
    if (last != 0.0 && (v > 0.0) != (last > 0.0)) ++count;
    last = v;
  }
  return count;
}

// Zero crossings located by linear interpolation between grid points.
inline std::vector<double> zero_locations(std::span<const double> row) {
  std::vector<double> zeros;
  std::ptrdiff_t last = -1;
  for (std::size_t z = 0; z < row.size(); ++z) {
    if (row[z] == 0.0) {
      continue;
    }
    if (last >= 0 && (row[z] > 0.0) != (row[static_cast<std::size_t>(last)] > 0.0)) {
      const double a = row[static_cast<std::size_t>(last)];
      const double b = row[z];
      zeros.push_back(static_cast<double>(last) + (static_cast<double>(z) - static_cast<double>(last)) * a / (a - b));
    }
    last = static_cast<std::ptrdiff_t>(z);
  }
  return zeros;
}

// Coefficients c_{n,m,config} for an ordered set of configs and orders,
// stored config-major: values[config * orders.size() + order].
struct CoefficientSet {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<SpatialConfig> configs;
  std::vector<OrderPair> orders;
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }
  double at(std::size_t config, std::size_t order) const { return values[config * orders.size() + order]; }
  double& at(std::size_t config, std::size_t order) { return values[config * orders.size() + order]; }

  double find(int n, int m, const SpatialConfig& cfg) const {
    const auto ci = std::find(configs.begin(), configs.end(), cfg);
    const auto oi = std::find(orders.begin(), orders.end(), OrderPair{n, m});
    if (ci == configs.end() || oi == orders.end()) throw RangeError("coefficient key not present");
    return at(static_cast<std::size_t>(ci - configs.begin()), static_cast<std::size_t>(oi - orders.begin()));
  }
};

// Precomputed separable basis for one image size, a list of spatial
// configs and an order mask. Immutable after construction.
class Decomposer {
 public:
  Decomposer(std::size_t width, std::size_t height, std::vector<SpatialConfig> configs, std::vector<OrderPair> orders,
             const TableOptions& opts = {})
      : width_(width), height_(height), configs_(std::move(configs)), orders_(std::move(orders)) {
    if (width < 2 || height < 2) throw ShapeError("image must be at least 2x2");
    if (configs_.empty()) throw ConfigError("no spatial configs");
    if (orders_.empty()) throw ConfigError("empty order mask");
    for (const auto& o : orders_) {
      if (o.n < 0 || o.m < 0) throw OrderError("negative frequency order");
      max_n_ = std::max(max_n_, o.n);
      max_m_ = std::max(max_m_, o.m);
    }
    const int lx = static_cast<int>(width) - 1;
    const int ly = static_cast<int>(height) - 1;
    if (max_n_ > lx || max_m_ > ly)
      throw OrderError("order mask exceeds image-size capability (" + std::to_string(lx) + ", " + std::to_string(ly) + ")");
    for (const auto& cfg : configs_) {
      cfg.validate();
      auto tx = build_polynomial_table(cfg.px, lx, max_n_, opts);
      auto ty = build_polynomial_table(cfg.py, ly, max_m_, opts);
      if (tx.max_order < max_n_ || ty.max_order < max_m_)
        throw OrderError("order mask exceeds the stable range of the polynomial table");
      x_tables_.push_back(std::move(tx));
      y_tables_.push_back(std::move(ty));
    }
  }

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }
  int max_n() const noexcept { return max_n_; }
  int max_m() const noexcept { return max_m_; }
  const std::vector<SpatialConfig>& configs() const noexcept { return configs_; }
  const std::vector<OrderPair>& orders() const noexcept { return orders_; }
  const PolynomialTable& x_table(std::size_t c) const { return x_tables_[c]; }
  const PolynomialTable& y_table(std::size_t c) const { return y_tables_[c]; }

  // Dense (max_n+1) x (max_m+1) coefficient block for one config, row-major in n.
  std::vector<double> dense(const Image& img, std::size_t config) const {
    check_shape(img);
    const auto nx = static_cast<std::size_t>(max_n_ + 1);
    const auto ny = static_cast<std::size_t>(max_m_ + 1);
    const auto& tx = x_tables_[config];
    const auto& ty = y_tables_[config];
    // partial[n][y] = sum_x K_n(x) f(x, y)
    std::vector<double> partial(nx * height_);
    for (std::size_t n = 0; n < nx; ++n) {
      const auto kn = tx.row(static_cast<int>(n));
      for (std::size_t y = 0; y < height_; ++y)
        partial[n * height_ + y] = detail::dot(kn, std::span<const double>(img.pixels).subspan(y * width_, width_));
    }
    std::vector<double> out(nx * ny);
    for (std::size_t n = 0; n < nx; ++n) {
      const std::span<const double> pn(partial.data() + n * height_, height_);
      for (std::size_t m = 0; m < ny; ++m) out[n * ny + m] = detail::dot(pn, ty.row(static_cast<int>(m)));
    }
    return out;
  }

  // Inverse direction: sum_{n,m} block[n][m] K_n(x) K_m(y) over a dense block.
  Image synthesize(std::span<const double> block, std::size_t config) const {
    const auto nx = static_cast<std::size_t>(max_n_ + 1);
    const auto ny = static_cast<std::size_t>(max_m_ + 1);
    if (block.size() != nx * ny) throw ShapeError("coefficient block has the wrong size");
    const auto& tx = x_tables_[config];
    const auto& ty = y_tables_[config];
    // partial[n][y] = sum_m block[n][m] K_m(y)
    std::vector<double> partial(nx * height_, 0.0);
    for (std::size_t n = 0; n < nx; ++n)
      for (std::size_t m = 0; m < ny; ++m) {
        const double c = block[n * ny + m];
        if (c == 0.0) continue;
        const auto km = ty.row(static_cast<int>(m));
        for (std::size_t y = 0; y < height_; ++y) partial[n * height_ + y] += c * km[y];
      }
    Image out(width_, height_);
    for (std::size_t n = 0; n < nx; ++n) {
      const auto kn = tx.row(static_cast<int>(n));
      for (std::size_t y = 0; y < height_; ++y) {
        const double a = partial[n * height_ + y];
        if (a == 0.0) continue;
        for (std::size_t x = 0; x < width_; ++x) out.pixels[y * width_ + x] += a * kn[x];
      }
    }
    return out;
  }

  CoefficientSet decompose(const Image& img) const {
    CoefficientSet out;
    out.width = width_;
    out.height = height_;
    out.configs = configs_;
    out.orders = orders_;
    out.values.resize(configs_.size() * orders_.size());
    const auto ny = static_cast<std::size_t>(max_m_ + 1);
    for (std::size_t c = 0; c < configs_.size(); ++c) {
      const auto block = dense(img, c);
      for (std::size_t k = 0; k < orders_.size(); ++k)
        out.values[c * orders_.size() + k] =
            block[static_cast<std::size_t>(orders_[k].n) * ny + static_cast<std::size_t>(orders_[k].m)];
    }
    return out;
  }

 private:
  void check_shape(const Image& img) const {
    if (img.width != width_ || img.height != height_) throw ShapeError("image size does not match decomposer");
  }

  std::size_t width_;
  std::size_t height_;
  std::vector<SpatialConfig> configs_;
  std::vector<OrderPair> orders_;
  int max_n_ = 0;
  int max_m_ = 0;
  std::vector<PolynomialTable> x_tables_;
  std::vector<PolynomialTable> y_tables_;
};

// The grid uses L = width - 1 (resp. height - 1) so grid points coincide with
// pixel indices.
inline CoefficientSet decompose(const Image& img, const SpatialConfig& cfg, const std::vector<OrderPair>& order_mask) {
  return Decomposer(img.width, img.height, {cfg}, order_mask).decompose(img);
}

// Inverse transform from a complete order set of a single config.
inline Image reconstruct(const CoefficientSet& coeffs, std::size_t config = 0) {
  if (config >= coeffs.configs.size()) throw IncompleteError("config index out of range");
  const int max_n = static_cast<int>(coeffs.width) - 1;
  const int max_m = static_cast<int>(coeffs.height) - 1;
  const auto ny = static_cast<std::size_t>(max_m + 1);
  std::vector<double> block(static_cast<std::size_t>(max_n + 1) * ny, 0.0);
  std::vector<char> seen(block.size(), 0);
  for (std::size_t k = 0; k < coeffs.orders.size(); ++k) {
    const auto& o = coeffs.orders[k];
    if (o.n > max_n || o.m > max_m) continue;
    const auto idx = static_cast<std::size_t>(o.n) * ny + static_cast<std::size_t>(o.m);
    block[idx] = coeffs.at(config, k);
    seen[idx] = 1;
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end())
    throw IncompleteError("reconstruction needs every order n < width, m < height");
  const Decomposer basis(coeffs.width, coeffs.height, {coeffs.configs[config]},
                         {OrderPair{max_n, max_m}});
  return basis.synthesize(block, 0);
}

}  // namespace krawdetect
