#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "krawdetect/features.hpp"
#include "krawdetect/keyed_selection.hpp"
#include "krawdetect/krawtchouk.hpp"

namespace krawdetect {

struct SuiteResult {
  std::string name;
  bool passed = false;
  double worst = 0.0;  // largest observed error
  double tolerance = 0.0;
};

inline const std::vector<double>& spatial_grid() {
  static const std::vector<double> g{0.25, 0.375, 0.5, 0.625, 0.75};
  return g;
}

inline Image random_image(std::size_t w, std::size_t h, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  SplitMix64 rng(seed);
  Image img(w, h);
  for (double& p : img.pixels) p = rng.uniform(lo, hi);
  return img;
}

inline SuiteResult selftest_orthonormality(int domain = 27, int max_order = 20) {
  SuiteResult r{"orthonormality", false, 0.0, 1e-8};
  for (double p : spatial_grid()) r.worst = std::max(r.worst, orthonormality_deviation(p, domain, max_order));
  r.passed = r.worst < r.tolerance;
  return r;
}

inline SuiteResult selftest_oracle(int max_l = 12, int max_domain = 32) {
  SuiteResult r{"oracle", false, 0.0, 1e-9};
  for (double p : {0.25, 0.5, 0.75})
    for (int domain = 1; domain <= max_domain; ++domain) {
      const int top = std::min(max_l, domain);
      const auto t = build_polynomial_table(p, domain, top);
      for (int l = 0; l <= top; ++l)
        for (int z = 0; z <= domain; ++z)
          r.worst = std::max(r.worst, std::abs(t(l, z) - eval_hypergeometric_reference(l, z, p, domain)));
    }
  r.passed = r.worst < r.tolerance;
  return r;
}

// Full-order decomposition followed by synthesis, RMSE per image.
inline SuiteResult selftest_reconstruction(std::size_t count = 20, std::size_t size = 28) {
  SuiteResult r{"reconstruction", false, 0.0, 1e-8};
  const int l = static_cast<int>(size) - 1;
  for (std::size_t i = 0; i < count; ++i) {
    const double p = spatial_grid()[i % spatial_grid().size()];
    const double q = spatial_grid()[(i / spatial_grid().size()) % spatial_grid().size()];
    const Decomposer dec(size, size, {{p, q}}, full_order_set(l, l));
    const auto img = random_image(size, size, 0x5EED0000u + i);
    const auto back = dec.synthesize(dec.dense(img, 0), 0);
    double se = 0.0;
    for (std::size_t k = 0; k < img.size(); ++k) se += (img.pixels[k] - back.pixels[k]) * (img.pixels[k] - back.pixels[k]);
    r.worst = std::max(r.worst, std::sqrt(se / static_cast<double>(img.size())));
  }
  r.passed = r.worst < r.tolerance;
  return r;
}

// F(x + d) - F(x) - F(d) on coefficients and on raw-mode band features.
inline SuiteResult selftest_linearity(std::size_t count = 20, std::size_t size = 28) {
  SuiteResult r{"linearity", false, 0.0, 1e-12};
  const auto plan = sample_plan(DetectorKey{0x11EA}, CandidateGrid::defaults(size, size, 20));
  const auto partition = partition_bands(size, size, 8);
  const FeatureExtractor raw(plan, partition, IntegrationMode::Raw);
  const auto& dec = raw.decomposer();
  for (std::size_t i = 0; i < count; ++i) {
    const auto x = random_image(size, size, 0xA000u + i);
    const auto d = random_image(size, size, 0xB000u + i, -0.1, 0.1);
    const auto cx = dec.decompose(x), cd = dec.decompose(d), cs = dec.decompose(x + d);
    for (std::size_t k = 0; k < cs.size(); ++k)
      r.worst = std::max(r.worst, std::abs(cs.values[k] - cx.values[k] - cd.values[k]));
    const auto fx = raw(x), fd = raw(d), fs = raw(x + d);
    for (std::size_t k = 0; k < fs.size(); ++k)
      r.worst = std::max(r.worst, std::abs(fs.values[k] - fx.values[k] - fd.values[k]));
  }
  r.passed = r.worst < r.tolerance;
  return r;
}

inline std::vector<SuiteResult> run_selftest() {
  return {selftest_orthonormality(), selftest_oracle(), selftest_reconstruction(), selftest_linearity()};
}

inline std::string format_suite(const SuiteResult& s) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-15s %s  worst=%.3e  tol=%.0e", s.name.c_str(), s.passed ? "pass" : "FAIL", s.worst,
                s.tolerance);
  return buf;
}

}  // namespace krawdetect
