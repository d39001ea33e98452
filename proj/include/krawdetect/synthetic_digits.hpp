#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "krawdetect/image.hpp"
#include "krawdetect/keyed_selection.hpp"
#include "krawdetect/parallel.hpp"

namespace krawdetect {

// Handwriting-like 28x28 digits rendered from stroke templates with random
// affine jitter and stroke width, quantized to the 8-bit grid like MNIST.
// Used when no IDX dataset is supplied.
namespace digits_detail {

struct Pt {
  double x, y;
};
using Stroke = std::vector<Pt>;

inline Stroke ellipse(double cx, double cy, double rx, double ry, int segments = 18) {
  Stroke s;
  for (int i = 0; i <= segments; ++i) {
    const double t = 6.283185307179586 * i / segments;
    s.push_back({cx + rx * std::sin(t), cy - ry * std::cos(t)});
  }
  return s;
}

inline const std::array<std::vector<Stroke>, 10>& templates() {
  static const std::array<std::vector<Stroke>, 10> t = {{
      {ellipse(0.5, 0.5, 0.24, 0.36)},
      {{{0.38, 0.27}, {0.52, 0.14}, {0.52, 0.86}}},
      {{{0.27, 0.3}, {0.36, 0.17}, {0.5, 0.13}, {0.64, 0.17}, {0.71, 0.3}, {0.66, 0.45}, {0.27, 0.85}, {0.76, 0.85}}},
      {{{0.28, 0.2}, {0.45, 0.13}, {0.64, 0.17}, {0.69, 0.3}, {0.6, 0.44}, {0.44, 0.48}},
       {{0.44, 0.48}, {0.62, 0.52}, {0.71, 0.65}, {0.68, 0.79}, {0.53, 0.87}, {0.3, 0.82}}},
      {{{0.62, 0.86}, {0.62, 0.13}, {0.24, 0.62}, {0.78, 0.62}}},
      {{{0.71, 0.15}, {0.34, 0.15}, {0.3, 0.47}, {0.5, 0.42}, {0.67, 0.5}, {0.71, 0.67}, {0.62, 0.82}, {0.45, 0.87}, {0.28, 0.8}}},
      {{{0.66, 0.15}, {0.46, 0.25}, {0.33, 0.45}, {0.29, 0.65}, {0.36, 0.82}, {0.5, 0.87}, {0.65, 0.8}, {0.7, 0.65}, {0.6, 0.52}, {0.45, 0.5}, {0.32, 0.6}}},
      {{{0.26, 0.15}, {0.75, 0.15}, {0.44, 0.87}}},
      {ellipse(0.5, 0.31, 0.17, 0.17), ellipse(0.5, 0.67, 0.21, 0.2)},
      {ellipse(0.5, 0.34, 0.19, 0.19), {{0.69, 0.34}, {0.66, 0.6}, {0.6, 0.87}}},
  }};
  return t;
}

inline double segment_distance(Pt p, Pt a, Pt b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace digits_detail

inline Image render_digit(int digit, std::uint64_t seed, std::size_t size = 28) {
  using namespace digits_detail;
  SplitMix64 rng(seed);
  const double angle = rng.uniform(-0.22, 0.22);
  const double sx = rng.uniform(0.8, 1.05);
  const double sy = rng.uniform(0.85, 1.05);
  const double shear = rng.uniform(-0.2, 0.2);
  const double tx = rng.uniform(-0.05, 0.05);
  const double ty = rng.uniform(-0.04, 0.04);
  const double half_width = rng.uniform(0.045, 0.075) * static_cast<double>(size);
  const double peak = rng.uniform(0.85, 1.0);
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double scale = 0.72 * static_cast<double>(size);
  const double centre = 0.5 * static_cast<double>(size);

  std::vector<std::vector<Pt>> strokes;
  for (const auto& s : templates()[static_cast<std::size_t>(digit % 10)]) {
    std::vector<Pt> pts;
    for (const auto& p : s) {
      const double jx = p.x - 0.5 + rng.uniform(-0.02, 0.02);
      const double jy = p.y - 0.5 + rng.uniform(-0.02, 0.02);
      const double ux = sx * (jx + shear * jy), uy = sy * jy;
      pts.push_back({centre + scale * (ca * ux - sa * uy + tx), centre + scale * (sa * ux + ca * uy + ty)});
    }
    strokes.push_back(std::move(pts));
  }

  Image img(size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const Pt p{static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5};
      double d = std::numeric_limits<double>::infinity();
      for (const auto& s : strokes)
        for (std::size_t k = 0; k + 1 < s.size(); ++k) d = std::min(d, segment_distance(p, s[k], s[k + 1]));
      const double v = std::clamp(half_width + 0.5 - d, 0.0, 1.0) * peak;
      img.at(x, y) = std::round(v * 255.0) / 255.0;
    }
  return img;
}

// Balanced labels (i mod 10); example i uses its own seed so generation
// parallelizes without changing the output.
inline Dataset make_synthetic_digits(std::size_t count, std::uint64_t seed, std::size_t workers = 1,
                                     std::size_t size = 28) {
  Dataset ds;
  ds.name = "synthetic-digits";
  ds.num_classes = 10;
  ds.examples.resize(count);
  SplitMix64 base(seed);
  std::vector<std::uint64_t> seeds(count);
  for (auto& s : seeds) s = base.next();
  parallel_for(count, workers, [&](std::size_t i) {
    const int label = static_cast<int>(i % 10);
    ds.examples[i] = {render_digit(label, seeds[i], size), label};
  });
  return ds;
}

}  // namespace krawdetect
