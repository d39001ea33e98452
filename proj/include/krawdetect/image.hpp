#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "krawdetect/error.hpp"

namespace krawdetect {

// Row-major grayscale raster. Content images hold intensities in [0,1];
// perturbations reuse the same type with signed values.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), pixels(w * h, fill) {
    if (w < 2 || h < 2) throw ShapeError("image must be at least 2x2");
  }
  Image(std::size_t w, std::size_t h, std::vector<double> data) : width(w), height(h), pixels(std::move(data)) {
    if (w < 2 || h < 2) throw ShapeError("image must be at least 2x2");
    if (pixels.size() != w * h) throw ShapeError("pixel count does not match width*height");
  }

  std::size_t size() const noexcept { return pixels.size(); }
  double& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  double at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }

  bool same_shape(const Image& other) const noexcept {
    return width == other.width && height == other.height;
  }
  bool is_content() const noexcept {
    for (double p : pixels)
      if (!(p >= 0.0 && p <= 1.0)) return false;
    return true;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

inline Image operator+(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ShapeError("image shapes differ");
  Image out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.pixels[i] += b.pixels[i];
  return out;
}

inline Image operator-(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ShapeError("image shapes differ");
  Image out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.pixels[i] -= b.pixels[i];
  return out;
}

struct LabeledExample {
  Image image;
  int label = 0;
};

struct Dataset {
  std::string name;
  int num_classes = 0;
  std::vector<LabeledExample> examples;

  std::size_t size() const noexcept { return examples.size(); }
  bool empty() const noexcept { return examples.empty(); }
  std::size_t width() const { return examples.empty() ? 0 : examples.front().image.width; }
  std::size_t height() const { return examples.empty() ? 0 : examples.front().image.height; }

  // Shared shape and label range.
  void validate() const {
    for (const auto& ex : examples) {
      if (!ex.image.same_shape(examples.front().image))
        throw ConsistencyError("dataset '" + name + "' mixes image sizes");
      if (ex.label < 0 || ex.label >= num_classes)
        throw ConsistencyError("dataset '" + name + "' has a label outside [0, num_classes)");
    }
  }
};

}  // namespace krawdetect
