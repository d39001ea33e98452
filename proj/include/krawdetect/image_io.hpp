#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "krawdetect/image.hpp"

namespace krawdetect {

inline constexpr std::uint32_t kIdxImageMagic = 2051;
inline constexpr std::uint32_t kIdxLabelMagic = 2049;

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                               const std::string& what) {
  if (offset + 4 > bytes.size()) throw TruncationError(what + ": header truncated");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                              static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b.data(), 4);
}

inline unsigned char quantize_byte(double p) {
  return static_cast<unsigned char>(std::lround(std::clamp(p, 0.0, 1.0) * 255.0));
}

}  // namespace detail

// Images-only IDX (magic 2051): count x rows x cols unsigned bytes.
inline std::vector<Image> load_idx_images(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  const std::string what = path.string();
  const auto magic = detail::read_be32(bytes, 0, what);
  if (magic != kIdxImageMagic)
    throw FormatError(what + ": expected image magic 2051, found " + std::to_string(magic));
  const std::size_t count = detail::read_be32(bytes, 4, what);
  const std::size_t rows = detail::read_be32(bytes, 8, what);
  const std::size_t cols = detail::read_be32(bytes, 12, what);
  const std::size_t per_image = rows * cols;
  if (bytes.size() < 16 + count * per_image) throw TruncationError(what + ": pixel payload truncated");

  std::vector<Image> images;
  images.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<double> px(per_image);
    const auto* src = bytes.data() + 16 + i * per_image;
    for (std::size_t k = 0; k < per_image; ++k) px[k] = src[k] / 255.0;
    images.emplace_back(cols, rows, std::move(px));
  }
  return images;
}

inline std::vector<int> load_idx_labels(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  const std::string what = path.string();
  const auto magic = detail::read_be32(bytes, 0, what);
  if (magic != kIdxLabelMagic)
    throw FormatError(what + ": expected label magic 2049, found " + std::to_string(magic));
  const std::size_t count = detail::read_be32(bytes, 4, what);
  if (bytes.size() < 8 + count) throw TruncationError(what + ": label payload truncated");
  return {bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(count)};
}

inline Dataset load_idx_pair(const std::filesystem::path& images_path,
                             const std::filesystem::path& labels_path) {
  auto images = load_idx_images(images_path);
  auto labels = load_idx_labels(labels_path);
  if (images.size() != labels.size())
    throw ConsistencyError("image count " + std::to_string(images.size()) + " != label count " +
                           std::to_string(labels.size()));
  Dataset ds;
  ds.name = images_path.filename().string();
  for (std::size_t i = 0; i < images.size(); ++i) {
    ds.examples.push_back({std::move(images[i]), labels[i]});
    ds.num_classes = std::max(ds.num_classes, labels[i] + 1);
  }
  return ds;
}

inline void write_idx_images(const std::filesystem::path& path, const std::vector<Image>& images) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const std::size_t w = images.empty() ? 0 : images.front().width;
  const std::size_t h = images.empty() ? 0 : images.front().height;
  detail::write_be32(out, kIdxImageMagic);
  detail::write_be32(out, static_cast<std::uint32_t>(images.size()));
  detail::write_be32(out, static_cast<std::uint32_t>(h));
  detail::write_be32(out, static_cast<std::uint32_t>(w));
  for (const auto& img : images) {
    if (img.width != w || img.height != h) throw ConsistencyError("IDX images must share one size");
    for (double p : img.pixels) out.put(static_cast<char>(detail::quantize_byte(p)));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

inline void write_idx_labels(const std::filesystem::path& path, const std::vector<int>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  detail::write_be32(out, kIdxLabelMagic);
  detail::write_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) {
    if (l < 0 || l > 255) throw RangeError("IDX labels must fit in one byte");
    out.put(static_cast<char>(l));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

// Pixels are quantized to 8 bits; content that already sits on the k/255
// grid round-trips bit-exactly.
inline void write_idx_pair(const Dataset& ds, const std::filesystem::path& images_path,
                           const std::filesystem::path& labels_path) {
  std::vector<Image> images;
  std::vector<int> labels;
  images.reserve(ds.size());
  labels.reserve(ds.size());
  for (const auto& ex : ds.examples) {
    images.push_back(ex.image);
    labels.push_back(ex.label);
  }
  write_idx_images(images_path, images);
  write_idx_labels(labels_path, labels);
}

// Binary PGM ("P5") with maxval <= 255.
inline Image load_pgm(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  std::size_t pos = 0;
  auto next_token = [&]() {
    std::string tok;
    while (pos < bytes.size()) {
      const char c = static_cast<char>(bytes[pos]);
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos;
      } else {
        break;
      }
    }
    while (pos < bytes.size() && !std::isspace(bytes[pos])) tok.push_back(static_cast<char>(bytes[pos++]));
    return tok;
  };
  auto next_int = [&](const char* field) {
    const auto tok = next_token();
    try {
      std::size_t used = 0;
      const long v = std::stol(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      return v;
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": bad PGM " + field + " '" + tok + "'");
    }
  };

  if (next_token() != "P5") throw FormatError(path.string() + ": not a binary PGM (P5)");
  const long w = next_int("width");
  const long h = next_int("height");
  const long maxval = next_int("maxval");
  if (maxval <= 0 || maxval > 255) throw RangeError(path.string() + ": maxval must be in 1..255");
  if (w < 2 || h < 2) throw FormatError(path.string() + ": image must be at least 2x2");
  ++pos;  // single whitespace before the raster
  const auto n = static_cast<std::size_t>(w * h);
  if (bytes.size() < pos + n) throw TruncationError(path.string() + ": PGM raster truncated");
  std::vector<double> px(n);
  for (std::size_t k = 0; k < n; ++k) px[k] = bytes[pos + k] / static_cast<double>(maxval);
  return Image(static_cast<std::size_t>(w), static_cast<std::size_t>(h), std::move(px));
}

inline void write_pgm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  for (double p : img.pixels) out.put(static_cast<char>(detail::quantize_byte(p)));
  if (!out) throw IoError("write failed for " + path.string());
}

// ITU-R BT.601 luma.
inline double rgb_to_gray(double r, double g, double b) {
  for (double c : {r, g, b})
    if (!(c >= 0.0 && c <= 1.0)) throw RangeError("color channel outside [0,1]");
  return std::clamp(0.299 * r + 0.587 * g + 0.114 * b, 0.0, 1.0);
}

}  // namespace krawdetect
