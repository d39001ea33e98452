#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "krawdetect/error.hpp"
#include "krawdetect/krawtchouk.hpp"

namespace krawdetect {

// SplitMix64. Bit-exact across platforms, which std:: engines plus
// std:: distributions are not.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next() noexcept {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // value / 2^64, in [0, 1)
  double uniform() noexcept { return std::ldexp(static_cast<double>(next() >> 11), -53); }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Box-Muller; one fresh pair per call.
  double normal() noexcept {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Uniform index in [0, n).
  std::size_t below(std::size_t n) noexcept {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

 private:
  std::uint64_t state_;
};

template <typename T>
void shuffle_in_place(std::vector<T>& v, SplitMix64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

struct DetectorKey {
  std::uint64_t seed = 0;
  friend bool operator==(const DetectorKey&, const DetectorKey&) = default;
};

inline SplitMix64 derive_stream(const DetectorKey& key) noexcept { return SplitMix64(key.seed); }

// Audit hash of the key. Distinct from the plan stream and not a plain
// bijection of the seed; not meant as cryptographic protection.
inline std::uint64_t key_fingerprint(const DetectorKey& key) noexcept {
  SplitMix64 s(key.seed ^ 0x6B72617764657465ULL);
  const std::uint64_t a = s.next();
  const std::uint64_t b = s.next();
  return a ^ ((b << 17) | (b >> 47)) ^ (a >> 13);
}

inline std::string to_hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

inline std::uint64_t parse_hex64(const std::string& text) {
  std::string s = text;
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
  if (s.rfind("0x", 0) == 0 || s.rfind("0X", 0) == 0) s = s.substr(2);
  if (s.empty() || s.size() > 16) throw FormatError("expected a hex-encoded 64-bit value");
  for (char c : s)
    if (!std::isxdigit(static_cast<unsigned char>(c))) throw FormatError("expected a hex-encoded 64-bit value");
  return std::stoull(s, nullptr, 16);
}

inline DetectorKey read_key_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open key file " + path.string());
  std::string line;
  std::getline(in, line);
  return {parse_hex64(line)};
}

inline void write_key_file(const std::filesystem::path& path, const DetectorKey& key) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write key file " + path.string());
  out << to_hex(key.seed) << '\n';
}

inline DetectorKey generate_key() {
  std::random_device rd;
  return {(static_cast<std::uint64_t>(rd()) << 32) ^ rd()};
}

struct CandidateGrid {
  std::vector<SpatialConfig> spatial_candidates;
  std::vector<OrderPair> order_candidates;
  double blocking_prob = 0.5;
  std::size_t min_retained_configs = 4;

  void validate() const {
    if (spatial_candidates.empty()) throw ConfigError("no spatial candidates");
    if (order_candidates.empty()) throw ConfigError("no order candidates");
    if (!(blocking_prob >= 0.0 && blocking_prob < 1.0)) throw ConfigError("blocking_prob must lie in [0,1)");
    if (min_retained_configs < 1 || min_retained_configs > spatial_candidates.size())
      throw ConfigError("min_retained_configs must be in 1..|spatial_candidates|");
    for (const auto& c : spatial_candidates) c.validate();
  }

  // Px, Py in {0.25, 0.375, 0.5, 0.625, 0.75}; all orders up to max_order
  // per axis.
  static CandidateGrid defaults(std::size_t width, std::size_t height, int max_order = 48) {
    CandidateGrid g;
    const double ps[] = {0.25, 0.375, 0.5, 0.625, 0.75};
    for (double px : ps)
      for (double py : ps) g.spatial_candidates.push_back({px, py});
    const int mx = std::min(static_cast<int>(width) - 1, max_order);
    const int my = std::min(static_cast<int>(height) - 1, max_order);
    g.order_candidates = full_order_set(mx, my);
    return g;
  }
};

struct SelectionPlan {
  std::vector<SpatialConfig> retained_configs;
  std::vector<OrderPair> order_mask;
  std::uint64_t key_fingerprint = 0;

  friend bool operator==(const SelectionPlan&, const SelectionPlan&) = default;
};

// One stream per key: spatial candidates draw first, then order candidates,
// each in candidate order. A draw u < blocking_prob blocks the candidate.
inline SelectionPlan sample_plan(const DetectorKey& key, const CandidateGrid& grid) {
  grid.validate();
  auto stream = derive_stream(key);

  auto draw_mask = [&](std::size_t count, std::size_t floor) {
    std::vector<char> keep(count);
    std::size_t kept = 0;
    for (std::size_t i = 0; i < count; ++i) {
      keep[i] = stream.uniform() >= grid.blocking_prob;
      kept += keep[i] ? 1 : 0;
    }
    for (std::size_t i = 0; i < count && kept < floor; ++i)
      if (!keep[i]) {
        keep[i] = 1;
        ++kept;
      }
    return keep;
  };

  const auto config_keep = draw_mask(grid.spatial_candidates.size(), grid.min_retained_configs);
  const auto order_keep = draw_mask(grid.order_candidates.size(), 1);

  SelectionPlan plan;
  for (std::size_t i = 0; i < config_keep.size(); ++i)
    if (config_keep[i]) plan.retained_configs.push_back(grid.spatial_candidates[i]);
  for (std::size_t i = 0; i < order_keep.size(); ++i)
    if (order_keep[i]) plan.order_mask.push_back(grid.order_candidates[i]);
  plan.key_fingerprint = key_fingerprint(key);
  return plan;
}

}  // namespace krawdetect
