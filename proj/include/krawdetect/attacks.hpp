#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "krawdetect/error.hpp"
#include "krawdetect/image.hpp"
#include "krawdetect/keyed_selection.hpp"
#include "krawdetect/krawtchouk.hpp"

namespace krawdetect {

// Multinomial logistic regression over flattened pixels. Stands in for the
// victim classifier when crafting perturbations.
struct SurrogateModel {
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  std::vector<double> weights;  // num_classes x dim, row-major
  std::vector<double> biases;
  double train_accuracy = 0.0;

  std::vector<double> logits(std::span<const double> x) const {
    if (x.size() != dim) throw ShapeError("input dimension does not match surrogate");
    std::vector<double> z(biases);
    for (std::size_t k = 0; k < num_classes; ++k) {
      const double* w = weights.data() + k * dim;
      double s = 0.0;
      for (std::size_t i = 0; i < dim; ++i) s += w[i] * x[i];
      z[k] += s;
    }
    return z;
  }

  std::vector<double> probabilities(std::span<const double> x) const {
    auto z = logits(x);
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) sum += (v = std::exp(v - mx));
    for (double& v : z) v /= sum;
    return z;
  }

  // Ties resolve to the lowest class id.
  int classify(std::span<const double> x) const {
    const auto z = logits(x);
    return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
  }

  double loss(std::span<const double> x, int label) const {
    check_label(label);
    auto z = logits(x);
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - mx);
    return std::log(sum) + mx - z[static_cast<std::size_t>(label)];
  }

  // d CE / d x = W^T (softmax - onehot)
  std::vector<double> input_gradient(std::span<const double> x, int label) const {
    check_label(label);
    auto p = probabilities(x);
    p[static_cast<std::size_t>(label)] -= 1.0;
    std::vector<double> g(dim, 0.0);
    for (std::size_t k = 0; k < num_classes; ++k) {
      const double* w = weights.data() + k * dim;
      for (std::size_t i = 0; i < dim; ++i) g[i] += p[k] * w[i];
    }
    return g;
  }

  void check_label(int label) const {
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes)
      throw RangeError("label " + std::to_string(label) + " outside the surrogate's classes");
  }

  // Hash of the parameters for manifests.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&](double v) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xFF;
        h *= 0x100000001b3ULL;
      }
    };
    for (double w : weights) mix(w);
    for (double b : biases) mix(b);
    return h;
  }
};

struct SurrogateTrainConfig {
  int epochs = 100;
  double lr = 0.5;
  std::uint64_t seed = 0;
  double init_scale = 0.0;   // stddev of the seeded weight init
  double subsample = 1.0;    // seeded fraction of the dataset used

  friend bool operator==(const SurrogateTrainConfig&, const SurrogateTrainConfig&) = default;
};

struct SurrogateGradient {
  std::vector<double> weights;
  std::vector<double> biases;
};

// Mean cross-entropy and its parameter gradient over the given examples.
inline double surrogate_batch_gradient(const SurrogateModel& model, const Dataset& data,
                                       const std::vector<std::size_t>& rows, SurrogateGradient* grad) {
  if (grad) {
    grad->weights.assign(model.weights.size(), 0.0);
    grad->biases.assign(model.num_classes, 0.0);
  }
  double total = 0.0;
  for (std::size_t r : rows) {
    const auto& ex = data.examples[r];
    auto p = model.probabilities(ex.image.pixels);
    total += -std::log(std::max(p[static_cast<std::size_t>(ex.label)], 1e-300));
    if (!grad) continue;
    p[static_cast<std::size_t>(ex.label)] -= 1.0;
    for (std::size_t k = 0; k < model.num_classes; ++k) {
      double* gw = grad->weights.data() + k * model.dim;
      for (std::size_t i = 0; i < model.dim; ++i) gw[i] += p[k] * ex.image.pixels[i];
      grad->biases[k] += p[k];
    }
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  if (grad) {
    for (double& g : grad->weights) g *= inv;
    for (double& g : grad->biases) g *= inv;
  }
  return total * inv;
}

// Full-batch gradient descent on mean cross-entropy.
inline SurrogateModel train_surrogate(const Dataset& data, const SurrogateTrainConfig& cfg) {
  if (data.empty()) throw DataError("empty surrogate training set");
  if (cfg.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(cfg.subsample > 0.0 && cfg.subsample <= 1.0)) throw ConfigError("subsample must be in (0,1]");
  std::vector<int> seen;
  int max_label = 0;
  for (const auto& ex : data.examples) {
    if (ex.label < 0) throw RangeError("negative class label");
    max_label = std::max(max_label, ex.label);
    if (std::find(seen.begin(), seen.end(), ex.label) == seen.end()) seen.push_back(ex.label);
  }
  if (seen.size() < 2) throw DegenerateError("surrogate training needs at least two classes");

  SurrogateModel model;
  model.num_classes = static_cast<std::size_t>(std::max(data.num_classes, max_label + 1));
  model.dim = data.examples.front().image.size();
  model.weights.assign(model.num_classes * model.dim, 0.0);
  model.biases.assign(model.num_classes, 0.0);
  SplitMix64 rng(cfg.seed);
  if (cfg.init_scale > 0.0)
    for (double& w : model.weights) w = cfg.init_scale * rng.normal();

  std::vector<std::size_t> rows(data.size());
  std::iota(rows.begin(), rows.end(), 0);
  if (cfg.subsample < 1.0) {
    shuffle_in_place(rows, rng);
    rows.resize(std::max<std::size_t>(1, static_cast<std::size_t>(cfg.subsample * static_cast<double>(rows.size()))));
    std::sort(rows.begin(), rows.end());
  }

  SurrogateGradient grad;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    surrogate_batch_gradient(model, data, rows, &grad);
    for (std::size_t i = 0; i < model.weights.size(); ++i) model.weights[i] -= cfg.lr * grad.weights[i];
    for (std::size_t k = 0; k < model.num_classes; ++k) model.biases[k] -= cfg.lr * grad.biases[k];
  }
  std::size_t correct = 0;
  for (std::size_t r : rows) correct += model.classify(data.examples[r].image.pixels) == data.examples[r].label ? 1 : 0;
  model.train_accuracy = static_cast<double>(correct) / static_cast<double>(rows.size());
  return model;
}

enum class AttackKind { Fgsm, Bim, Pgd };

inline const char* to_string(AttackKind k) {
  switch (k) {
    case AttackKind::Fgsm: return "fgsm";
    case AttackKind::Bim: return "bim";
    case AttackKind::Pgd: return "pgd";
  }
  return "?";
}

inline AttackKind parse_attack_kind(const std::string& s) {
  if (s == "fgsm") return AttackKind::Fgsm;
  if (s == "bim") return AttackKind::Bim;
  if (s == "pgd") return AttackKind::Pgd;
  throw ConfigError("unknown attack kind '" + s + "' (expected fgsm, bim or pgd)");
}

struct PerturbationSpec {
  AttackKind kind = AttackKind::Fgsm;
  double epsilon = 0.2;
  int steps = 1;
  double alpha = 0.2;
  bool rand_init = false;
  std::uint64_t seed = 0;
  bool quantize = false;  // snap x + delta to the 8-bit grid

  void validate() const {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw RangeError("epsilon must lie in [0,1]");
    if (steps < 1) throw ConfigError("steps must be >= 1");
    if (!(alpha >= 0.0) || alpha > epsilon + 1e-15) throw ConfigError("alpha must lie in [0, epsilon]");
    if (kind == AttackKind::Fgsm && steps != 1) throw ConfigError("fgsm takes exactly one step");
  }

  static PerturbationSpec fgsm(double eps) { return {AttackKind::Fgsm, eps, 1, eps, false, 0, false}; }
  static PerturbationSpec bim(double eps, int steps, double alpha) {
    return {AttackKind::Bim, eps, steps, alpha, false, 0, false};
  }
  static PerturbationSpec pgd(double eps, int steps, double alpha, std::uint64_t seed = 0) {
    return {AttackKind::Pgd, eps, steps, alpha, true, seed, false};
  }

  friend bool operator==(const PerturbationSpec&, const PerturbationSpec&) = default;
};

namespace detail {

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Keep delta in the eps-ball and x + delta in the pixel box.
inline void project(std::vector<double>& delta, const std::vector<double>& x, double eps) {
  for (std::size_t i = 0; i < delta.size(); ++i) {
    const double d = std::clamp(delta[i], -eps, eps);
    delta[i] = std::clamp(x[i] + d, 0.0, 1.0) - x[i];
  }
}

// Rounds x + delta onto k/255 toward x so the budget still holds.
inline void quantize_toward_source(std::vector<double>& delta, const std::vector<double>& x) {
  for (std::size_t i = 0; i < delta.size(); ++i) {
    const double target = (x[i] + delta[i]) * 255.0;
    const double q = (delta[i] >= 0.0 ? std::floor(target + 1e-9) : std::ceil(target - 1e-9)) / 255.0;
    delta[i] = std::clamp(q, 0.0, 1.0) - x[i];
  }
}

inline std::vector<double> initial_delta(const Image& img, const PerturbationSpec& spec) {
  std::vector<double> delta(img.size(), 0.0);
  if (spec.rand_init) {
    SplitMix64 rng(spec.seed);
    for (double& d : delta) d = rng.uniform(-spec.epsilon, spec.epsilon);
    project(delta, img.pixels, spec.epsilon);
  }
  return delta;
}

}  // namespace detail

// delta = clip(x + eps * sign(grad CE)) - x
inline Image attack_fgsm(const SurrogateModel& model, const Image& img, int label, const PerturbationSpec& spec) {
  spec.validate();
  if (spec.kind != AttackKind::Fgsm) throw ConfigError("attack_fgsm needs an fgsm spec");
  model.check_label(label);
  const auto g = model.input_gradient(img.pixels, label);
  std::vector<double> delta(img.size());
  for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = spec.epsilon * detail::sign(g[i]);
  detail::project(delta, img.pixels, spec.epsilon);
  if (spec.quantize) detail::quantize_toward_source(delta, img.pixels);
  return Image(img.width, img.height, std::move(delta));
}

// Iterated sign steps with projection. Bim and pgd share this path; pgd
// starts from a seeded uniform point in the eps-ball.
inline Image attack_pgd(const SurrogateModel& model, const Image& img, int label, const PerturbationSpec& spec) {
  spec.validate();
  if (spec.kind == AttackKind::Fgsm) throw ConfigError("attack_pgd needs a bim or pgd spec");
  model.check_label(label);
  auto delta = detail::initial_delta(img, spec);
  std::vector<double> xd(img.size());
  for (int s = 0; s < spec.steps; ++s) {
    for (std::size_t i = 0; i < xd.size(); ++i) xd[i] = img.pixels[i] + delta[i];
    const auto g = model.input_gradient(xd, label);
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] += spec.alpha * detail::sign(g[i]);
    detail::project(delta, img.pixels, spec.epsilon);
  }
  if (spec.quantize) detail::quantize_toward_source(delta, img.pixels);
  return Image(img.width, img.height, std::move(delta));
}

inline Image attack(const SurrogateModel& model, const Image& img, int label, const PerturbationSpec& spec) {
  return spec.kind == AttackKind::Fgsm ? attack_fgsm(model, img, label, spec) : attack_pgd(model, img, label, spec);
}

// Coefficient identifiers (n, m, config) the adversary wants to keep quiet.
struct FeatureSubset {
  struct Key {
    int n = 0;
    int m = 0;
    SpatialConfig config;
    auto operator<=>(const Key&) const = default;
  };
  std::vector<Key> keys;
};

// Evaluates F_subset(delta), its energy and the energy gradient. Keys are
// grouped per config; within a config the block is computed densely.
class SubsetProjector {
 public:
  SubsetProjector(std::size_t width, std::size_t height, const FeatureSubset& subset) {
    if (subset.keys.empty()) throw ConfigError("empty feature subset");
    std::map<SpatialConfig, std::vector<OrderPair>> grouped;
    for (const auto& k : subset.keys) grouped[k.config].push_back({k.n, k.m});
    for (auto& [cfg, orders] : grouped) {
      std::sort(orders.begin(), orders.end());
      orders.erase(std::unique(orders.begin(), orders.end()), orders.end());
      Group g{Decomposer(width, height, {cfg}, orders), {}};
      const auto ny = static_cast<std::size_t>(g.basis.max_m() + 1);
      for (const auto& o : orders) g.index.push_back(static_cast<std::size_t>(o.n) * ny + static_cast<std::size_t>(o.m));
      groups_.push_back(std::move(g));
    }
  }

  std::size_t size() const {
    std::size_t s = 0;
    for (const auto& g : groups_) s += g.index.size();
    return s;
  }

  std::vector<double> coefficients(const Image& delta) const {
    std::vector<double> out;
    for (const auto& g : groups_) {
      const auto block = g.basis.dense(delta, 0);
      for (std::size_t idx : g.index) out.push_back(block[idx]);
    }
    return out;
  }

  double energy(const Image& delta) const {
    double e = 0.0;
    for (double c : coefficients(delta)) e += c * c;
    return e;
  }

  // Gradient of sum c^2 with respect to the pixels of delta.
  Image energy_gradient(const Image& delta) const {
    Image grad(delta.width, delta.height);
    for (const auto& g : groups_) {
      const auto block = g.basis.dense(delta, 0);
      std::vector<double> masked(block.size(), 0.0);
      for (std::size_t idx : g.index) masked[idx] = 2.0 * block[idx];
      const auto part = g.basis.synthesize(masked, 0);
      for (std::size_t i = 0; i < grad.size(); ++i) grad.pixels[i] += part.pixels[i];
    }
    return grad;
  }

 private:
  struct Group {
    Decomposer basis;
    std::vector<std::size_t> index;
  };
  std::vector<Group> groups_;
};

struct DefenseAwareSpec {
  PerturbationSpec base;
  FeatureSubset subset;
  double penalty_weight = 0.0;         // weight of the subset-energy penalty
  double energy_threshold = 0.0;       // lambda: ||F_subset(delta)|| < lambda is reported
  double correlation_threshold = 0.0;  // eta: rho(F(old), F(new)) < eta is reported
};

struct DefenseAwareResult {
  Image delta;
  double subset_energy = 0.0;  // ||F_subset(delta)||
  bool below_energy_threshold = false;
};

// PGD ascent on CE(x + delta) - penalty_weight * ||F_subset(delta)||^2.
inline DefenseAwareResult attack_defense_aware(const SurrogateModel& model, const Image& img, int label,
                                               const DefenseAwareSpec& spec, const SubsetProjector& projector) {
  const auto& base = spec.base;
  base.validate();
  if (spec.subset.keys.empty()) throw ConfigError("defense-aware attack needs a non-empty subset");
  if (spec.penalty_weight < 0.0) throw ConfigError("penalty_weight must be >= 0");
  model.check_label(label);
  auto delta = detail::initial_delta(img, base);
  std::vector<double> xd(img.size());
  for (int s = 0; s < base.steps; ++s) {
    for (std::size_t i = 0; i < xd.size(); ++i) xd[i] = img.pixels[i] + delta[i];
    auto g = model.input_gradient(xd, label);
    if (spec.penalty_weight > 0.0) {
      const auto pg = projector.energy_gradient(Image(img.width, img.height, delta));
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= spec.penalty_weight * pg.pixels[i];
    }
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] += base.alpha * detail::sign(g[i]);
    detail::project(delta, img.pixels, base.epsilon);
  }
  if (base.quantize) detail::quantize_toward_source(delta, img.pixels);
  DefenseAwareResult out;
  out.delta = Image(img.width, img.height, std::move(delta));
  out.subset_energy = std::sqrt(projector.energy(out.delta));
  out.below_energy_threshold = out.subset_energy < spec.energy_threshold;
  return out;
}

// Pearson correlation of two coefficient vectors.
inline double feature_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("correlation needs equal non-zero lengths");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) throw DegenerateError("correlation input has zero variance");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

enum class HarmlessKind { Gaussian, SaltPepper, Resample };

inline const char* to_string(HarmlessKind k) {
  switch (k) {
    case HarmlessKind::Gaussian: return "gaussian";
    case HarmlessKind::SaltPepper: return "salt_pepper";
    case HarmlessKind::Resample: return "resample";
  }
  return "?";
}

inline HarmlessKind parse_harmless_kind(const std::string& s) {
  if (s == "gaussian") return HarmlessKind::Gaussian;
  if (s == "salt_pepper") return HarmlessKind::SaltPepper;
  if (s == "resample") return HarmlessKind::Resample;
  throw ConfigError("unknown harmless perturbation '" + s + "'");
}

// Noise and compression-like degradations that should not be flagged.
// magnitude: sigma for gaussian, flip probability for salt_pepper, integer
// block factor for resample.
inline Image perturb_harmless(const Image& img, HarmlessKind kind, double magnitude, std::uint64_t seed) {
  Image out = img;
  SplitMix64 rng(seed);
  switch (kind) {
    case HarmlessKind::Gaussian:
      if (!(magnitude >= 0.0)) throw RangeError("gaussian sigma must be >= 0");
      if (magnitude == 0.0) return out;
      for (double& p : out.pixels) p = std::clamp(p + magnitude * rng.normal(), 0.0, 1.0);
      return out;
    case HarmlessKind::SaltPepper:
      if (!(magnitude >= 0.0 && magnitude <= 1.0)) throw RangeError("salt-and-pepper probability must be in [0,1]");
      for (double& p : out.pixels) {
        const double u = rng.uniform();
        if (u < magnitude / 2.0) p = 0.0;
        else if (u < magnitude) p = 1.0;
      }
      return out;
    case HarmlessKind::Resample: {
      if (!(magnitude >= 1.0) || magnitude != std::floor(magnitude)) throw RangeError("resample factor must be an integer >= 1");
      const auto f = static_cast<std::size_t>(magnitude);
      if (f == 1) return out;
      for (std::size_t by = 0; by < img.height; by += f)
        for (std::size_t bx = 0; bx < img.width; bx += f) {
          double sum = 0.0;
          std::size_t cnt = 0;
          for (std::size_t y = by; y < std::min(by + f, img.height); ++y)
            for (std::size_t x = bx; x < std::min(bx + f, img.width); ++x, ++cnt) sum += img.at(x, y);
          const double mean = sum / static_cast<double>(cnt);
          for (std::size_t y = by; y < std::min(by + f, img.height); ++y)
            for (std::size_t x = bx; x < std::min(bx + f, img.width); ++x) out.at(x, y) = mean;
        }
      return out;
    }
  }
  return out;
}

}  // namespace krawdetect
