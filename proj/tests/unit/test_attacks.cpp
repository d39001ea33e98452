#include <algorithm>
#include <cmath>
#include <functional>

#include <gtest/gtest.h>

#include "krawdetect/attacks.hpp"
#include "krawdetect/synthetic_digits.hpp"

using namespace krawdetect;

namespace {

// Surrogate trained once on synthetic digits; the test split is disjoint.
struct DigitFixture {
  Dataset train = make_synthetic_digits(1000, 21);
  Dataset test = make_synthetic_digits(300, 22);
  SurrogateModel model = train_surrogate(train, {100, 0.5, 0, 0.01, 1.0});
};

const DigitFixture& digits() {
  static const DigitFixture f;
  return f;
}

double fooling_rate(const SurrogateModel& m, const Dataset& ds, const std::function<Image(const Image&, int, std::size_t)>& perturb) {
  std::size_t fooled = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& ex = ds.examples[i];
    const auto adv = ex.image + perturb(ex.image, ex.label, i);
    fooled += m.classify(adv.pixels) != m.classify(ex.image.pixels) ? 1 : 0;
  }
  return static_cast<double>(fooled) / static_cast<double>(ds.size());
}

void expect_budget(const Image& x, const Image& delta, double eps) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    ASSERT_LE(std::abs(delta.pixels[i]), eps + 1e-12);
    ASSERT_GE(x.pixels[i] + delta.pixels[i], -1e-12);
    ASSERT_LE(x.pixels[i] + delta.pixels[i], 1.0 + 1e-12);
  }
}

Dataset blobs(std::size_t n, std::uint64_t seed) {
  Dataset ds;
  ds.num_classes = 2;
  SplitMix64 rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    Image img(2, 2);
    img.pixels = {rng.uniform(0, 0.4) + 0.6 * y, rng.uniform(0, 0.4) + 0.6 * y, rng.uniform(), rng.uniform()};
    ds.examples.push_back({img, y});
  }
  return ds;
}

FeatureSubset low_order_subset() {
  FeatureSubset s;
  for (const SpatialConfig cfg : {SpatialConfig{0.5, 0.5}, SpatialConfig{0.25, 0.75}})
    for (int n = 0; n < 6; ++n)
      for (int m = 0; m < 6; ++m) s.keys.push_back({n, m, cfg});
  return s;
}

}  // namespace

TEST(Surrogate, SeparableBlobs) {
  const auto ds = blobs(200, 1);
  const auto m = train_surrogate(ds, {300, 1.0, 0, 0.0, 1.0});
  EXPECT_DOUBLE_EQ(m.train_accuracy, 1.0);
  for (const auto& ex : ds.examples) EXPECT_EQ(m.classify(ex.image.pixels), ex.label);
}

TEST(Surrogate, GradientMatchesFiniteDifferences) {
  const auto& m = digits().model;
  SplitMix64 rng(2);
  for (int t = 0; t < 10; ++t) {
    std::vector<double> x(m.dim);
    for (double& v : x) v = rng.uniform();
    const int label = static_cast<int>(rng.below(10));
    const auto g = m.input_gradient(x, label);
    double scale = 0.0, err = 0.0;
    for (std::size_t i = 0; i < x.size(); i += 7) {
      auto xp = x, xm = x;
      xp[i] += 1e-5;
      xm[i] -= 1e-5;
      const double fd = (m.loss(xp, label) - m.loss(xm, label)) / 2e-5;
      err = std::max(err, std::abs(fd - g[i]));
      scale = std::max(scale, std::abs(g[i]));
    }
    EXPECT_LT(err / scale, 1e-5);
  }
}

TEST(Surrogate, ZeroEpochsIsUniform) {
  const auto ds = make_synthetic_digits(100, 3);
  const auto m = train_surrogate(ds, {0, 0.5, 0, 0.0, 1.0});
  const auto p = m.probabilities(ds.examples[5].image.pixels);
  for (double v : p) EXPECT_DOUBLE_EQ(v, 0.1);
  EXPECT_NEAR(m.train_accuracy, 0.1, 1e-12);
}

TEST(Surrogate, LearnsDigits) {
  EXPECT_GT(digits().model.train_accuracy, 0.9);
  std::size_t ok = 0;
  for (const auto& ex : digits().test.examples) ok += digits().model.classify(ex.image.pixels) == ex.label ? 1 : 0;
  EXPECT_GT(static_cast<double>(ok) / digits().test.size(), 0.8);
}

TEST(Surrogate, SeededAndDeterministic) {
  const auto ds = make_synthetic_digits(200, 4);
  const SurrogateTrainConfig cfg{20, 0.5, 7, 0.01, 0.5};
  EXPECT_EQ(train_surrogate(ds, cfg).weights, train_surrogate(ds, cfg).weights);
  auto other = cfg;
  other.seed = 8;
  EXPECT_NE(train_surrogate(ds, cfg).weights, train_surrogate(ds, other).weights);
}

TEST(Surrogate, Errors) {
  Dataset one;
  one.num_classes = 1;
  one.examples.push_back({Image(2, 2), 0});
  EXPECT_THROW(train_surrogate(one, {}), DegenerateError);
  EXPECT_THROW(train_surrogate(Dataset{}, {}), DataError);
  EXPECT_THROW(digits().model.input_gradient(digits().test.examples[0].image.pixels, 10), RangeError);
}

TEST(Fgsm, ZeroBudgetIsZero) {
  const auto& ex = digits().test.examples[0];
  const auto d = attack_fgsm(digits().model, ex.image, ex.label, PerturbationSpec::fgsm(0.0));
  for (double v : d.pixels) EXPECT_EQ(v, 0.0);
}

TEST(Fgsm, RespectsBudgetAndBox) {
  for (double eps : {0.05, 0.2, 0.5, 1.0})
    for (std::size_t i = 0; i < 20; ++i) {
      const auto& ex = digits().test.examples[i];
      expect_budget(ex.image, attack_fgsm(digits().model, ex.image, ex.label, PerturbationSpec::fgsm(eps)), eps);
    }
}

TEST(Fgsm, BeatsRandomSignNoise) {
  const auto& f = digits();
  const double fgsm = fooling_rate(f.model, f.test, [&](const Image& x, int y, std::size_t) {
    return attack_fgsm(f.model, x, y, PerturbationSpec::fgsm(0.2));
  });
  const double noise = fooling_rate(f.model, f.test, [&](const Image& x, int, std::size_t i) {
    SplitMix64 rng(1000 + i);
    std::vector<double> d(x.size());
    for (double& v : d) v = rng.uniform() < 0.5 ? -0.2 : 0.2;
    detail::project(d, x.pixels, 0.2);
    return Image(x.width, x.height, d);
  });
  EXPECT_GT(fgsm, noise);
  EXPECT_GT(fgsm, 0.3);
}

TEST(Fgsm, QuantizedStaysOnGridAndInBudget) {
  auto spec = PerturbationSpec::fgsm(0.1);
  spec.quantize = true;
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& ex = digits().test.examples[i];
    const auto d = attack_fgsm(digits().model, ex.image, ex.label, spec);
    expect_budget(ex.image, d, 0.1);
    for (std::size_t k = 0; k < d.size(); ++k) {
      const double q = (ex.image.pixels[k] + d.pixels[k]) * 255.0;
      ASSERT_NEAR(q, std::round(q), 1e-9);
    }
  }
}

TEST(Pgd, SingleStepEqualsFgsm) {
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& ex = digits().test.examples[i];
    const auto a = attack_fgsm(digits().model, ex.image, ex.label, PerturbationSpec::fgsm(0.2));
    auto spec = PerturbationSpec::pgd(0.2, 1, 0.2);
    spec.rand_init = false;
    EXPECT_EQ(attack_pgd(digits().model, ex.image, ex.label, spec), a);
    EXPECT_EQ(attack_pgd(digits().model, ex.image, ex.label, PerturbationSpec::bim(0.2, 1, 0.2)), a);
  }
}

TEST(Pgd, EveryIterateInBudget) {
  // the output after k steps is the k-th iterate of the same trajectory
  const auto& ex = digits().test.examples[3];
  for (int steps = 1; steps <= 12; ++steps) {
    auto spec = PerturbationSpec::pgd(0.15, steps, 0.05, 9);
    expect_budget(ex.image, attack_pgd(digits().model, ex.image, ex.label, spec), 0.15);
  }
}

TEST(Pgd, AtLeastAsStrongAsFgsm) {
  const auto& f = digits();
  const double fgsm = fooling_rate(f.model, f.test, [&](const Image& x, int y, std::size_t) {
    return attack_fgsm(f.model, x, y, PerturbationSpec::fgsm(0.2));
  });
  const double pgd = fooling_rate(f.model, f.test, [&](const Image& x, int y, std::size_t i) {
    return attack_pgd(f.model, x, y, PerturbationSpec::pgd(0.2, 10, 0.05, i));
  });
  EXPECT_GE(pgd, fgsm - 0.02);
}

TEST(Pgd, SeededDeterminism) {
  const auto& ex = digits().test.examples[1];
  const auto spec = PerturbationSpec::pgd(0.2, 5, 0.05, 42);
  EXPECT_EQ(attack_pgd(digits().model, ex.image, ex.label, spec), attack_pgd(digits().model, ex.image, ex.label, spec));
  auto other = spec;
  other.seed = 43;
  EXPECT_NE(attack_pgd(digits().model, ex.image, ex.label, spec), attack_pgd(digits().model, ex.image, ex.label, other));
}

TEST(PerturbationSpecCheck, Validation) {
  EXPECT_THROW(PerturbationSpec::fgsm(-0.1).validate(), RangeError);
  EXPECT_THROW(PerturbationSpec::pgd(0.1, 0, 0.05).validate(), ConfigError);
  EXPECT_THROW(PerturbationSpec::pgd(0.1, 5, 0.2).validate(), ConfigError);
  auto f = PerturbationSpec::fgsm(0.1);
  f.steps = 3;
  EXPECT_THROW(f.validate(), ConfigError);
  EXPECT_EQ(parse_attack_kind("bim"), AttackKind::Bim);
  EXPECT_THROW(parse_attack_kind("cw"), ConfigError);
}

TEST(DefenseAware, ZeroPenaltyIsPlainPgd) {
  const SubsetProjector proj(28, 28, low_order_subset());
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& ex = digits().test.examples[i];
    DefenseAwareSpec da;
    da.base = PerturbationSpec::pgd(0.2, 10, 0.05, 100 + i);
    da.subset = low_order_subset();
    da.penalty_weight = 0.0;
    const auto r = attack_defense_aware(digits().model, ex.image, ex.label, da, proj);
    EXPECT_EQ(r.delta, attack_pgd(digits().model, ex.image, ex.label, da.base));
  }
}

TEST(DefenseAware, LargePenaltyHalvesSubsetEnergy) {
  const auto subset = low_order_subset();
  const SubsetProjector proj(28, 28, subset);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& ex = digits().test.examples[i];
    DefenseAwareSpec da;
    da.base = PerturbationSpec::pgd(0.2, 10, 0.05, 200 + i);
    da.subset = subset;
    da.penalty_weight = 1e3;
    const auto plain = attack_pgd(digits().model, ex.image, ex.label, da.base);
    const auto r = attack_defense_aware(digits().model, ex.image, ex.label, da, proj);
    expect_budget(ex.image, r.delta, 0.2);
    EXPECT_LT(proj.energy(r.delta), 0.5 * proj.energy(plain)) << i;
    EXPECT_NEAR(r.subset_energy, std::sqrt(proj.energy(r.delta)), 1e-12);
    const double rho = feature_correlation(proj.coefficients(plain), proj.coefficients(r.delta));
    EXPECT_GE(rho, -1.0);
    EXPECT_LE(rho, 1.0);
  }
}

TEST(DefenseAware, EnergyGradientMatchesFiniteDifferences) {
  const SubsetProjector proj(12, 12, FeatureSubset{{{0, 0, {0.5, 0.5}}, {2, 3, {0.5, 0.5}}, {1, 1, {0.25, 0.75}}}});
  SplitMix64 rng(3);
  Image d(12, 12);
  for (double& v : d.pixels) v = rng.uniform(-0.2, 0.2);
  const auto g = proj.energy_gradient(d);
  for (std::size_t i = 0; i < d.size(); i += 5) {
    auto p = d, m = d;
    p.pixels[i] += 1e-6;
    m.pixels[i] -= 1e-6;
    EXPECT_NEAR((proj.energy(p) - proj.energy(m)) / 2e-6, g.pixels[i], 1e-6);
  }
  EXPECT_EQ(proj.size(), 3u);
}

TEST(DefenseAware, Errors) {
  EXPECT_THROW(SubsetProjector(28, 28, FeatureSubset{}), ConfigError);
  DefenseAwareSpec da;
  da.base = PerturbationSpec::pgd(0.2, 2, 0.1);
  da.subset = low_order_subset();
  da.penalty_weight = -1.0;
  const SubsetProjector proj(28, 28, da.subset);
  const auto& ex = digits().test.examples[0];
  EXPECT_THROW(attack_defense_aware(digits().model, ex.image, ex.label, da, proj), ConfigError);
}

TEST(FeatureCorrelation, Examples) {
  const std::vector<double> v{0.3, -1.0, 2.5, 4.0};
  std::vector<double> neg(v.size());
  std::transform(v.begin(), v.end(), neg.begin(), [](double x) { return -x; });
  EXPECT_NEAR(feature_correlation(v, v), 1.0, 1e-15);
  EXPECT_NEAR(feature_correlation(v, neg), -1.0, 1e-15);
  EXPECT_NEAR(feature_correlation(std::vector<double>{1, 2, 3}, std::vector<double>{1, 3, 2}), 0.5, 1e-15);
  EXPECT_THROW(feature_correlation(std::vector<double>{1, 1}, std::vector<double>{1, 2}), DegenerateError);
  EXPECT_THROW(feature_correlation(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Harmless, Identities) {
  const auto& img = digits().test.examples[0].image;
  EXPECT_EQ(perturb_harmless(img, HarmlessKind::Gaussian, 0.0, 1), img);
  EXPECT_EQ(perturb_harmless(img, HarmlessKind::Resample, 1.0, 1), img);
  const auto sp = perturb_harmless(img, HarmlessKind::SaltPepper, 1.0, 1);
  for (double p : sp.pixels) EXPECT_TRUE(p == 0.0 || p == 1.0);
}

TEST(Harmless, StaysInRangeAndIsSeeded) {
  const auto& img = digits().test.examples[1].image;
  for (auto [k, mag] : std::vector<std::pair<HarmlessKind, double>>{
           {HarmlessKind::Gaussian, 0.1}, {HarmlessKind::SaltPepper, 0.05}, {HarmlessKind::Resample, 3.0}}) {
    const auto a = perturb_harmless(img, k, mag, 5);
    EXPECT_TRUE(a.is_content());
    EXPECT_EQ(a, perturb_harmless(img, k, mag, 5));
    EXPECT_NE(a, img);
  }
  EXPECT_NE(perturb_harmless(img, HarmlessKind::Gaussian, 0.1, 5), perturb_harmless(img, HarmlessKind::Gaussian, 0.1, 6));
  EXPECT_THROW(perturb_harmless(img, HarmlessKind::Resample, 1.5, 1), RangeError);
  EXPECT_THROW(perturb_harmless(img, HarmlessKind::SaltPepper, 1.5, 1), RangeError);
  EXPECT_EQ(parse_harmless_kind("salt_pepper"), HarmlessKind::SaltPepper);
}

TEST(Harmless, ResampleAveragesBlocks) {
  Image img(4, 4);
  for (std::size_t i = 0; i < 16; ++i) img.pixels[i] = static_cast<double>(i) / 15.0;
  const auto r = perturb_harmless(img, HarmlessKind::Resample, 2.0, 0);
  const double tl = (img.at(0, 0) + img.at(1, 0) + img.at(0, 1) + img.at(1, 1)) / 4.0;
  EXPECT_DOUBLE_EQ(r.at(0, 0), tl);
  EXPECT_DOUBLE_EQ(r.at(1, 1), tl);
}
