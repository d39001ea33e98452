#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "krawdetect/detector.hpp"
#include "krawdetect/selftest.hpp"
#include "krawdetect/synthetic_digits.hpp"
#include "test_util.hpp"

using namespace krawdetect;

namespace {

struct Blobs {
  std::vector<std::vector<double>> x;
  std::vector<int> y;
};

// Two classes separated by the line x0 + x1 = 0 with margin >= 0.5.
Blobs separable_blobs(std::size_t n, std::uint64_t seed) {
  Blobs b;
  SplitMix64 rng(seed);
  while (b.x.size() < n) {
    const double u = rng.uniform(-3, 3), v = rng.uniform(-3, 3);
    const double d = (u + v) / std::sqrt(2.0);
    if (std::abs(d) < 0.5) continue;
    b.x.push_back({u, v});
    b.y.push_back(d > 0 ? 1 : 0);
  }
  return b;
}

Blobs noisy_blobs(std::size_t n, std::uint64_t seed) {
  Blobs b;
  SplitMix64 rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    b.x.push_back({rng.normal() + (y ? 1.0 : -1.0), rng.normal(), rng.normal()});
    b.y.push_back(y);
  }
  return b;
}

DetectorModel small_model(std::uint64_t key) {
  const auto clean = make_synthetic_digits(100, 1);
  std::vector<Image> imgs;
  std::vector<int> labels;
  SplitMix64 rng(9);
  for (const auto& ex : clean.examples) {
    imgs.push_back(ex.image);
    labels.push_back(0);
    Image noisy = ex.image;
    for (double& p : noisy.pixels) p = std::clamp(p + (rng.uniform() < 0.5 ? -0.1 : 0.1), 0.0, 1.0);
    imgs.push_back(noisy);
    labels.push_back(1);
  }
  DetectorConfig cfg;
  cfg.max_order = 20;
  cfg.svm.epochs = 20;
  cfg.svm.lambda = 1e-3;
  return train_detector(imgs, labels, DetectorKey{key}, cfg);
}

}  // namespace

TEST(TrainSvm, SeparablePair) {
  const auto m = train_svm({{-1.0}, {1.0}}, {0, 1}, {});
  EXPECT_EQ(predict(m, std::vector<double>{-1.0}).label, 0);
  EXPECT_EQ(predict(m, std::vector<double>{1.0}).label, 1);
}

TEST(TrainSvm, LabelFlipNegatesDecision) {
  const auto b = noisy_blobs(100, 4);
  auto flipped = b.y;
  for (int& v : flipped) v = 1 - v;
  TrainConfig cfg;
  cfg.epochs = 20;
  const auto m = train_svm(b.x, b.y, cfg);
  const auto f = train_svm(b.x, flipped, cfg);
  SplitMix64 rng(5);
  for (int i = 0; i < 50; ++i) {
    const std::vector<double> v{rng.normal(), rng.normal(), rng.normal()};
    EXPECT_DOUBLE_EQ(predict(f, v).margin, -predict(m, v).margin);
  }
}

TEST(TrainSvm, SeparableBlobsReachFullAccuracy) {
  const auto b = separable_blobs(200, 11);
  TrainConfig cfg;
  cfg.lambda = 1e-3;
  const auto m = train_svm(b.x, b.y, cfg);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < b.x.size(); ++i) correct += predict(m, b.x[i]).label == b.y[i] ? 1 : 0;
  EXPECT_EQ(correct, b.x.size());
}

TEST(TrainSvm, Deterministic) {
  const auto b = noisy_blobs(150, 6);
  EXPECT_EQ(train_svm(b.x, b.y, {}), train_svm(b.x, b.y, {}));
  TrainConfig other;
  other.shuffle_seed = 1;
  EXPECT_NE(train_svm(b.x, b.y, {}).weights, train_svm(b.x, b.y, other).weights);
}

TEST(TrainSvm, ObjectiveTrendsDown) {
  for (double lambda : {1e-3, 1e-4}) {
    const auto b = noisy_blobs(400, 8);
    TrainConfig cfg;
    cfg.lambda = lambda;
    cfg.epochs = 40;
    std::vector<double> hist;
    train_svm(b.x, b.y, cfg, &hist);
    ASSERT_EQ(hist.size(), 40u);
    int ok = 0;
    for (std::size_t e = 1; e < hist.size(); ++e) ok += hist[e] <= hist[e - 1] + 1e-6 ? 1 : 0;
    EXPECT_GE(ok, 0.8 * static_cast<double>(hist.size() - 1)) << "lambda=" << lambda;
    EXPECT_LT(hist.back(), hist.front() + 1e-6);
  }
}

TEST(TrainSvm, Errors) {
  EXPECT_THROW(train_svm({{1.0}, {2.0}}, {1, 1}, {}), DegenerateError);
  EXPECT_THROW(train_svm({{1.0}, {2.0}}, {0, 1, 1}, {}), ShapeError);
  EXPECT_THROW(train_svm({{1.0}, {2.0, 3.0}}, {0, 1}, {}), ShapeError);
  EXPECT_THROW(train_svm({{1.0}, {2.0}}, {0, 2}, {}), RangeError);
  TrainConfig bad;
  bad.lambda = 0;
  EXPECT_THROW(train_svm({{1.0}, {2.0}}, {0, 1}, bad), ConfigError);
  bad = {};
  bad.schedule = "adam";
  EXPECT_THROW(train_svm({{1.0}, {2.0}}, {0, 1}, bad), ConfigError);
}

TEST(Predict, Examples) {
  SvmModel z;
  z.weights = {0.0, 0.0};
  z.bias = -1.0;
  const auto p = predict(z, std::vector<double>{3.0, -7.0});
  EXPECT_EQ(p.label, 0);
  EXPECT_DOUBLE_EQ(p.margin, -1.0);

  SvmModel one;
  one.weights = {1.0};
  const auto q = predict(one, std::vector<double>{2.0});
  EXPECT_EQ(q.label, 1);
  EXPECT_DOUBLE_EQ(q.margin, 2.0);
}

TEST(Predict, ZeroMarginIsClean) {
  SvmModel m;
  m.weights = {1.0, -1.0};
  EXPECT_EQ(predict(m, std::vector<double>{2.0, 2.0}).label, 0);
}

TEST(Predict, DimensionMismatch) {
  SvmModel m;
  m.weights = {1.0};
  EXPECT_THROW(predict(m, std::vector<double>{1.0, 2.0}), ShapeError);
}

TEST(Predict, PositiveScalingKeepsLabels) {
  const auto b = noisy_blobs(100, 12);
  const auto m = train_svm(b.x, b.y, {});
  for (double c : {1e-3, 0.5, 7.0, 1e4}) {
    auto s = m;
    for (double& w : s.weights) w *= c;
    s.bias *= c;
    for (const auto& v : b.x) EXPECT_EQ(predict(s, v).label, predict(m, v).label);
  }
}

TEST(Persist, RoundTripPredictsIdentically) {
  const auto dir = testutil::scratch_dir();
  const auto m = small_model(0x77);
  const auto back = persist_roundtrip(m, dir / "m.json");
  EXPECT_EQ(back, m);
  const Detector a(m), b(back);
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto img = random_image(28, 28, s);
    EXPECT_EQ(a(img).margin, b(img).margin);
  }
  SplitMix64 rng(1);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> v(m.svm.weights.size());
    for (double& e : v) e = rng.normal();
    EXPECT_EQ(predict(m.svm, v).margin, predict(back.svm, v).margin);
  }
  EXPECT_EQ(serialize_model(back), serialize_model(m));
}

TEST(Persist, UnknownVersionIsVersionError) {
  const auto dir = testutil::scratch_dir();
  auto j = model_to_json(small_model(1));
  j["format_version"] = 999;
  testutil::write_string(dir / "m.json", j.dump());
  EXPECT_THROW(load_model(dir / "m.json"), VersionError);
}

TEST(Persist, TruncatedFileIsFormatError) {
  const auto dir = testutil::scratch_dir();
  const auto text = serialize_model(small_model(1));
  testutil::write_string(dir / "m.json", text.substr(0, text.size() / 2));
  EXPECT_THROW(load_model(dir / "m.json"), FormatError);
  testutil::write_string(dir / "m2.json", "{\"format_version\": 1}");
  EXPECT_THROW(load_model(dir / "m2.json"), FormatError);
}

TEST(Persist, TamperedDimensionsAreRejected) {
  const auto dir = testutil::scratch_dir();
  auto j = model_to_json(small_model(1));
  j["svm"]["weights"].erase(0);
  testutil::write_string(dir / "m.json", j.dump());
  EXPECT_THROW(load_model(dir / "m.json"), ConsistencyError);
}

TEST(Persist, KeyIsNotStored) {
  const std::uint64_t key = 0x1122334455667788ULL;
  const auto text = serialize_model(small_model(key));
  EXPECT_EQ(text.find(to_hex(key)), std::string::npos);
  EXPECT_NE(text.find(to_hex(key_fingerprint(DetectorKey{key}))), std::string::npos);
}

TEST(TrainDetector, SeparatesNoiseFromClean) {
  const auto m = small_model(3);
  const Detector det(m);
  const auto clean = make_synthetic_digits(20, 77);
  std::size_t clean_ok = 0, noisy_ok = 0;
  SplitMix64 rng(4);
  for (const auto& ex : clean.examples) {
    clean_ok += det(ex.image).label == 0 ? 1 : 0;
    Image noisy = ex.image;
    for (double& p : noisy.pixels) p = std::clamp(p + (rng.uniform() < 0.5 ? -0.1 : 0.1), 0.0, 1.0);
    noisy_ok += det(noisy).label == 1 ? 1 : 0;
  }
  EXPECT_GE(clean_ok, 18u);
  EXPECT_GE(noisy_ok, 18u);
}

TEST(TrainDetector, DifferentKeysDifferentModels) {
  const auto a = small_model(1), b = small_model(2);
  EXPECT_NE(a.plan, b.plan);
  EXPECT_NE(model_fingerprint(a), model_fingerprint(b));
  EXPECT_EQ(model_fingerprint(a), model_fingerprint(small_model(1)));
}
