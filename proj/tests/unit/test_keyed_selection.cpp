#include <algorithm>
#include <set>

#include <gtest/gtest.h>

#include "krawdetect/keyed_selection.hpp"
#include "test_util.hpp"

using namespace krawdetect;

namespace {

// Straight-line replay of the plan sampler: SplitMix64 from its published
// constants, configs drawn before orders, u < p blocks, floor by unblocking
// the earliest blocked candidates.
struct Replay {
  std::uint64_t s;
  double u() {
    std::uint64_t z = (s += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return static_cast<double>(z >> 11) / 9007199254740992.0;
  }
};

std::vector<bool> replay_mask(Replay& r, std::size_t count, double p, std::size_t floor) {
  std::vector<bool> keep;
  std::size_t kept = 0;
  for (std::size_t i = 0; i < count; ++i) {
    keep.push_back(!(r.u() < p));
    if (keep.back()) ++kept;
  }
  for (std::size_t i = 0; i < count && kept < floor; ++i)
    if (!keep[i]) keep[i] = true, ++kept;
  return keep;
}

double jaccard(const std::vector<SpatialConfig>& a, const std::vector<SpatialConfig>& b) {
  std::set<SpatialConfig> sa(a.begin(), a.end()), sb(b.begin(), b.end()), u = sa;
  u.insert(sb.begin(), sb.end());
  std::size_t inter = 0;
  for (const auto& x : sa) inter += sb.count(x);
  return static_cast<double>(inter) / static_cast<double>(u.size());
}

}  // namespace

TEST(SplitMix64, ReferenceOutput) {
  SplitMix64 r(0);
  EXPECT_EQ(r.next(), 0xE220A8397B1DCDAFULL);
  EXPECT_EQ(r.next(), 0x6E789E6AA1B965F4ULL);
}

TEST(SplitMix64, SameSeedSameStream) {
  SplitMix64 a(77), b(77);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next(), b.next());
}

TEST(SplitMix64, DifferentSeedsDiffer) {
  EXPECT_NE(SplitMix64(1).next(), SplitMix64(2).next());
}

TEST(SplitMix64, UniformRangeAndBelow) {
  SplitMix64 r(5);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(r.below(7), 7u);
  }
}

TEST(DeriveStream, IsSeededByKey) {
  auto s = derive_stream(DetectorKey{0});
  EXPECT_EQ(s.next(), 0xE220A8397B1DCDAFULL);
}

TEST(SamplePlan, NoBlockingKeepsEverything) {
  auto grid = CandidateGrid::defaults(28, 28, 27);
  grid.blocking_prob = 0.0;
  const auto plan = sample_plan(DetectorKey{123}, grid);
  EXPECT_EQ(plan.retained_configs.size(), 25u);
  EXPECT_EQ(plan.order_mask, full_order_set(27, 27));
}

TEST(SamplePlan, Deterministic) {
  const auto grid = CandidateGrid::defaults(28, 28);
  EXPECT_EQ(sample_plan(DetectorKey{99}, grid), sample_plan(DetectorKey{99}, grid));
}

TEST(SamplePlan, MatchesReplayOracle) {
  auto grid = CandidateGrid::defaults(28, 28, 27);
  grid.blocking_prob = 0.5;
  grid.min_retained_configs = 4;
  const auto plan = sample_plan(DetectorKey{0xDEADBEEF}, grid);

  Replay r{0xDEADBEEF};
  const auto ck = replay_mask(r, grid.spatial_candidates.size(), 0.5, 4);
  const auto ok = replay_mask(r, grid.order_candidates.size(), 0.5, 1);
  std::vector<SpatialConfig> configs;
  for (std::size_t i = 0; i < ck.size(); ++i)
    if (ck[i]) configs.push_back(grid.spatial_candidates[i]);
  std::vector<OrderPair> orders;
  for (std::size_t i = 0; i < ok.size(); ++i)
    if (ok[i]) orders.push_back(grid.order_candidates[i]);
  EXPECT_EQ(plan.retained_configs, configs);
  EXPECT_EQ(plan.order_mask, orders);
}

TEST(SamplePlan, FloorIsHonoured) {
  auto grid = CandidateGrid::defaults(28, 28, 10);
  grid.blocking_prob = 0.95;
  grid.min_retained_configs = 6;
  for (std::uint64_t k = 0; k < 200; ++k) {
    const auto plan = sample_plan(DetectorKey{k}, grid);
    ASSERT_GE(plan.retained_configs.size(), 6u);
    ASSERT_GE(plan.order_mask.size(), 1u);
  }
}

TEST(SamplePlan, KeySensitivityMatchesJaccardExpectation) {
  // Blocking is rare enough at these p that the floor almost never fires.
  for (double p : {0.2, 0.3, 0.5}) {
    auto grid = CandidateGrid::defaults(28, 28, 4);
    grid.blocking_prob = p;
    grid.min_retained_configs = 1;
    SplitMix64 keys(0x5EC7E7 + static_cast<std::uint64_t>(p * 100));
    double total = 0.0;
    for (int i = 0; i < 100; ++i) {
      const auto a = sample_plan(DetectorKey{keys.next()}, grid);
      const auto b = sample_plan(DetectorKey{keys.next()}, grid);
      total += jaccard(a.retained_configs, b.retained_configs);
    }
    EXPECT_NEAR(total / 100.0, (1.0 - p) / (1.0 + p), 0.15) << "p=" << p;
  }
}

TEST(SamplePlan, DifferentKeysDifferentPlans) {
  const auto grid = CandidateGrid::defaults(28, 28);
  EXPECT_NE(sample_plan(DetectorKey{1}, grid), sample_plan(DetectorKey{2}, grid));
}

TEST(CandidateGridCheck, RejectsBadConfigs) {
  auto grid = CandidateGrid::defaults(28, 28);
  grid.blocking_prob = 1.0;
  EXPECT_THROW(sample_plan(DetectorKey{1}, grid), ConfigError);
  grid.blocking_prob = 0.5;
  grid.min_retained_configs = 26;
  EXPECT_THROW(sample_plan(DetectorKey{1}, grid), ConfigError);
  grid.min_retained_configs = 4;
  grid.order_candidates.clear();
  EXPECT_THROW(sample_plan(DetectorKey{1}, grid), ConfigError);
}

TEST(CandidateGridCheck, DefaultsClampOrdersToImage) {
  const auto grid = CandidateGrid::defaults(28, 20, 48);
  EXPECT_EQ(grid.spatial_candidates.size(), 25u);
  EXPECT_EQ(grid.order_candidates.size(), 28u * 20u);
}

TEST(KeyFile, RoundTripAndFingerprint) {
  const auto dir = testutil::scratch_dir();
  const DetectorKey key{0x0123456789ABCDEFULL};
  write_key_file(dir / "k.txt", key);
  EXPECT_EQ(read_key_file(dir / "k.txt").seed, key.seed);
  EXPECT_NE(key_fingerprint(key), key.seed);
  EXPECT_EQ(key_fingerprint(key), key_fingerprint(DetectorKey{key.seed}));
  EXPECT_NE(key_fingerprint(key), key_fingerprint(DetectorKey{key.seed + 1}));
  EXPECT_EQ(sample_plan(key, CandidateGrid::defaults(8, 8)).key_fingerprint, key_fingerprint(key));
}

TEST(KeyFile, MalformedHexIsFormatError) {
  const auto dir = testutil::scratch_dir();
  testutil::write_string(dir / "k.txt", "not-a-key\n");
  EXPECT_THROW(read_key_file(dir / "k.txt"), FormatError);
  EXPECT_EQ(parse_hex64(to_hex(0xFEDCBA9876543210ULL)), 0xFEDCBA9876543210ULL);
}
