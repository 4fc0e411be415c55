#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "neuralmrf/error.hpp"
#include "neuralmrf/mrf.hpp"
#include "reference.hpp"

using namespace nmrf;

namespace {

std::vector<std::vector<double>> as_rows(const PatchBank& bank) {
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < bank.count(); ++i) {
    const auto p = bank.patch(i);
    rows.emplace_back(p.begin(), p.end());
  }
  return rows;
}

PatchBank random_bank(int count, int channels, int k, std::uint64_t seed) {
  const Tensor t = ref::random_tensor({1, count, channels * k * k}, seed);
  PatchBank b;
  b.k = k;
  b.channels = channels;
  b.patches.assign(t.data().begin(), t.data().end());
  for (int i = 0; i < count; ++i) {
    double s = 0.0;
    for (float v : b.patch(i)) s += static_cast<double>(v) * v;
    b.norms.push_back(static_cast<float>(std::sqrt(s)));
    b.origins.push_back({0, 0, i});
  }
  return b;
}

std::vector<int> brute_force(const PatchBank& q, const PatchBank& s) {
  const auto styles = as_rows(s);
  std::vector<int> out;
  for (const auto& row : as_rows(q)) out.push_back(ref::brute_force_match(row, styles));
  return out;
}

const Network& tiny_net() {
  static const Network net = make_test_network(42, 0.125);
  return net;
}

int ceil_half(int v) { return (v + 1) / 2; }

}  // namespace

TEST(ExtractPatches, CountsAndOrigins) {
  const Tensor f = ref::random_tensor({3, 7, 9}, 1);
  const PatchBank b = extract_patches(f, 3);
  EXPECT_EQ(b.count(), 5u * 7u);
  EXPECT_EQ(b.dim(), 27);
  EXPECT_EQ(b.origins[8], (PatchOrigin{0, 1, 1}));
  const PatchBank strided = extract_patches(f, 3, 2);
  EXPECT_EQ(strided.count(), 3u * 4u);
  EXPECT_EQ(strided.origins[5], (PatchOrigin{0, 2, 2}));
}

TEST(ExtractPatches, SinglePatchIsWholeMap) {
  const Tensor f = ref::random_tensor({1, 3, 3}, 2);
  const PatchBank b = extract_patches(f, 3);
  ASSERT_EQ(b.count(), 1u);
  EXPECT_TRUE(std::ranges::equal(b.patch(0), f.data()));
}

TEST(ExtractPatches, SliceAtOneTwo) {
  const Tensor f = ref::random_tensor({2, 5, 5}, 3);
  const PatchBank b = extract_patches(f, 3);
  const auto expected = ref::window(ref::from_tensor(f), 1, 2, 3);
  const auto p = b.patch(1 * 3 + 2);
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_EQ(p[i], expected[i]);
}

TEST(ExtractPatches, NormsMatchRecomputation) {
  const PatchBank b = extract_patches(ref::random_tensor({4, 6, 6}, 4), 3);
  for (std::size_t i = 0; i < b.count(); ++i) {
    const auto row = as_rows(b)[i];
    EXPECT_NEAR(b.norms[i], std::sqrt(ref::dot(row, row)), 1e-5 * b.norms[i]);
  }
}

TEST(ExtractPatches, KernelLargerThanMapThrows) {
  EXPECT_THROW(extract_patches(Tensor(1, 2, 5), 3), ConfigError);
  EXPECT_THROW(extract_patches(Tensor(1, 5, 5), 3, 0), ConfigError);
}

TEST(StyleBank, IdentityAugmentationEqualsDirectExtraction) {
  const Tensor style = ref::textured_image(40, 40, 5);
  const PatchBank bank = build_style_bank(tiny_net(), style, "relu3_1", 3,
                                          AugmentationSet::identity());
  const std::vector<std::string> taps{"relu3_1"};
  const auto act = forward_tapped(tiny_net(), style, taps, false);
  const PatchBank direct = extract_patches(act.at("relu3_1"), 3);
  EXPECT_EQ(bank.patches, direct.patches);
  EXPECT_EQ(bank.layer, "relu3_1");
}

TEST(StyleBank, DuplicateScaleDoublesBank) {
  const Tensor style = ref::textured_image(40, 40, 6);
  const PatchBank one = build_style_bank(tiny_net(), style, "relu3_1", 3,
                                         AugmentationSet::identity());
  AugmentationSet twice = AugmentationSet::identity();
  twice.scales = {1.0, 1.0};
  const PatchBank two = build_style_bank(tiny_net(), style, "relu3_1", 3, twice);
  ASSERT_EQ(two.count(), 2 * one.count());
  EXPECT_TRUE(std::equal(one.patches.begin(), one.patches.end(), two.patches.begin()));
  EXPECT_TRUE(std::equal(one.patches.begin(), one.patches.end(),
                         two.patches.begin() + one.patches.size()));
  EXPECT_EQ(two.origins[one.count()].copy, 1);
}

TEST(StyleBank, DefaultScalesCountFromPoolingArithmetic) {
  const Tensor style = ref::textured_image(64, 64, 7);
  const PatchBank bank = build_style_bank(tiny_net(), style, "relu3_1", 3, AugmentationSet{});
  std::size_t expected = 0;
  for (double s : AugmentationSet{}.scales) {
    const int side = std::max(1, static_cast<int>(std::lround(64 * s)));
    const int f = ceil_half(ceil_half(side));
    expected += static_cast<std::size_t>(f - 2) * (f - 2);
  }
  EXPECT_EQ(bank.count(), expected);
  EXPECT_EQ(bank.copies.size(), 7u);
}

TEST(StyleBank, RotationsMultiplyCopies) {
  AugmentationSet aug = AugmentationSet::identity();
  aug.rotations = {-0.2, 0.0, 0.2};
  aug.enable_rotations = true;
  const PatchBank bank = build_style_bank(tiny_net(), ref::textured_image(32, 32, 8), "relu2_1",
                                          3, aug);
  EXPECT_EQ(bank.copies.size(), 3u);
  EXPECT_EQ(bank.count(), 3u * 14u * 14u);
}

TEST(StyleBank, AllCopiesTooSmallThrows) {
  EXPECT_THROW(build_style_bank(tiny_net(), ref::textured_image(8, 8, 9), "relu4_1", 3,
                                AugmentationSet::identity()),
               ConfigError);
}

TEST(Match, SelfMatch) {
  const PatchBank b = extract_patches(ref::random_tensor({4, 8, 8}, 10), 3);
  const MatchResult r = match_patches_scored(b, b);
  for (std::size_t i = 0; i < b.count(); ++i) {
    EXPECT_EQ(r.index[i], static_cast<int>(i));
    EXPECT_NEAR(r.ncc[i], 1.0f, 1e-5);
  }
}

TEST(Match, ScaleInvariance) {
  const PatchBank style = random_bank(40, 3, 3, 11);
  PatchBank query = random_bank(1, 3, 3, 12);
  for (int i = 0; i < query.dim(); ++i) query.patches[i] = 2.0f * style.patches[17 * style.dim() + i];
  query.norms[0] = 2.0f * style.norms[17];
  EXPECT_EQ(match_patches(query, style)[0], 17);
}

TEST(Match, EqualsBruteForce) {
  const PatchBank q = random_bank(50, 4, 3, 13);
  const PatchBank s = random_bank(200, 4, 3, 14);
  EXPECT_EQ(match_patches(q, s), brute_force(q, s));
}

TEST(Match, FeatureMapPathEqualsBankPath) {
  const Tensor f = ref::random_tensor({3, 9, 11}, 15);
  const PatchBank s = random_bank(120, 3, 3, 16);
  const MatchResult direct = match_feature_map(f, 3, 1, s);
  EXPECT_EQ(direct.index, match_patches(extract_patches(f, 3), s));
  EXPECT_EQ(match_feature_map(f, 3, 2, s).index, match_patches(extract_patches(f, 3, 2), s));
}

TEST(Match, DuplicateStylesTieToLowestIndex) {
  PatchBank s = random_bank(30, 2, 3, 17);
  // Copy patch 5 into slots 12 and 20, and a scaled copy into 25.
  for (int i = 0; i < s.dim(); ++i) {
    s.patches[12 * s.dim() + i] = s.patches[5 * s.dim() + i];
    s.patches[20 * s.dim() + i] = s.patches[5 * s.dim() + i];
    s.patches[25 * s.dim() + i] = 3.0f * s.patches[5 * s.dim() + i];
  }
  s.norms[12] = s.norms[20] = s.norms[5];
  s.norms[25] = 3.0f * s.norms[5];
  PatchBank q = random_bank(1, 2, 3, 18);
  for (int i = 0; i < q.dim(); ++i) q.patches[i] = s.patches[20 * s.dim() + i];
  q.norms[0] = s.norms[20];
  EXPECT_EQ(match_patches(q, s)[0], 5);
}

TEST(Match, ZeroQueryAndZeroStyle) {
  PatchBank s = random_bank(10, 2, 3, 19);
  std::fill_n(s.patches.begin() + 3 * s.dim(), s.dim(), 0.0f);
  s.norms[3] = 0.0f;
  PatchBank zero = random_bank(1, 2, 3, 20);
  std::ranges::fill(zero.patches, 0.0f);
  zero.norms[0] = 0.0f;
  EXPECT_EQ(match_patches(zero, s), brute_force(zero, s));
  const PatchBank q = random_bank(20, 2, 3, 21);
  EXPECT_EQ(match_patches(q, s), brute_force(q, s));
}

TEST(Match, NccWithinUnitInterval) {
  const PatchBank q = random_bank(80, 4, 3, 22);
  const PatchBank s = random_bank(150, 4, 3, 23);
  const MatchResult r = match_patches_scored(q, s);
  for (float v : r.ncc) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Match, EmptyBankOrMismatchThrows) {
  PatchBank empty;
  empty.k = 3;
  empty.channels = 2;
  EXPECT_THROW(match_patches(random_bank(3, 2, 3, 24), empty), ConfigError);
  EXPECT_THROW(match_patches(random_bank(3, 2, 3, 24), random_bank(3, 3, 3, 25)), ConfigError);
}

TEST(StyleEnergy, SelfAssignmentIsZero) {
  const Tensor f = ref::random_tensor({3, 7, 7}, 30);
  const PatchBank b = extract_patches(f, 3);
  std::vector<int> assign(b.count());
  std::iota(assign.begin(), assign.end(), 0);
  const StyleTerm t = style_energy_and_grad(f, 3, 1, b, assign);
  EXPECT_EQ(t.energy, 0.0);
  for (float v : t.grad.data()) EXPECT_EQ(v, 0.0f);
}

TEST(StyleEnergy, SinglePatchGradient) {
  const Tensor f = ref::random_tensor({2, 3, 3}, 31);
  const PatchBank s = random_bank(4, 2, 3, 32);
  const std::vector<int> assign{2};
  const StyleTerm t = style_energy_and_grad(f, 3, 1, s, assign);
  const auto p = s.patch(2);
  double e = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double d = static_cast<double>(f.data()[i]) - p[i];
    e += d * d;
    EXPECT_NEAR(t.grad.data()[i], 2.0 * d, 1e-6);
  }
  EXPECT_NEAR(t.energy, e, 1e-6 * std::max(1.0, e));
}

TEST(StyleEnergy, MatchesFiniteDifferences) {
  const Tensor f = ref::random_tensor({2, 6, 6}, 33);
  const PatchBank s = random_bank(25, 2, 3, 34);
  const std::vector<int> assign = match_feature_map(f, 3, 1, s).index;
  const StyleTerm t = style_energy_and_grad(f, 3, 1, s, assign);
  const auto styles = as_rows(s);
  EXPECT_NEAR(t.energy, ref::style_energy(ref::from_tensor(f), 3, 1, styles, assign),
              1e-6 * t.energy);
  const auto fd = ref::numeric_gradient(
      [&](const ref::Map& x) { return ref::style_energy(x, 3, 1, styles, assign); },
      ref::from_tensor(f), 1e-4);
  EXPECT_LT(ref::relative_error(t.grad.data(), fd), 1e-4);
}

TEST(StyleEnergy, StridedMatchesFiniteDifferences) {
  const Tensor f = ref::random_tensor({2, 7, 8}, 35);
  const PatchBank s = random_bank(25, 2, 3, 36);
  const std::vector<int> assign = match_feature_map(f, 3, 2, s).index;
  const StyleTerm t = style_energy_and_grad(f, 3, 2, s, assign);
  const auto styles = as_rows(s);
  const auto fd = ref::numeric_gradient(
      [&](const ref::Map& x) { return ref::style_energy(x, 3, 2, styles, assign); },
      ref::from_tensor(f), 1e-4);
  EXPECT_LT(ref::relative_error(t.grad.data(), fd), 1e-4);
}

TEST(StyleEnergy, BadAssignmentsThrow) {
  const Tensor f = ref::random_tensor({2, 4, 4}, 37);
  const PatchBank s = random_bank(5, 2, 3, 38);
  EXPECT_THROW(style_energy_and_grad(f, 3, 1, s, std::vector<int>{0, 1, 2}), ConfigError);
  EXPECT_THROW(style_energy_and_grad(f, 3, 1, s, std::vector<int>{0, 1, 2, 5}), ConfigError);
}

TEST(StyleEnergy, GradientVanishesAtReconstruction) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor f = ref::random_tensor({3, 8, 9}, 40 + seed);
    const PatchBank s = random_bank(60, 3, 3, 60 + seed);
    const std::vector<int> assign = match_feature_map(f, 3, 1, s).index;
    const Reconstruction rec = mrf_reconstruction(f.shape(), 3, 1, s, assign);
    const StyleTerm t = style_energy_and_grad(rec.blend, 3, 1, s, assign);
    float worst = 0.0f;
    for (float v : t.grad.data()) worst = std::max(worst, std::abs(v));
    EXPECT_LT(worst, 1e-4f) << "seed " << seed;
  }
}

TEST(StyleEnergy, CoverageCountsWindows) {
  const PatchBank s = random_bank(3, 1, 3, 70);
  const std::vector<int> assign(9, 1);
  const Reconstruction rec = mrf_reconstruction({1, 5, 5}, 3, 1, s, assign);
  EXPECT_EQ(rec.coverage.at(0, 0, 0), 1.0f);
  EXPECT_EQ(rec.coverage.at(0, 2, 2), 9.0f);
  EXPECT_EQ(rec.coverage.at(0, 0, 2), 3.0f);
}

TEST(StyleEnergy, ReMatchingWithEqualNormStylesNeverIncreasesEnergy) {
  // With equal style norms the NCC argmax is also the Euclidean nearest
  // neighbour, so E-step / M-step rounds descend. Unequal norms break this.
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Tensor f = ref::random_tensor({3, 8, 8}, 80 + seed);
    PatchBank s = random_bank(100, 3, 3, 90 + seed);
    for (std::size_t i = 0; i < s.count(); ++i) {
      const float inv = 1.0f / s.norms[i];
      for (int d = 0; d < s.dim(); ++d) s.patches[i * s.dim() + d] *= inv;
      s.norms[i] = 1.0f;
    }
    std::vector<int> assign = match_feature_map(f, 3, 1, s).index;
    for (int round = 0; round < 20; ++round) {
      f = mrf_reconstruction(f.shape(), 3, 1, s, assign).blend;
      const double before = style_energy_and_grad(f, 3, 1, s, assign).energy;
      assign = match_feature_map(f, 3, 1, s).index;
      const double after = style_energy_and_grad(f, 3, 1, s, assign).energy;
      EXPECT_LE(after, before * (1 + 1e-6)) << "seed " << seed << " round " << round;
    }
  }
}
