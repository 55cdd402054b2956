#include <doctest.h>

#include <random>

#include "../common/oracles.hpp"
#include "cmr/eval/correction.hpp"
#include "cmr/eval/curves.hpp"
#include "cmr/eval/metrics.hpp"

using namespace cmr;

TEST_CASE("simulated correction") {
  std::mt19937_64 rng(8);
  const Shape3 s{3, 16, 16};
  for (int k = 0; k < 50; ++k) {
    const auto pred = oracle::random_labels(rng, s, 0.4);
    const auto ref = oracle::random_labels(rng, s, 0.4);
    std::vector<detect::VoxelRegion> regions;
    for (int i = 0; i < 4; ++i) {
      const int z = std::uniform_int_distribution<int>(0, 2)(rng);
      const int gy = std::uniform_int_distribution<int>(0, 1)(rng), gx = std::uniform_int_distribution<int>(0, 1)(rng);
      regions.push_back({z, gy * 8, gx * 8, gy * 8 + 8, gx * 8 + 8});
    }
    const auto out = eval::simulate_correction(pred, ref, regions);
    for (std::uint8_t c = 1; c < 4; ++c) CHECK(eval::dice_3d(out, ref, c) >= eval::dice_3d(pred, ref, c));
  }
  const auto pred = oracle::random_labels(rng, s, 0.4);
  const auto ref = oracle::random_labels(rng, s, 0.4);
  CHECK(eval::simulate_correction(pred, ref, std::vector<detect::VoxelRegion>{}) == pred);
  std::vector<detect::VoxelRegion> all;
  for (int z = 0; z < 3; ++z) all.push_back({z, 0, 0, 16, 16});
  CHECK(eval::simulate_correction(pred, ref, all) == ref);
  CHECK_THROWS_AS(eval::simulate_correction(pred, ref, {{3, 0, 0, 8, 8}}), Error);
  CHECK_THROWS_AS(eval::simulate_correction(pred, ref, {{0, 10, 10, 18, 18}}), Error);
}

TEST_CASE("correcting false negatives increases dice") {
  LabelVolume ref({1, 16, 16}, 0);
  for (int y = 4; y < 12; ++y)
    for (int x = 4; x < 12; ++x) ref(0, y, x) = kLV;
  auto pred = ref;
  pred(0, 4, 4) = pred(0, 4, 5) = pred(0, 5, 4) = 0;
  auto out = eval::simulate_correction(pred, ref, {{0, 0, 0, 8, 8}});
  CHECK(eval::dice_3d(out, ref, kLV) > eval::dice_3d(pred, ref, kLV));
}

TEST_CASE("precision recall and AP") {
  auto pr = eval::precision_recall({1, 0, 1, 0}, {true, false, true, false});
  CHECK(pr.average_precision == 1.0);
  std::mt19937_64 rng(6);
  for (int k = 0; k < 200; ++k) {
    const int n = std::uniform_int_distribution<int>(1, 12)(rng);
    std::vector<double> s(n);
    std::vector<bool> l(n);
    for (int i = 0; i < n; ++i) {
      s[i] = std::uniform_int_distribution<int>(0, 5)(rng) / 5.0;
      l[i] = std::uniform_int_distribution<int>(0, 1)(rng);
    }
    l[0] = true;
    CHECK(eval::precision_recall(s, l).average_precision == doctest::Approx(oracle::average_precision(s, l)));
  }
  // Inverted ranking on a balanced set approaches the positive prevalence.
  std::vector<double> s;
  std::vector<bool> l;
  for (int i = 0; i < 200; ++i) {
    s.push_back(i);
    l.push_back(i < 100);
  }
  CHECK(eval::precision_recall(s, l).average_precision == doctest::Approx(0.5).epsilon(0.02));
  CHECK_THROWS_AS(eval::precision_recall({0.5}, {false}), Error);
}

TEST_CASE("sensitivity against false positive regions") {
  detect::DetectionResult det;
  det.volume_shape = {1, 16, 16};
  detect::SliceDetection s;
  s.z = 0;
  s.rect = {0, 0, 16, 16};
  s.rows = s.cols = 2;
  s.probs = {0.9f, 0.2f, 0.0f, 0.0f};
  det.slices.push_back(s);
  MaskVolume fail({1, 16, 16}, 0);
  fail(0, 1, 1) = fail(0, 2, 2) = 1;  // cell (0,0)
  auto curve = eval::voxel_sensitivity_vs_fp({det}, {fail}, {0.0, 0.5, 1.01});
  REQUIRE(curve.size() == 3);
  CHECK(*curve[0].sensitivity == 1.0);
  CHECK(curve[0].false_positive_regions == 3.0);
  CHECK(*curve[1].sensitivity == 1.0);
  CHECK(curve[1].false_positive_regions == 0.0);
  CHECK(*curve[2].sensitivity == 0.0);
  CHECK(curve[2].false_positive_regions == 0.0);
  auto none = eval::voxel_sensitivity_vs_fp({det}, {MaskVolume({1, 16, 16}, 0)}, {0.5});
  CHECK_FALSE(none[0].sensitivity.has_value());

  auto pr = eval::slice_detection_pr({det}, {fail});
  CHECK(pr.average_precision == 1.0);
}
