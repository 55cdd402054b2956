#include <doctest.h>

#include <random>

#include "cmr/unc/uncertainty.hpp"

using namespace cmr;

namespace {

seg::ProbabilityVolume single_voxel(std::vector<float> p) {
  seg::ProbabilityVolume pv;
  pv.shape = {1, 1, 1};
  pv.probs = std::move(p);
  return pv;
}

}  // namespace

TEST_CASE("entropy map fixtures") {
  CHECK(unc::entropy_map(single_voxel({0.25f, 0.25f, 0.25f, 0.25f})).values[0] == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(unc::entropy_map(single_voxel({1, 0, 0, 0})).values[0] == 0.0f);
  CHECK(unc::entropy_map(single_voxel({0.5f, 0.5f, 0, 0})).values[0] == doctest::Approx(0.5).epsilon(1e-7));
}

TEST_CASE("entropy is invariant to class permutation") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(0, 1);
  for (int i = 0; i < 50; ++i) {
    std::vector<float> p(4);
    float s = 0;
    for (auto& x : p) s += x = u(rng);
    for (auto& x : p) x /= s;
    const float a = unc::entropy_map(single_voxel(p)).values[0];
    std::vector<float> q{p[2], p[0], p[3], p[1]};
    CHECK(unc::entropy_map(single_voxel(q)).values[0] == doctest::Approx(a).epsilon(1e-6));
    CHECK(a >= 0.0f);
    CHECK(a <= 1.0f);
  }
}

TEST_CASE("bayesian map fixtures") {
  auto b1 = unc::bayesian_values(std::vector<float>{1, 0, 0, 0, 0, 1, 0, 0}, 2, 1, 4);
  CHECK(b1[0] == doctest::Approx(0.35355339).epsilon(1e-6));
  auto b2 = unc::bayesian_values(std::vector<float>{0.8f, 0.2f, 0, 0, 0.6f, 0.4f, 0, 0}, 2, 1, 4);
  CHECK(b2[0] == doctest::Approx(0.07071068).epsilon(1e-5));
  auto b3 = unc::bayesian_values(std::vector<float>{0.3f, 0.3f, 0.2f, 0.2f, 0.3f, 0.3f, 0.2f, 0.2f, 0.3f, 0.3f, 0.2f, 0.2f}, 3, 1, 4);
  CHECK(b3[0] == 0.0f);
  CHECK_THROWS_AS(unc::bayesian_values(std::vector<float>{1, 0, 0, 0}, 1, 1, 4), Error);
}

TEST_CASE("bayesian map never exceeds one half") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(0, 1);
  const int T = 7, N = 200;
  std::vector<float> s(T * N * 4);
  for (int t = 0; t < T; ++t)
    for (int v = 0; v < N; ++v) {
      float sum = 0;
      float* p = &s[(t * N + v) * 4];
      for (int c = 0; c < 4; ++c) sum += p[c] = u(rng) < 0.3f ? 0.0f : u(rng);
      if (sum == 0) p[0] = sum = 1;
      for (int c = 0; c < 4; ++c) p[c] /= sum;
    }
  for (float b : unc::bayesian_values(s, T, N, 4)) CHECK(b <= 0.5f);
}

TEST_CASE("bayesian map requires samples") {
  auto pv = single_voxel({1, 0, 0, 0});
  CHECK_THROWS_AS(unc::bayesian_map(pv), Error);
  auto mc = seg::from_samples({1, 1, 1}, 2, {1, 0, 0, 0, 0, 1, 0, 0});
  auto m = unc::bayesian_map(mc);
  CHECK(m.T == 2);
  CHECK(m.kind == unc::MapKind::Bayesian);
}

TEST_CASE("risk coverage") {
  SUBCASE("perfect prediction has zero risk") {
    LabelVolume ref({1, 10, 10}, 0);
    for (int y = 2; y < 8; ++y)
      for (int x = 2; x < 8; ++x) ref(0, y, x) = 3;
    ImageVolume u({1, 10, 10}, 0.3f);
    auto c = unc::risk_coverage_curve(u, ref, ref);
    for (double r : c.risk) CHECK(r == 0.0);
  }
  SUBCASE("constructed calibration") {
    // 10x10 foreground box; 10 errors carry the top uncertainties.
    LabelVolume ref({1, 10, 10}, 1), pred = ref;
    ImageVolume u({1, 10, 10}, 0.0f);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 100; ++i) u[i] = std::uniform_real_distribution<float>(0, 0.5f)(rng);
    for (int i = 0; i < 10; ++i) {
      pred[i * 7] = 2;
      u[i * 7] = 0.9f + 0.001f * i;
    }
    auto c = unc::risk_coverage_curve(u, pred, ref);
    CHECK(c.voxels == 100);
    CHECK(c.total_errors == 10);
    CHECK(c.risk[90] == 0.0);
    CHECK(c.risk[91] > 0.0);
    CHECK(c.risk[100] == 10.0);
    for (int p = 1; p < 101; ++p) CHECK(c.risk[p] >= c.risk[p - 1]);
  }
  SUBCASE("random fixtures are monotone") {
    std::mt19937_64 rng(9);
    for (int k = 0; k < 30; ++k) {
      LabelVolume ref({3, 13, 11}, 0), pred({3, 13, 11}, 0);
      ImageVolume u({3, 13, 11}, 0.0f);
      for (std::size_t i = 0; i < ref.size(); ++i) {
        ref[i] = std::uniform_int_distribution<int>(0, 3)(rng);
        pred[i] = std::uniform_int_distribution<int>(0, 3)(rng);
        u[i] = std::uniform_int_distribution<int>(0, 5)(rng) / 5.0f;
      }
      auto c = unc::risk_coverage_curve(u, pred, ref);
      for (int p = 1; p < 101; ++p) CHECK(c.risk[p] >= c.risk[p - 1]);
      CHECK(c.risk[100] == static_cast<double>(c.total_errors));
      CHECK(c.risk[0] == 0.0);
    }
  }
  SUBCASE("empty reference") {
    LabelVolume ref({1, 4, 4}, 0);
    CHECK_THROWS_AS(unc::risk_coverage_curve(ImageVolume({1, 4, 4}), ref, ref), Error);
  }
  SUBCASE("crop to the reference box") {
    LabelVolume ref({1, 10, 10}, 0), pred({1, 10, 10}, 0);
    ref(0, 4, 4) = ref(0, 5, 5) = 3;
    pred(0, 0, 0) = 3;  // outside the box, ignored
    pred(0, 4, 4) = pred(0, 5, 5) = 3;
    pred(0, 4, 5) = 3;
    auto c = unc::risk_coverage_curve(ImageVolume({1, 10, 10}), pred, ref);
    CHECK(c.voxels == 4);
    CHECK(c.total_errors == 1);
  }
}
