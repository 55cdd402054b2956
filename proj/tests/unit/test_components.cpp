#include <doctest.h>

#include <random>

#include "../common/oracles.hpp"
#include "cmr/components.hpp"

using namespace cmr;

TEST_CASE("distance transform equals brute force") {
  std::mt19937_64 rng(13);
  for (int k = 0; k < 40; ++k) {
    const int h = std::uniform_int_distribution<int>(1, 14)(rng), w = std::uniform_int_distribution<int>(1, 14)(rng);
    std::vector<std::uint8_t> seeds(h * w);
    for (auto& s : seeds) s = std::uniform_real_distribution<double>(0, 1)(rng) < 0.1;
    auto fast = squared_distance_2d(seeds, h, w);
    auto brute = oracle::sq_distance_2d(seeds, h, w);
    for (int i = 0; i < h * w; ++i) CHECK(fast[i] == brute[i]);
  }
}

TEST_CASE("component labelling") {
  std::mt19937_64 rng(17);
  for (int k = 0; k < 30; ++k) {
    std::vector<std::uint8_t> m(15 * 13);
    for (auto& v : m) v = std::uniform_real_distribution<double>(0, 1)(rng) < 0.45;
    auto comps = label_components_2d(m, 15, 13, 4);
    auto sizes = oracle::cluster_sizes_4(m, 15, 13);
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (!m[i]) {
        CHECK(comps.labels[i] == 0);
        continue;
      }
      CHECK(comps.sizes[comps.labels[i] - 1] == sizes[i]);
    }
  }
  // diagonal neighbours join only under 8/26 connectivity
  std::vector<std::uint8_t> diag{1, 0, 0, 1};
  CHECK(label_components_2d(diag, 2, 2, 4).count() == 2);
  CHECK(label_components_2d(diag, 2, 2, 8).count() == 1);
  std::vector<std::uint8_t> corner(8, 0);
  corner[0] = corner[7] = 1;
  CHECK(label_components_3d(corner, {2, 2, 2}, 6).count() == 2);
  CHECK(label_components_3d(corner, {2, 2, 2}, 26).count() == 1);
}
