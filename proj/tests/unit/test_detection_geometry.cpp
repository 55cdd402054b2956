#include <doctest.h>

#include <random>

#include "cmr/detect/geometry.hpp"

using namespace cmr;
using detect::CropRect;

namespace {

Slice2D<std::uint8_t> box_mask(int h, int w, int y0, int x0, int bh, int bw) {
  Slice2D<std::uint8_t> m(h, w, 0);
  for (int y = y0; y < y0 + bh; ++y)
    for (int x = x0; x < x0 + bw; ++x) m(y, x) = 1;
  return m;
}

}  // namespace

TEST_CASE("crop geometry examples") {
  auto empty = detect::detection_crop_rect(Slice2D<std::uint8_t>(128, 160, 0));
  CHECK(empty == CropRect{24, 40, 80, 80});
  auto r = detect::detection_crop_rect(box_mask(200, 200, 50, 60, 70, 90));
  CHECK(r.height == 80);
  CHECK(r.width == 96);
  auto r2 = detect::detection_crop_rect(box_mask(200, 200, 30, 40, 120, 128));
  CHECK(r2.height == 120);
  CHECK(r2.width == 128);
  CHECK(r2.row == 30);
  CHECK(r2.col == 40);
}

TEST_CASE("crop encloses the segmentation and stays inside large slices") {
  std::mt19937_64 rng(2);
  for (int k = 0; k < 200; ++k) {
    auto d = [&](int a, int b) { return std::uniform_int_distribution<int>(a, b)(rng); };
    const int h = d(90, 200), w = d(90, 200);
    const int bh = d(1, h), bw = d(1, w);
    const int y0 = d(0, h - bh), x0 = d(0, w - bw);
    auto r = detect::detection_crop_rect(box_mask(h, w, y0, x0, bh, bw));
    CHECK(r.height % 8 == 0);
    CHECK(r.width % 8 == 0);
    CHECK(r.height >= 80);
    CHECK(r.width >= 80);
    CHECK(r.row <= y0);
    CHECK(r.col <= x0);
    CHECK(r.row + r.height >= y0 + bh);
    CHECK(r.col + r.width >= x0 + bw);
    if (r.height <= h) {
      CHECK(r.row >= 0);
      CHECK(r.row + r.height <= h);
    }
  }
}

TEST_CASE("small slices are zero padded") {
  Slice2D<float> img(60, 70, 1.0f), u(60, 70, 0.5f);
  auto c = detect::crop_for_detection(img, u, Slice2D<std::uint8_t>(60, 70, 0));
  CHECK(c.image.h == 80);
  CHECK(c.image.w == 80);
  CHECK(c.rect.row == -10);
  CHECK(c.rect.col == -5);
  CHECK(c.image(0, 0) == 0.0f);
  CHECK(c.image(10, 5) == 1.0f);
  CHECK(c.umap(40, 40) == 0.5f);
}

TEST_CASE("positive weight") {
  CHECK(detect::compute_w_pos({{2, 100}, {4, 200}}) == doctest::Approx(49.0));
  CHECK(detect::compute_w_pos({{50, 100}}) == doctest::Approx(1.0));
  const double lo = detect::compute_w_pos({{3, 100}});
  const double hi = detect::compute_w_pos({{15, 1000}});
  CHECK(lo == doctest::Approx(32.333).epsilon(1e-3));
  CHECK(hi == doctest::Approx(65.667).epsilon(1e-3));
  CHECK_THROWS_AS(detect::compute_w_pos({{0, 100}}), Error);
}

TEST_CASE("thresholding and region mapping") {
  detect::DetectionResult res;
  res.volume_shape = {2, 90, 90};
  detect::SliceDetection s;
  s.z = 1;
  s.rect = {-5, 20, 80, 80};
  s.rows = s.cols = 10;
  s.probs.assign(100, 0.0f);
  for (int i = 0; i < 100; ++i) s.probs[i] = i / 100.0f;
  res.slices.push_back(s);
  detect::apply_threshold(res, 0.0);
  CHECK(res.flagged_regions.size() == 90);  // last grid column lies past the slice
  std::size_t prev = 101;
  for (double t = 0; t <= 1.0; t += 0.05) {
    detect::apply_threshold(res, t);
    CHECK(res.flagged_regions.size() <= prev);
    prev = res.flagged_regions.size();
  }
  detect::apply_threshold(res, 1.0 + 1e-6);
  CHECK(res.flagged_regions.empty());
  detect::apply_threshold(res, 0.0);
  for (const auto& r : detect::flagged_voxel_regions(res)) {
    CHECK(r.y0 >= 0);
    CHECK(r.x0 >= 0);
    CHECK(r.y1 <= 90);
    CHECK(r.x1 <= 90);
    CHECK(r.y1 > r.y0);
    CHECK(r.x1 > r.x0);
  }
  const auto first = detect::region_extent(res, {1, 0, 0});
  CHECK(first.y0 == 0);
  CHECK(first.y1 == 3);
  CHECK(first.x0 == 20);
  CHECK(first.x1 == 28);
  auto mask = detect::region_mask(res);
  long long n = 0;
  for (auto v : mask.data()) n += v;
  CHECK(n == 75 * 70);  // rows 0..74, cols 20..89
}
