#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cmr/detect/geometry.hpp"
#include "cmr/volume.hpp"

namespace cmr::io {

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // RGB, row-major

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}
  void set(int y, int x, std::uint8_t r, std::uint8_t g, std::uint8_t b);
};

std::vector<std::uint8_t> encode_png(const RgbImage& img);
std::vector<std::uint8_t> encode_png_gray(const Slice2D<float>& img);  // values in [0, 1]
void write_png(const std::filesystem::path& path, const RgbImage& img);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);

struct OverlayOptions {
  bool contours = true;
  bool uncertainty = true;
  bool regions = true;
};

/// Grey-scale slice with segmentation contours (RV blue, LVM green, LV red),
/// an optional uncertainty heat overlay, and flagged regions outlined in
/// yellow. Region coordinates are slice coordinates.
RgbImage render_overlay(const Slice2D<float>& image, const Slice2D<std::uint8_t>* labels,
                        const Slice2D<float>* umap, const std::vector<detect::VoxelRegion>& regions,
                        const OverlayOptions& options = {});

}  // namespace cmr::io
