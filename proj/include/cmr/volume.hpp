#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cmr/error.hpp"

namespace cmr {

/// Dense (Z, H, W) volume stored slice-major, row-major within a slice.
struct Shape3 {
  int z = 0;
  int h = 0;
  int w = 0;

  std::size_t size() const { return static_cast<std::size_t>(z) * h * w; }
  std::size_t slice_size() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape3&) const = default;
};

template <typename T>
class Volume {
 public:
  Volume() = default;
  explicit Volume(Shape3 shape, T fill = T{}) : shape_(shape), data_(shape.size(), fill) {}
  Volume(Shape3 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) throw Error(ErrorCode::ShapeMismatch, "volume payload size");
  }

  const Shape3& shape() const { return shape_; }
  int depth() const { return shape_.z; }
  int height() const { return shape_.h; }
  int width() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(int z, int y, int x) const {
    return (static_cast<std::size_t>(z) * shape_.h + y) * shape_.w + x;
  }
  bool contains(int z, int y, int x) const {
    return z >= 0 && y >= 0 && x >= 0 && z < shape_.z && y < shape_.h && x < shape_.w;
  }

  T& operator()(int z, int y, int x) { return data_[index(z, y, x)]; }
  const T& operator()(int z, int y, int x) const { return data_[index(z, y, x)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> slice(int z) { return {data_.data() + z * shape_.slice_size(), shape_.slice_size()}; }
  std::span<const T> slice(int z) const {
    return {data_.data() + z * shape_.slice_size(), shape_.slice_size()};
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool operator==(const Volume&) const = default;

 private:
  Shape3 shape_;
  std::vector<T> data_;
};

using LabelVolume = Volume<std::uint8_t>;
using ImageVolume = Volume<float>;
using MaskVolume = Volume<std::uint8_t>;

inline constexpr int kNumClasses = 4;
enum Label : std::uint8_t { kBackground = 0, kRV = 1, kLVM = 2, kLV = 3 };

/// Physical voxel size in millimetres.
struct Spacing {
  double dx = 1.0;  // along width
  double dy = 1.0;  // along height
  double dz = 1.0;  // between slices

  double voxel_volume_mm3() const { return dx * dy * dz; }
  bool operator==(const Spacing&) const = default;
};

/// 2D slice view helper used by per-slice algorithms.
template <typename T>
struct Slice2D {
  int h = 0;
  int w = 0;
  std::vector<T> data;

  Slice2D() = default;
  Slice2D(int h_, int w_, T fill = T{}) : h(h_), w(w_), data(static_cast<std::size_t>(h_) * w_, fill) {}
  T& operator()(int y, int x) { return data[static_cast<std::size_t>(y) * w + x]; }
  const T& operator()(int y, int x) const { return data[static_cast<std::size_t>(y) * w + x]; }
  bool contains(int y, int x) const { return y >= 0 && x >= 0 && y < h && x < w; }
};

template <typename T>
Slice2D<T> extract_slice(const Volume<T>& v, int z) {
  Slice2D<T> s(v.height(), v.width());
  auto src = v.slice(z);
  std::copy(src.begin(), src.end(), s.data.begin());
  return s;
}

}  // namespace cmr
