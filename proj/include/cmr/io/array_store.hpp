#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cmr/volume.hpp"

namespace cmr::io {

template <typename T>
struct Array {
  std::vector<std::size_t> dims;
  std::vector<T> data;
};

/// Write-side of the HDF5 array container. Datasets are chunked and
/// gzip-compressed. Content goes to `<path>.tmp` and is renamed into place by
/// commit(), so readers never observe a partial file.
class ArrayWriter {
 public:
  explicit ArrayWriter(std::filesystem::path path);
  ~ArrayWriter();
  ArrayWriter(const ArrayWriter&) = delete;
  ArrayWriter& operator=(const ArrayWriter&) = delete;

  void write(const std::string& name, std::span<const std::size_t> dims, std::span<const float> data);
  void write(const std::string& name, std::span<const std::size_t> dims, std::span<const std::uint8_t> data);
  void write(const std::string& name, std::span<const std::size_t> dims, std::span<const std::int32_t> data);
  void write(const std::string& name, const ImageVolume& v);
  void write(const std::string& name, const LabelVolume& v);

  /// String attribute on the root group (JSON metadata by convention).
  void set_attribute(const std::string& name, const std::string& value);

  void commit();

 private:
  std::filesystem::path path_;
  std::filesystem::path tmp_;
  long long file_ = -1;
};

class ArrayReader {
 public:
  explicit ArrayReader(const std::filesystem::path& path);
  ~ArrayReader();
  ArrayReader(const ArrayReader&) = delete;
  ArrayReader& operator=(const ArrayReader&) = delete;

  bool has(const std::string& name) const;
  Array<float> read_float(const std::string& name) const;
  Array<std::uint8_t> read_u8(const std::string& name) const;
  Array<std::int32_t> read_i32(const std::string& name) const;
  ImageVolume read_image(const std::string& name) const;
  LabelVolume read_labels(const std::string& name) const;
  std::string attribute(const std::string& name) const;

 private:
  std::filesystem::path path_;
  long long file_ = -1;
};

}  // namespace cmr::io
