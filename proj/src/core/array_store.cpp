#include "cmr/io/array_store.hpp"

#include <hdf5.h>

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

namespace cmr::io {
namespace {

// RAII for transient HDF5 identifiers.
class H5Id {
 public:
  H5Id(hid_t id, herr_t (*closer)(hid_t)) : id_(id), closer_(closer) {}
  ~H5Id() {
    if (id_ >= 0) closer_(id_);
  }
  H5Id(const H5Id&) = delete;
  H5Id& operator=(const H5Id&) = delete;
  hid_t get() const { return id_; }
  bool ok() const { return id_ >= 0; }

 private:
  hid_t id_;
  herr_t (*closer_)(hid_t);
};

void check(herr_t status, const std::string& what) {
  if (status < 0) throw Error(ErrorCode::IoError, "HDF5: " + what);
}

struct SilenceHdf5 {
  SilenceHdf5() { H5Eset_auto2(H5E_DEFAULT, nullptr, nullptr); }
};
const SilenceHdf5 silence_once;

void write_dataset(hid_t file, const std::string& name, std::span<const std::size_t> dims, const void* data,
                   hid_t mem_type, hid_t file_type, std::size_t count) {
  const std::size_t expected =
      std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
  if (expected != count) throw Error(ErrorCode::ShapeMismatch, "dataset " + name + " dims/payload mismatch");
  std::vector<hsize_t> hdims(dims.begin(), dims.end());
  H5Id space(H5Screate_simple(static_cast<int>(hdims.size()), hdims.data(), nullptr), H5Sclose);
  H5Id plist(H5Pcreate(H5P_DATASET_CREATE), H5Pclose);
  if (count > 0 && !hdims.empty()) {
    // Chunk along the leading axis, one slice-sized block at a time.
    std::vector<hsize_t> chunk = hdims;
    chunk[0] = 1;
    if (hdims.size() == 1) chunk[0] = std::min<hsize_t>(hdims[0], 1 << 16);
    check(H5Pset_chunk(plist.get(), static_cast<int>(chunk.size()), chunk.data()), "set_chunk " + name);
    check(H5Pset_deflate(plist.get(), 4), "set_deflate " + name);
  }
  H5Id ds(H5Dcreate2(file, name.c_str(), file_type, space.get(), H5P_DEFAULT, plist.get(), H5P_DEFAULT), H5Dclose);
  if (!ds.ok()) throw Error(ErrorCode::IoError, "cannot create dataset " + name);
  if (count > 0) check(H5Dwrite(ds.get(), mem_type, H5S_ALL, H5S_ALL, H5P_DEFAULT, data), "write " + name);
}

template <typename T>
Array<T> read_dataset(hid_t file, const std::string& name, hid_t mem_type, const std::filesystem::path& path) {
  H5Id ds(H5Dopen2(file, name.c_str(), H5P_DEFAULT), H5Dclose);
  if (!ds.ok()) throw Error(ErrorCode::NotFound, fmt::format("{}:{}", path.string(), name));
  H5Id space(H5Dget_space(ds.get()), H5Sclose);
  const int rank = H5Sget_simple_extent_ndims(space.get());
  std::vector<hsize_t> hdims(static_cast<std::size_t>(std::max(rank, 0)));
  H5Sget_simple_extent_dims(space.get(), hdims.data(), nullptr);
  Array<T> out;
  out.dims.assign(hdims.begin(), hdims.end());
  const std::size_t n = std::accumulate(out.dims.begin(), out.dims.end(), std::size_t{1}, std::multiplies<>());
  out.data.resize(n);
  if (n > 0) check(H5Dread(ds.get(), mem_type, H5S_ALL, H5S_ALL, H5P_DEFAULT, out.data.data()), "read " + name);
  return out;
}

Shape3 shape_of(const std::vector<std::size_t>& dims, const std::string& name) {
  if (dims.size() != 3) throw Error(ErrorCode::ShapeMismatch, name + " is not a 3D array");
  return Shape3{static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2])};
}

}  // namespace

ArrayWriter::ArrayWriter(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  tmp_ = path_;
  tmp_ += ".tmp";
  file_ = H5Fcreate(tmp_.c_str(), H5F_ACC_TRUNC, H5P_DEFAULT, H5P_DEFAULT);
  if (file_ < 0) throw Error(ErrorCode::IoError, "cannot create " + tmp_.string());
}

ArrayWriter::~ArrayWriter() {
  if (file_ >= 0) {
    H5Fclose(file_);
    std::error_code ec;
    std::filesystem::remove(tmp_, ec);
  }
}

void ArrayWriter::write(const std::string& name, std::span<const std::size_t> dims, std::span<const float> data) {
  write_dataset(file_, name, dims, data.data(), H5T_NATIVE_FLOAT, H5T_IEEE_F32LE, data.size());
}
void ArrayWriter::write(const std::string& name, std::span<const std::size_t> dims,
                        std::span<const std::uint8_t> data) {
  write_dataset(file_, name, dims, data.data(), H5T_NATIVE_UINT8, H5T_STD_U8LE, data.size());
}
void ArrayWriter::write(const std::string& name, std::span<const std::size_t> dims,
                        std::span<const std::int32_t> data) {
  write_dataset(file_, name, dims, data.data(), H5T_NATIVE_INT32, H5T_STD_I32LE, data.size());
}
void ArrayWriter::write(const std::string& name, const ImageVolume& v) {
  const std::size_t dims[3] = {std::size_t(v.depth()), std::size_t(v.height()), std::size_t(v.width())};
  write(name, dims, std::span<const float>(v.data()));
}
void ArrayWriter::write(const std::string& name, const LabelVolume& v) {
  const std::size_t dims[3] = {std::size_t(v.depth()), std::size_t(v.height()), std::size_t(v.width())};
  write(name, dims, std::span<const std::uint8_t>(v.data()));
}

void ArrayWriter::set_attribute(const std::string& name, const std::string& value) {
  H5Id type(H5Tcopy(H5T_C_S1), H5Tclose);
  check(H5Tset_size(type.get(), std::max<std::size_t>(value.size(), 1)), "attr size");
  H5Id space(H5Screate(H5S_SCALAR), H5Sclose);
  if (H5Aexists(file_, name.c_str()) > 0) H5Adelete(file_, name.c_str());
  H5Id attr(H5Acreate2(file_, name.c_str(), type.get(), space.get(), H5P_DEFAULT, H5P_DEFAULT), H5Aclose);
  if (!attr.ok()) throw Error(ErrorCode::IoError, "cannot create attribute " + name);
  const std::string padded = value.empty() ? std::string(1, '\0') : value;
  check(H5Awrite(attr.get(), type.get(), padded.data()), "write attribute " + name);
}

void ArrayWriter::commit() {
  if (file_ < 0) return;
  check(H5Fclose(file_), "close " + tmp_.string());
  file_ = -1;
  std::filesystem::rename(tmp_, path_);
}

ArrayReader::ArrayReader(const std::filesystem::path& path) : path_(path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::MissingFile, path.string());
  file_ = H5Fopen(path.c_str(), H5F_ACC_RDONLY, H5P_DEFAULT);
  if (file_ < 0) throw Error(ErrorCode::IoError, "cannot open " + path.string());
}

ArrayReader::~ArrayReader() {
  if (file_ >= 0) H5Fclose(file_);
}

bool ArrayReader::has(const std::string& name) const { return H5Lexists(file_, name.c_str(), H5P_DEFAULT) > 0; }

Array<float> ArrayReader::read_float(const std::string& name) const {
  return read_dataset<float>(file_, name, H5T_NATIVE_FLOAT, path_);
}
Array<std::uint8_t> ArrayReader::read_u8(const std::string& name) const {
  return read_dataset<std::uint8_t>(file_, name, H5T_NATIVE_UINT8, path_);
}
Array<std::int32_t> ArrayReader::read_i32(const std::string& name) const {
  return read_dataset<std::int32_t>(file_, name, H5T_NATIVE_INT32, path_);
}
ImageVolume ArrayReader::read_image(const std::string& name) const {
  auto a = read_float(name);
  return ImageVolume(shape_of(a.dims, name), std::move(a.data));
}
LabelVolume ArrayReader::read_labels(const std::string& name) const {
  auto a = read_u8(name);
  return LabelVolume(shape_of(a.dims, name), std::move(a.data));
}

std::string ArrayReader::attribute(const std::string& name) const {
  if (H5Aexists(file_, name.c_str()) <= 0) throw Error(ErrorCode::NotFound, path_.string() + " attribute " + name);
  H5Id attr(H5Aopen(file_, name.c_str(), H5P_DEFAULT), H5Aclose);
  H5Id type(H5Aget_type(attr.get()), H5Tclose);
  const std::size_t size = H5Tget_size(type.get());
  std::string out(size, '\0');
  H5Id mem(H5Tcopy(H5T_C_S1), H5Tclose);
  H5Tset_size(mem.get(), size);
  check(H5Aread(attr.get(), mem.get(), out.data()), "read attribute " + name);
  while (!out.empty() && out.back() == '\0') out.pop_back();
  return out;
}

}  // namespace cmr::io
