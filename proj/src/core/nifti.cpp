#include "cmr/io/nifti.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>

#include "cmr/error.hpp"

namespace cmr::io {
namespace {

// NIfTI-1 header field offsets.
constexpr int kHeaderSize = 348;
constexpr int kOffDim = 40;
constexpr int kOffDatatype = 70;
constexpr int kOffBitpix = 72;
constexpr int kOffPixdim = 76;
constexpr int kOffVoxOffset = 108;
constexpr int kOffSclSlope = 112;
constexpr int kOffSclInter = 116;
constexpr int kOffQform = 252;
constexpr int kOffSform = 254;
constexpr int kOffMagic = 344;

enum Datatype : std::int16_t {
  DT_UINT8 = 2,
  DT_INT16 = 4,
  DT_INT32 = 8,
  DT_FLOAT32 = 16,
  DT_FLOAT64 = 64,
  DT_INT8 = 256,
  DT_UINT16 = 512,
  DT_UINT32 = 768,
};

struct GzCloser {
  void operator()(gzFile_s* f) const {
    if (f) gzclose(f);
  }
};
using GzHandle = std::unique_ptr<gzFile_s, GzCloser>;

template <typename T>
T get(const unsigned char* buf, int off, bool swap) {
  T v;
  std::memcpy(&v, buf + off, sizeof(T));
  if (swap) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(T));
  }
  return v;
}

template <typename T>
void put(unsigned char* buf, int off, T v) {
  std::memcpy(buf + off, &v, sizeof(T));
}

void read_exact(gzFile f, void* dst, std::size_t n, const std::filesystem::path& path) {
  auto* out = static_cast<unsigned char*>(dst);
  while (n > 0) {
    const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
    const int got = gzread(f, out, chunk);
    if (got <= 0) throw Error(ErrorCode::MalformedHeader, "truncated NIfTI payload: " + path.string());
    out += got;
    n -= static_cast<std::size_t>(got);
  }
}

template <typename T>
void convert(const std::vector<unsigned char>& raw, bool swap, std::vector<float>& out) {
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(get<T>(raw.data(), static_cast<int>(i * sizeof(T)), swap));
}

}  // namespace

NiftiVolume read_nifti(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::MissingFile, path.string());
  GzHandle file(gzopen(path.c_str(), "rb"));
  if (!file) throw Error(ErrorCode::MissingFile, path.string());

  unsigned char hdr[kHeaderSize];
  if (gzread(file.get(), hdr, kHeaderSize) != kHeaderSize)
    throw Error(ErrorCode::MalformedHeader, "short header: " + path.string());

  bool swap = false;
  std::int32_t sizeof_hdr = get<std::int32_t>(hdr, 0, false);
  if (sizeof_hdr != kHeaderSize) {
    swap = true;
    sizeof_hdr = get<std::int32_t>(hdr, 0, true);
    if (sizeof_hdr != kHeaderSize) throw Error(ErrorCode::MalformedHeader, "sizeof_hdr != 348: " + path.string());
  }
  if (std::memcmp(hdr + kOffMagic, "n+1", 3) != 0)
    throw Error(ErrorCode::MalformedHeader, "not a single-file NIfTI-1 image: " + path.string());

  const auto ndim = get<std::int16_t>(hdr, kOffDim, swap);
  if (ndim < 2 || ndim > 7) throw Error(ErrorCode::MalformedHeader, "bad dim[0]: " + path.string());

  NiftiVolume vol;
  for (int i = 0; i < 3; ++i) {
    const auto d = (i < ndim) ? get<std::int16_t>(hdr, kOffDim + 2 * (i + 1), swap) : std::int16_t{1};
    if (d <= 0) throw Error(ErrorCode::MalformedHeader, "non-positive dimension: " + path.string());
    vol.dims[i] = d;
    const float pd = get<float>(hdr, kOffPixdim + 4 * (i + 1), swap);
    vol.pixdim[i] = (std::isfinite(pd) && pd > 0.0f) ? pd : 1.0;
  }
  for (int i = 3; i < ndim; ++i) {
    if (get<std::int16_t>(hdr, kOffDim + 2 * (i + 1), swap) > 1)
      throw Error(ErrorCode::MalformedHeader, "only 3D volumes are supported: " + path.string());
  }

  const auto datatype = get<std::int16_t>(hdr, kOffDatatype, swap);
  const auto bitpix = get<std::int16_t>(hdr, kOffBitpix, swap);
  const float vox_offset = get<float>(hdr, kOffVoxOffset, swap);
  float slope = get<float>(hdr, kOffSclSlope, swap);
  const float inter = get<float>(hdr, kOffSclInter, swap);
  if (!std::isfinite(slope) || slope == 0.0f) slope = 1.0f;

  const std::size_t count = static_cast<std::size_t>(vol.dims[0]) * vol.dims[1] * vol.dims[2];
  const std::size_t bytes_per = static_cast<std::size_t>(bitpix) / 8;
  if (bytes_per == 0) throw Error(ErrorCode::MalformedHeader, "bad bitpix: " + path.string());

  const long skip = static_cast<long>(vox_offset) - kHeaderSize;
  if (skip < 0) throw Error(ErrorCode::MalformedHeader, "vox_offset < 348: " + path.string());
  if (skip > 0 && gzseek(file.get(), skip, SEEK_CUR) < 0)
    throw Error(ErrorCode::MalformedHeader, "cannot seek to payload: " + path.string());

  std::vector<unsigned char> raw(count * bytes_per);
  read_exact(file.get(), raw.data(), raw.size(), path);

  vol.data.resize(count);
  switch (datatype) {
    case DT_UINT8: convert<std::uint8_t>(raw, swap, vol.data); break;
    case DT_INT8: convert<std::int8_t>(raw, swap, vol.data); break;
    case DT_INT16: convert<std::int16_t>(raw, swap, vol.data); break;
    case DT_UINT16: convert<std::uint16_t>(raw, swap, vol.data); break;
    case DT_INT32: convert<std::int32_t>(raw, swap, vol.data); break;
    case DT_UINT32: convert<std::uint32_t>(raw, swap, vol.data); break;
    case DT_FLOAT32: convert<float>(raw, swap, vol.data); break;
    case DT_FLOAT64: convert<double>(raw, swap, vol.data); break;
    default: throw Error(ErrorCode::MalformedHeader, "unsupported datatype " + std::to_string(datatype));
  }
  if (slope != 1.0f || inter != 0.0f) {
    for (auto& v : vol.data) v = v * slope + inter;
  }
  return vol;
}

void write_nifti(const std::filesystem::path& path, const NiftiVolume& volume, NiftiStorage storage) {
  const std::size_t count = static_cast<std::size_t>(volume.dims[0]) * volume.dims[1] * volume.dims[2];
  if (volume.data.size() != count) throw Error(ErrorCode::ShapeMismatch, "NIfTI payload size");

  unsigned char hdr[kHeaderSize + 4] = {};
  put<std::int32_t>(hdr, 0, kHeaderSize);
  put<std::int16_t>(hdr, kOffDim, 3);
  for (int i = 0; i < 3; ++i) put<std::int16_t>(hdr, kOffDim + 2 * (i + 1), static_cast<std::int16_t>(volume.dims[i]));
  for (int i = 3; i < 7; ++i) put<std::int16_t>(hdr, kOffDim + 2 * (i + 1), 1);

  std::int16_t datatype = DT_FLOAT32;
  std::int16_t bitpix = 32;
  if (storage == NiftiStorage::UInt8) {
    datatype = DT_UINT8;
    bitpix = 8;
  } else if (storage == NiftiStorage::Int16) {
    datatype = DT_INT16;
    bitpix = 16;
  }
  put<std::int16_t>(hdr, kOffDatatype, datatype);
  put<std::int16_t>(hdr, kOffBitpix, bitpix);
  put<float>(hdr, kOffPixdim, 1.0f);
  for (int i = 0; i < 3; ++i) put<float>(hdr, kOffPixdim + 4 * (i + 1), static_cast<float>(volume.pixdim[i]));
  put<float>(hdr, kOffVoxOffset, 352.0f);
  put<float>(hdr, kOffSclSlope, 1.0f);
  put<std::int16_t>(hdr, kOffQform, 0);
  put<std::int16_t>(hdr, kOffSform, 0);
  std::memcpy(hdr + kOffMagic, "n+1\0", 4);

  std::vector<unsigned char> payload(count * static_cast<std::size_t>(bitpix / 8));
  for (std::size_t i = 0; i < count; ++i) {
    const float v = volume.data[i];
    switch (storage) {
      case NiftiStorage::UInt8: payload[i] = static_cast<std::uint8_t>(std::lround(v)); break;
      case NiftiStorage::Int16: put<std::int16_t>(payload.data(), static_cast<int>(2 * i), static_cast<std::int16_t>(std::lround(v))); break;
      case NiftiStorage::Float32: put<float>(payload.data(), static_cast<int>(4 * i), v); break;
    }
  }

  const bool gz = path.extension() == ".gz";
  GzHandle file(gzopen(path.c_str(), gz ? "wb6" : "wbT"));
  if (!file) throw Error(ErrorCode::IoError, "cannot open for writing: " + path.string());
  if (gzwrite(file.get(), hdr, sizeof(hdr)) != static_cast<int>(sizeof(hdr)) ||
      (!payload.empty() && gzwrite(file.get(), payload.data(), static_cast<unsigned>(payload.size())) !=
                               static_cast<int>(payload.size())))
    throw Error(ErrorCode::IoError, "short write: " + path.string());
}

}  // namespace cmr::io
