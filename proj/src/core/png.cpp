#include "cmr/io/png.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace cmr::io {

void RgbImage::set(int y, int x, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  if (y < 0 || x < 0 || y >= height || x >= width) return;
  auto* p = &pixels[(static_cast<std::size_t>(y) * width + x) * 3];
  p[0] = r;
  p[1] = g;
  p[2] = b;
}

namespace {

void append_bytes(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

std::vector<std::uint8_t> encode(const std::uint8_t* pixels, int w, int h, int color_type, int channels) {
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error(ErrorCode::IoError, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    throw Error(ErrorCode::IoError, "PNG encoding failed");
  }
  png_set_write_fn(png, &out, append_bytes, nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < h; ++y)
    png_write_row(png, const_cast<png_bytep>(pixels + static_cast<std::size_t>(y) * w * channels));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

std::vector<std::uint8_t> encode_png(const RgbImage& img) {
  return encode(img.pixels.data(), img.width, img.height, PNG_COLOR_TYPE_RGB, 3);
}

std::vector<std::uint8_t> encode_png_gray(const Slice2D<float>& img) {
  std::vector<std::uint8_t> g(img.data.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = to_byte(img.data[i]);
  return encode(g.data(), img.w, img.h, PNG_COLOR_TYPE_GRAY, 1);
}

void write_png(const std::filesystem::path& path, const RgbImage& img) {
  const auto bytes = encode_png(img);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const unsigned v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i < bytes.size()) {
    unsigned v = bytes[i] << 16;
    if (i + 1 < bytes.size()) v |= bytes[i + 1] << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

RgbImage render_overlay(const Slice2D<float>& image, const Slice2D<std::uint8_t>* labels, const Slice2D<float>* umap,
                        const std::vector<detect::VoxelRegion>& regions, const OverlayOptions& options) {
  RgbImage out(image.w, image.h);
  for (int y = 0; y < image.h; ++y)
    for (int x = 0; x < image.w; ++x) {
      double r = image(y, x), g = image(y, x), b = image(y, x);
      if (options.uncertainty && umap) {
        const double a = std::clamp(static_cast<double>((*umap)(y, x)), 0.0, 1.0) * 0.7;
        r = (1 - a) * r + a * 1.0;
        g = (1 - a) * g + a * 0.55;
        b = (1 - a) * b;
      }
      out.set(y, x, to_byte(r), to_byte(g), to_byte(b));
    }
  if (options.contours && labels) {
    static constexpr std::uint8_t kColors[4][3] = {{0, 0, 0}, {40, 120, 255}, {40, 220, 60}, {240, 40, 40}};
    for (int y = 0; y < labels->h; ++y)
      for (int x = 0; x < labels->w; ++x) {
        const auto l = (*labels)(y, x);
        if (l == 0 || l > 3) continue;
        auto differs = [&](int yy, int xx) { return !labels->contains(yy, xx) || (*labels)(yy, xx) != l; };
        if (differs(y - 1, x) || differs(y + 1, x) || differs(y, x - 1) || differs(y, x + 1))
          out.set(y, x, kColors[l][0], kColors[l][1], kColors[l][2]);
      }
  }
  if (options.regions) {
    for (const auto& r : regions) {
      for (int x = r.x0; x < r.x1; ++x) {
        out.set(r.y0, x, 255, 230, 0);
        out.set(r.y1 - 1, x, 255, 230, 0);
      }
      for (int y = r.y0; y < r.y1; ++y) {
        out.set(y, r.x0, 255, 230, 0);
        out.set(y, r.x1 - 1, 255, 230, 0);
      }
    }
  }
  return out;
}

}  // namespace cmr::io
