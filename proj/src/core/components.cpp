#include "cmr/components.hpp"

#include <array>
#include <cmath>
#include <limits>

namespace cmr {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Offset3 {
  int dz, dy, dx;
};

std::vector<Offset3> neighbourhood_3d(int connectivity) {
  if (connectivity != 6 && connectivity != 26)
    throw Error(ErrorCode::InvalidArgument, "3D connectivity must be 6 or 26");
  std::vector<Offset3> offs;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int manhattan = std::abs(dz) + std::abs(dy) + std::abs(dx);
        if (manhattan == 0) continue;
        if (connectivity == 6 && manhattan != 1) continue;
        offs.push_back({dz, dy, dx});
      }
  return offs;
}

// 1D lower envelope of parabolas, f in/out of length n, sample spacing `step`.
void distance_1d(const double* f, double* d, int n, double step, std::vector<int>& v, std::vector<double>& z) {
  v.resize(n);
  z.resize(n + 1);
  const double s2 = step * step;
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    double s;
    while (true) {
      const int p = v[k];
      s = ((f[q] + s2 * q * q) - (f[p] + s2 * p * p)) / (2.0 * s2 * (q - p));
      if (s <= z[k]) {
        if (--k < 0) break;
        continue;
      }
      break;
    }
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    for (int q = 0; q < n; ++q) d[q] = kInf;
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double diff = step * (q - v[j]);
    d[q] = diff * diff + f[v[j]];
  }
}

}  // namespace

Components label_components_3d(const std::vector<std::uint8_t>& mask, Shape3 shape, int connectivity) {
  if (mask.size() != shape.size()) throw Error(ErrorCode::ShapeMismatch, "mask/shape mismatch");
  const auto offs = neighbourhood_3d(connectivity);
  Components out;
  out.labels.assign(mask.size(), 0);
  std::vector<std::size_t> stack;
  for (int z = 0; z < shape.z; ++z)
    for (int y = 0; y < shape.h; ++y)
      for (int x = 0; x < shape.w; ++x) {
        const std::size_t seed = (static_cast<std::size_t>(z) * shape.h + y) * shape.w + x;
        if (!mask[seed] || out.labels[seed]) continue;
        const int id = out.count() + 1;
        std::int64_t size = 0;
        out.labels[seed] = id;
        stack.push_back(seed);
        while (!stack.empty()) {
          const std::size_t cur = stack.back();
          stack.pop_back();
          ++size;
          const int cz = static_cast<int>(cur / shape.slice_size());
          const int cy = static_cast<int>((cur / shape.w) % shape.h);
          const int cx = static_cast<int>(cur % shape.w);
          for (const auto& o : offs) {
            const int nz = cz + o.dz, ny = cy + o.dy, nx = cx + o.dx;
            if (nz < 0 || ny < 0 || nx < 0 || nz >= shape.z || ny >= shape.h || nx >= shape.w) continue;
            const std::size_t ni = (static_cast<std::size_t>(nz) * shape.h + ny) * shape.w + nx;
            if (mask[ni] && !out.labels[ni]) {
              out.labels[ni] = id;
              stack.push_back(ni);
            }
          }
        }
        out.sizes.push_back(size);
      }
  return out;
}

Components label_components_2d(const std::vector<std::uint8_t>& mask, int h, int w, int connectivity) {
  if (connectivity != 4 && connectivity != 8) throw Error(ErrorCode::InvalidArgument, "2D connectivity must be 4 or 8");
  // A single-slice 3D labelling with 6/26 connectivity reduces to 4/8 in-plane.
  return label_components_3d(mask, Shape3{1, h, w}, connectivity == 4 ? 6 : 26);
}

std::vector<double> squared_distance_2d(const std::vector<std::uint8_t>& seeds, int h, int w, double sy, double sx) {
  return squared_distance_3d(seeds, Shape3{1, h, w}, Spacing{sx, sy, 1.0});
}

std::vector<double> squared_distance_3d(const std::vector<std::uint8_t>& seeds, Shape3 shape, const Spacing& spacing) {
  if (seeds.size() != shape.size()) throw Error(ErrorCode::ShapeMismatch, "seed/shape mismatch");
  std::vector<double> g(seeds.size());
  for (std::size_t i = 0; i < seeds.size(); ++i) g[i] = seeds[i] ? 0.0 : kInf;

  const int n_max = std::max({shape.z, shape.h, shape.w});
  std::vector<double> f(n_max), d(n_max);
  std::vector<int> v;
  std::vector<double> zb;

  // Along x.
  for (int z = 0; z < shape.z; ++z)
    for (int y = 0; y < shape.h; ++y) {
      double* row = g.data() + (static_cast<std::size_t>(z) * shape.h + y) * shape.w;
      std::copy(row, row + shape.w, f.begin());
      distance_1d(f.data(), d.data(), shape.w, spacing.dx, v, zb);
      std::copy(d.begin(), d.begin() + shape.w, row);
    }
  // Along y.
  for (int z = 0; z < shape.z; ++z)
    for (int x = 0; x < shape.w; ++x) {
      for (int y = 0; y < shape.h; ++y) f[y] = g[(static_cast<std::size_t>(z) * shape.h + y) * shape.w + x];
      distance_1d(f.data(), d.data(), shape.h, spacing.dy, v, zb);
      for (int y = 0; y < shape.h; ++y) g[(static_cast<std::size_t>(z) * shape.h + y) * shape.w + x] = d[y];
    }
  // Along z.
  if (shape.z > 1) {
    for (int y = 0; y < shape.h; ++y)
      for (int x = 0; x < shape.w; ++x) {
        for (int z = 0; z < shape.z; ++z) f[z] = g[(static_cast<std::size_t>(z) * shape.h + y) * shape.w + x];
        distance_1d(f.data(), d.data(), shape.z, spacing.dz, v, zb);
        for (int z = 0; z < shape.z; ++z) g[(static_cast<std::size_t>(z) * shape.h + y) * shape.w + x] = d[z];
      }
  }
  return g;
}

}  // namespace cmr
