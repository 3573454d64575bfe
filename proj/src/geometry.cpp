#include "odt/geometry.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace odt {

double Vec3::norm() const { return std::sqrt(x * x + y * y + z * z); }

Mat3 Mat3::rot_y(double a) {
  Mat3 r;
  const double c = std::cos(a), s = std::sin(a);
  r.m = {c, 0, s, 0, 1, 0, -s, 0, c};
  return r;
}

Vec3 Mat3::apply(const Vec3& p) const {
  return {m[0] * p.x + m[1] * p.y + m[2] * p.z,
          m[3] * p.x + m[4] * p.y + m[5] * p.z,
          m[6] * p.x + m[7] * p.y + m[8] * p.z};
}

Vec3 Mat3::apply_transposed(const Vec3& p) const {
  return {m[0] * p.x + m[3] * p.y + m[6] * p.z,
          m[1] * p.x + m[4] * p.y + m[7] * p.z,
          m[2] * p.x + m[5] * p.y + m[8] * p.z};
}

Mat3 Mat3::mul(const Mat3& o) const {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += m[i * 3 + k] * o.m[k * 3 + j];
      r.m[i * 3 + j] = s;
    }
  return r;
}

double Mat3::max_orthonormality_error() const {
  // max |R^T R - I|
  double err = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += m[k * 3 + i] * m[k * 3 + j];
      err = std::max(err, std::fabs(s - (i == j ? 1.0 : 0.0)));
    }
  return err;
}

void CameraModel::validate() const {
  if (rotation.max_orthonormality_error() > 1e-9)
    throw std::invalid_argument("CameraModel: rotation is not orthonormal");
  if (!(fx > 0) || !(fy > 0))
    throw std::invalid_argument("CameraModel: focal lengths must be positive");
  if (image_width <= 0 || image_height <= 0)
    throw std::invalid_argument("CameraModel: image dimensions must be positive");
  if (!(cx >= 0 && cx < image_width) || !(cy >= 0 && cy < image_height))
    throw std::invalid_argument("CameraModel: principal point outside the image");
}

CameraModel CameraModel::right_of(double baseline_m) const {
  CameraModel r = *this;
  r.translation = translation + Vec3{-baseline_m, 0, 0};
  return r;
}

Projection project(const Vec3& p, const CameraModel& cam, double z_near) {
  const Vec3 pc = cam.rotation.apply(p) + cam.translation;
  Projection pr;
  if (pc.z <= z_near) return pr;  // behind or too close
  pr.u = cam.fx * pc.x / pc.z + cam.cx;
  pr.v = cam.fy * pc.y / pc.z + cam.cy;
  pr.valid = pr.u >= -1.0 && pr.u <= cam.image_width &&
             pr.v >= -1.0 && pr.v <= cam.image_height;
  return pr;
}

VoxelGridSpec VoxelGridSpec::create(const Vec3& roi_min, const Vec3& roi_max,
                                    const std::array<int, 3>& base_dims,
                                    int num_levels) {
  VoxelGridSpec s;
  s.roi_min = roi_min;
  s.roi_max = roi_max;
  s.base_dims = base_dims;
  s.num_levels = num_levels;
  if (num_levels < 1) throw std::invalid_argument("VoxelGridSpec: num_levels must be >= 1");
  for (int a = 0; a < 3; ++a) {
    if (base_dims[a] < 1)
      throw std::invalid_argument("VoxelGridSpec: base_dims must be >= 1");
    if (!(roi_max[a] > roi_min[a]))
      throw std::invalid_argument("VoxelGridSpec: roi_max must exceed roi_min on every axis");
  }
  // Voxels are cubes; the grid must tile the ROI with no remainder.
  const Vec3 e = s.extent();
  const double l = e.x / base_dims[0];
  for (int a = 0; a < 3; ++a) {
    const double la = e[a] / base_dims[a];
    if (std::fabs(la - l) > 1e-9 * l)
      throw std::invalid_argument(
          "VoxelGridSpec: roi extent / base_dims must give one cubic voxel size; axis " +
          std::to_string(a) + " gives " + std::to_string(la) + " vs " + std::to_string(l));
  }
  return s;
}

void VoxelGridSpec::check_level(int level) const {
  if (level < 1 || level > num_levels)
    throw std::out_of_range("VoxelGridSpec: level " + std::to_string(level) +
                            " out of range [1, " + std::to_string(num_levels) + "]");
}

double VoxelGridSpec::side_length(int level) const {
  check_level(level);
  return (extent().x / base_dims[0]) / static_cast<double>(1 << (level - 1));
}

std::array<int, 3> VoxelGridSpec::dims(int level) const {
  check_level(level);
  const int f = 1 << (level - 1);
  return {base_dims[0] * f, base_dims[1] * f, base_dims[2] * f};
}

std::size_t VoxelGridSpec::voxel_count(int level) const {
  const auto d = dims(level);
  return static_cast<std::size_t>(d[0]) * d[1] * d[2];
}

Vec3 VoxelGridSpec::centroid(int level, int ix, int iy, int iz) const {
  const double l = side_length(level);
  return {roi_min.x + (ix + 0.5) * l, roi_min.y + (iy + 0.5) * l, roi_min.z + (iz + 0.5) * l};
}

std::vector<Vec3> VoxelGridSpec::centroids(int level) const {
  const auto d = dims(level);
  const double l = side_length(level);
  std::vector<Vec3> out;
  out.reserve(voxel_count(level));
  for (int ix = 0; ix < d[0]; ++ix)
    for (int iy = 0; iy < d[1]; ++iy)
      for (int iz = 0; iz < d[2]; ++iz)
        out.push_back({roi_min.x + (ix + 0.5) * l, roi_min.y + (iy + 0.5) * l,
                       roi_min.z + (iz + 0.5) * l});
  return out;
}

bool VoxelGridSpec::contains(const Vec3& p) const {
  return p.x >= roi_min.x && p.x <= roi_max.x && p.y >= roi_min.y && p.y <= roi_max.y &&
         p.z >= roi_min.z && p.z <= roi_max.z;
}

Vec3 VoxelGridSpec::normalize_centroid(const Vec3& p) const {
  if (!contains(p)) throw std::invalid_argument("normalize_centroid: point outside the ROI");
  const Vec3 e = extent();
  return {(p.x - roi_min.x) / e.x, (p.y - roi_min.y) / e.y, (p.z - roi_min.z) / e.z};
}

void fourier_encode(const double* x, int k, int bands, double* out) {
  int n = 0;
  for (int j = 0; j < k; ++j)
    for (int b = 0; b < bands; ++b) {
      const double a = std::ldexp(1.0, b) * M_PI * x[j];  // 2^b * pi * x_j
      out[n++] = std::sin(a);
      out[n++] = std::cos(a);
    }
}

std::vector<double> fourier_encode(const std::vector<double>& x, int bands) {
  std::vector<double> out(2 * static_cast<std::size_t>(bands) * x.size());
  fourier_encode(x.data(), static_cast<int>(x.size()), bands, out.data());
  return out;
}

BilinearTaps bilinear_taps(int height, int width, double u, double v, int stride) {
  const double gx = u / stride - 0.5;  // continuous column
  const double gy = v / stride - 0.5;  // continuous row
  BilinearTaps t;
  const double fj = std::floor(gx), fi = std::floor(gy);
  t.wj = gx - fj;
  t.wi = gy - fi;
  auto clampi = [](double a, int n) { return static_cast<int>(std::min(std::max(a, 0.0), n - 1.0)); };
  t.j0 = clampi(fj, width);
  t.j1 = clampi(fj + 1, width);
  t.i0 = clampi(fi, height);
  t.i1 = clampi(fi + 1, height);
  // Coordinate gradient vanishes where both taps clamp to the same cell.
  t.dgu = (t.j0 != t.j1) ? 1.0 / stride : 0.0;
  t.dgv = (t.i0 != t.i1) ? 1.0 / stride : 0.0;
  return t;
}

void bilinear_sample_map(const double* fmap, int channels, int height, int width,
                         double u, double v, int stride, double* out) {
  const auto t = bilinear_taps(height, width, u, v, stride);
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  for (int c = 0; c < channels; ++c) {
    const double* f = fmap + c * plane;
    const double a = f[t.i0 * width + t.j0] * (1 - t.wj) + f[t.i0 * width + t.j1] * t.wj;
    const double b = f[t.i1 * width + t.j0] * (1 - t.wj) + f[t.i1 * width + t.j1] * t.wj;
    out[c] = a * (1 - t.wi) + b * t.wi;
  }
}

std::array<int, 3> bound_dims(double v_mps, double fps, double l4_m) {
  if (!(v_mps > 0) || !(fps > 0) || !(l4_m > 0))
    throw std::invalid_argument("bound_dims: v, f and l4 must be positive");
  const double d = v_mps / fps;
  const int half = static_cast<int>(std::ceil(d / l4_m));
  return {2 * half + 1, 3, 2 * half + 1};
}

BinaryPyramid BinaryPyramid::empty(const VoxelGridSpec& spec) {
  BinaryPyramid p;
  p.spec = spec;
  p.levels.resize(spec.num_levels);
  for (int i = 1; i <= spec.num_levels; ++i) p.levels[i - 1].assign(spec.voxel_count(i), 0);
  return p;
}

BinaryPyramid or_pool_pyramid(const VoxelGridSpec& spec, std::vector<std::uint8_t> finest) {
  if (finest.size() != spec.voxel_count(spec.num_levels))
    throw std::invalid_argument("or_pool_pyramid: finest level size mismatch");
  BinaryPyramid p;
  p.spec = spec;
  p.levels.resize(spec.num_levels);
  p.levels[spec.num_levels - 1] = std::move(finest);
  for (int lvl = spec.num_levels - 1; lvl >= 1; --lvl) {
    const auto cd = spec.dims(lvl);
    const auto fd = spec.dims(lvl + 1);
    const auto& fine = p.levels[lvl];
    auto& coarse = p.levels[lvl - 1];
    coarse.assign(spec.voxel_count(lvl), 0);
    for (int ix = 0; ix < fd[0]; ++ix)
      for (int iy = 0; iy < fd[1]; ++iy)
        for (int iz = 0; iz < fd[2]; ++iz)
          if (fine[voxel_linear(fd, ix, iy, iz)])
            coarse[voxel_linear(cd, ix / 2, iy / 2, iz / 2)] = 1;
  }
  return p;
}

}  // namespace odt
