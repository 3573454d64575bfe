#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

// Shared deterministic math: camera models, voxel grid bookkeeping,
// projection, sampling and the tracking bound. Everything here is pure.
//
// Coordinate convention (all modules): left-camera frame, x right,
// y down, z forward. Distances in meters, pixels in image coordinates.

namespace odt {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const;
};

// Row-major 3x3.
struct Mat3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Mat3 identity() { return {}; }
  static Mat3 rot_y(double angle_rad);
  Vec3 apply(const Vec3& p) const;
  Vec3 apply_transposed(const Vec3& p) const;
  Mat3 mul(const Mat3& o) const;
  double max_orthonormality_error() const;
};

// Intrinsics + extrinsics of one rectified camera. p_cam = R * p + t.
struct CameraModel {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  Mat3 rotation;
  Vec3 translation;
  int image_width = 0, image_height = 0;

  // Throws std::invalid_argument on violated invariants (non-orthonormal
  // rotation, non-positive focal lengths, principal point off-image).
  void validate() const;

  // Right camera of a rectified rig: same intrinsics, translated by
  // -baseline along x.
  CameraModel right_of(double baseline_m) const;
};

struct Projection {
  double u = 0, v = 0;
  bool valid = false;
};

// Rigid transform + pinhole division. valid=false when the camera-frame
// depth is <= z_near or (u,v) falls outside the image rectangle expanded
// by a 1-pixel margin. Invalid projections are a flag, never an error.
Projection project(const Vec3& p, const CameraModel& cam, double z_near = 0.1);

// ROI + multi-level voxel grid. Level numbering is 1-based: level 1 is the
// coarsest, dims double per axis each level, side length halves, so every
// level tiles the same metric box exactly.
struct VoxelGridSpec {
  Vec3 roi_min, roi_max;
  int num_levels = 4;
  std::array<int, 3> base_dims{};  // voxel counts at level 1

  // Validates the tiling invariant: roi extent / dims must give the same
  // (cubic) side length on all three axes. Throws std::invalid_argument.
  static VoxelGridSpec create(const Vec3& roi_min, const Vec3& roi_max,
                              const std::array<int, 3>& base_dims,
                              int num_levels = 4);

  double side_length(int level) const;        // l_i
  std::array<int, 3> dims(int level) const;   // base_dims * 2^(level-1)
  std::size_t voxel_count(int level) const;
  Vec3 extent() const { return roi_max - roi_min; }

  Vec3 centroid(int level, int ix, int iy, int iz) const;

  // All centroids of a level, row-major over (x, y, z): x outermost,
  // z innermost. This ordering is the contract for every serialized grid.
  std::vector<Vec3> centroids(int level) const;

  // (p - roi_min) / (roi_max - roi_min), throws if p is outside the ROI.
  Vec3 normalize_centroid(const Vec3& p) const;

  bool contains(const Vec3& p) const;
  void check_level(int level) const;  // throws std::out_of_range
};

inline std::size_t voxel_linear(const std::array<int, 3>& dims, int ix, int iy, int iz) {
  return (static_cast<std::size_t>(ix) * dims[1] + iy) * dims[2] + iz;
}

// Fourier positional encoding of x in [0,1]^k. For coordinate j and band b:
// sin(2^b pi x_j), cos(2^b pi x_j). Layout is coordinate-major, band-minor,
// sin before cos; output length 2 * bands * k.
void fourier_encode(const double* x, int k, int bands, double* out);
std::vector<double> fourier_encode(const std::vector<double>& x, int bands);

// Taps and weights for bilinear sampling of a stride-s feature map at
// full-image pixel (u, v). Feature cell (row i, col j) sits at pixel
// ((j+0.5)*s, (i+0.5)*s); out-of-bounds taps clamp to the border.
struct BilinearTaps {
  int i0, i1, j0, j1;   // clamped row/col taps
  double wi, wj;        // fractional weights toward i1 / j1
  double dgu, dgv;      // d(col coord)/du, d(row coord)/dv (0 when clamped)
};
BilinearTaps bilinear_taps(int height, int width, double u, double v, int stride);

// Sample a [C,H,W] map (channel-major) at full-image pixel (u,v).
void bilinear_sample_map(const double* fmap, int channels, int height, int width,
                         double u, double v, int stride, double* out);

// Tracking search box (odd per axis, in finest-grid voxels) for relative
// speed v m/s at f frames/s: x/z span 2*ceil((v/f)/l4)+1, y span fixed at 3.
std::array<int, 3> bound_dims(double v_mps, double fps, double l4_m);

// Multi-level binary occupancy, one row-major byte grid per level
// (levels[i] is level i+1).
struct BinaryPyramid {
  VoxelGridSpec spec;
  std::vector<std::vector<std::uint8_t>> levels;

  static BinaryPyramid empty(const VoxelGridSpec& spec);
  const std::vector<std::uint8_t>& level(int i) const { return levels[i - 1]; }
  std::vector<std::uint8_t>& level(int i) { return levels[i - 1]; }
};

// Builds the full pyramid from finest-level data: a coarse voxel is
// occupied iff any of its 2x2x2 children is.
BinaryPyramid or_pool_pyramid(const VoxelGridSpec& spec, std::vector<std::uint8_t> finest);

}  // namespace odt
