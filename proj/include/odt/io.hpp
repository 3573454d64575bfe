#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "odt/geometry.hpp"
#include "odt/tensor.hpp"

namespace odt {

// RGB image, row-major, values in [0,1].
struct Image {
  int height = 0, width = 0;
  std::vector<double> rgb;  // height*width*3

  static Image create(int h, int w) { return {h, w, std::vector<double>(static_cast<std::size_t>(h) * w * 3, 0.0)}; }
  double& at(int i, int j, int c) { return rgb[(static_cast<std::size_t>(i) * width + j) * 3 + c]; }
  double at(int i, int j, int c) const { return rgb[(static_cast<std::size_t>(i) * width + j) * 3 + c]; }
};

void save_png(const Image& img, const std::string& path);
Image load_png(const std::string& path);

// [3,H,W] channel-major tensor for the backbone.
Tensor image_to_tensor(const Image& img);

// Calibration file: plain key=value with fx, fy, cx, cy, baseline_m,
// image_width, image_height. The right camera is the left translated by
// -baseline along x.
struct CalibFile {
  CameraModel left;
  double baseline_m = 0;

  // Anisotropic resize of the intrinsics: fx, cx scale with the width
  // ratio and fy, cy with the height ratio. Baseline is metric and stays.
  CalibFile scaled_to(int new_width, int new_height) const;
};
CalibFile read_calib(const std::string& path);
void write_calib(const std::string& path, const CalibFile& calib);

// Occupancy dump: 32-byte header (magic "ODTV", u32 version, u32 level,
// u32 dims[3], f32 voxel_size, u32 reserved), then row-major {0,1} bytes.
struct OccupancyDump {
  std::uint32_t level = 0;
  std::array<int, 3> dims{};
  float voxel_size = 0;
  std::vector<std::uint8_t> data;
};
void write_occupancy_dump(const std::string& path, const OccupancyDump& dump);
OccupancyDump read_occupancy_dump(const std::string& path);

// Flow dump: 32-byte header (magic "ODTF", u32 version, u32 dims[3],
// f32 voxel_size, u32 count, u32 reserved), then count records of
// (ix, iy, iz, mx, my, mz) as 32-bit floats.
struct FlowDump {
  std::array<int, 3> dims{};
  float voxel_size = 0;
  std::vector<std::array<float, 6>> records;
};
void write_flow_dump(const std::string& path, const FlowDump& dump);
FlowDump read_flow_dump(const std::string& path);

// Text exports for visualization: "x y z" per occupied centroid, and
// "x y z dx dy dz" per tracked voxel (meters).
void write_pointcloud_text(const std::string& path, const std::vector<Vec3>& pts);
void write_flow_text(const std::string& path, const std::vector<Vec3>& origins,
                     const std::vector<Vec3>& deltas);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace odt
