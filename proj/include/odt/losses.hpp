#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "odt/geometry.hpp"
#include "odt/tensor.hpp"

namespace odt {

// Differentiable IoU relaxation: sum(p*g) / sum(p + g - p*g).
// Empty prediction against empty ground truth is defined as 1.
Tensor soft_iou(const Tensor& probs, const std::vector<std::uint8_t>& gt);

// Weighted multi-level detection loss: sum_j w_j * (1 - soft_iou_j).
// Weights must sum to 1 within 1e-9.
Tensor detection_loss(const std::vector<Tensor>& probs, const BinaryPyramid& gt,
                      const std::array<double, 4>& weights);

// Mean Euclidean distance in meters over a dense [V,3] field; the
// prediction carries zeros at voxels not detected as occupied.
Tensor tracking_loss(const Tensor& pred_dense_m, const std::vector<double>& gt_dense_m);

// ---- evaluation metrics (plain doubles, no graph) ----

// Set IoU in percent after restricting both grids to centroid z <= z_range
// (boundary included). Empty-vs-empty is 100.
double metric_iou_pct(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt,
                      const VoxelGridSpec& spec, int level, double z_range_m);

// Occupied-voxel centroids within the z range, for Chamfer point clouds.
std::vector<Vec3> occupied_centroids(const std::vector<std::uint8_t>& grid,
                                     const VoxelGridSpec& spec, int level, double z_range_m);

// Sum of the two directed mean nearest-neighbor distances. One empty set
// yields empty_penalty_m, two empty sets yield 0.
double chamfer_m(const std::vector<Vec3>& a, const std::vector<Vec3>& b, double empty_penalty_m);

// (epe, foreground epe) in meters from dense voxel-unit flow fields.
// Foreground averages over gt-occupied voxels; no occupied voxels -> 0.
std::pair<double, double> epe_metrics(const std::vector<double>& pred_dense_vox,
                                      const std::vector<double>& gt_dense_vox,
                                      const std::vector<std::uint8_t>& gt_occ, double l4_m);

struct MetricRow {
  std::string split;
  int level = 0;
  double range_m = 0, iou_pct = 0, cd_m = 0, epe_m = 0, fg_epe_m = 0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  double epe_m = 0, fg_epe_m = 0;

  std::string to_csv() const;
  std::string to_text() const;  // flat key=value block
};

}  // namespace odt
