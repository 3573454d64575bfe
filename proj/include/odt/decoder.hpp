#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "odt/costvolume.hpp"
#include "odt/geometry.hpp"
#include "odt/nn.hpp"
#include "odt/tensor.hpp"

namespace odt {

enum class UpsampleMode { kTrilinear, kTransposed };

struct DecoderConfig {
  int channels = 64;  // track-feature width, kept equal to D
  double occupancy_threshold = 0.5;
  UpsampleMode upsample = UpsampleMode::kTrilinear;
};

// Model output: per-level occupancy probabilities plus their thresholded
// binaries, and the finest pre-head activations the tracker matches on.
struct OccupancyPyramid {
  VoxelGridSpec spec;
  std::vector<Tensor> probs;                       // level i-1: [1, nx, ny, nz]
  std::vector<std::vector<std::uint8_t>> binary;   // same ordering as centroids
  Tensor track_features;                           // [C, nx4, ny4, nz4]

  const std::vector<std::uint8_t>& binary_level(int i) const { return binary[i - 1]; }
};

std::vector<std::uint8_t> threshold_grid(const Tensor& probs, double theta);

// Coarse-to-fine 3D decoding: each stage runs two 3x3x3 convolutions with
// normalization and ReLU, emits a sigmoid occupancy head, then upsamples
// 2x into the next stage. No encoder half: the cost volume is the single
// input scale.
class OccupancyDecoder {
 public:
  OccupancyDecoder(ParamStore& ps, Rng& rng, const DecoderConfig& cfg,
                   const VoxelGridSpec& spec);

  OccupancyPyramid decode(const CostVolume& cv) const;

 private:
  struct Stage {
    Conv3dLayer conv1, conv2;
    GroupNormLayer gn1, gn2;
    Conv3dLayer head;      // 1x1x1 + sigmoid
    Tensor up_w, up_b;     // transposed-upsample weights (kTransposed only)
  };

  DecoderConfig cfg_;
  VoxelGridSpec spec_;
  std::vector<Stage> stages_;
};

}  // namespace odt
