#pragma once

#include <array>
#include <vector>

#include "odt/backbone.hpp"
#include "odt/geometry.hpp"
#include "odt/nn.hpp"
#include "odt/tensor.hpp"

namespace odt {

struct StereoRig {
  CameraModel left, right;
};

enum class OffsetMode { kCentered, kLiteral };
enum class CrossViewMode { kConcat, kAverage };
enum class FusionMode { kFused, kNone };

struct DmcConfig {
  int channels = 64;      // D
  int num_samples = 8;    // offsets per query
  int num_blocks = 2;
  int fourier_bands = 8;  // per axis
  OffsetMode offset_mode = OffsetMode::kCentered;
  CrossViewMode cross_view = CrossViewMode::kConcat;
  FusionMode fusion = FusionMode::kFused;
  double z_near = 0.1;
};

// Voxel queries on the coarsest grid, ordered like VoxelGridSpec::centroids.
struct VoxelQuerySet {
  Tensor encodings;             // [Nq, D]
  std::vector<Vec3> centroids;  // Nq entries
  std::array<int, 3> grid_dims;
};

struct CostVolume {
  Tensor costs;  // [Nq, D], rows ordered like the query grid
  std::array<int, 3> grid_dims;
  int channels = 0;
};

// Matching-cost construction: voxel queries cross-attend to the stereo
// feature pyramids at learned 3D offsets around each voxel centroid.
class CostVolumeBuilder {
 public:
  CostVolumeBuilder(ParamStore& ps, Rng& rng, const DmcConfig& cfg, const VoxelGridSpec& spec);

  // q = MLP(fourier(normalized centroid)) + mean of the two pixel-aligned
  // stride-32 features; views with invalid projections contribute zeros.
  VoxelQuerySet encode_queries(const FeaturePyramid& left, const FeaturePyramid& right,
                               const StereoRig& rig) const;

  CostVolume build(const VoxelQuerySet& queries, const FeaturePyramid& left,
                   const FeaturePyramid& right, const StereoRig& rig) const;

  // Pieces below are the building blocks of build(); exposed so tests can
  // pin them against scalar oracles.
  Tensor sample_offsets(const Tensor& q_rows, int block) const;      // [N, 3*Ns] meters
  Tensor attention_weights(const Tensor& q_rows, int block) const;   // [N, Ns] in [0,1]
  Tensor per_scale_cost(int block, int scale_idx, const Tensor& pts, const FeaturePyramid& left,
                        const FeaturePyramid& right, const StereoRig& rig) const;  // [P, D]
  Tensor fuse_scales(int block, const std::array<Tensor, 4>& costs) const;         // [P, D]
  Tensor aggregate(int block, const Tensor& q_rows, const Tensor& centroid_pts,
                   const FeaturePyramid& left, const FeaturePyramid& right,
                   const StereoRig& rig) const;                                    // [N, D]

  const DmcConfig& config() const { return cfg_; }
  const VoxelGridSpec& grid_spec() const { return spec_; }
  double offset_scale() const { return l1_; }

 private:
  struct Block {
    LayerNorm ln_attn;
    Mlp offset_mlp;                // D -> D -> 3*Ns, last layer zero-init
    Linear attn_head;              // D -> Ns
    std::array<Mlp, 4> scale_mlp;  // per-scale matching cost
    Mlp fuse_mlp;                  // across scales (fused mode only)
    std::vector<Tensor> mix;       // Ns mixing matrices [D, D]
    LayerNorm ln_ffn;
    Linear ffn1, ffn2;
  };

  Tensor block_forward(int block, const Tensor& q, const FeaturePyramid& left,
                       const FeaturePyramid& right, const StereoRig& rig) const;

  DmcConfig cfg_;
  VoxelGridSpec spec_;
  double l1_ = 0;                 // offset scale: coarsest voxel side
  std::vector<Vec3> centroids_;   // query grid centroids
  Tensor centroid_pts_;           // [Nq, 3] constant
  Tensor fourier_;                // [Nq, 2*B*3] constant
  Mlp query_mlp_;
  std::vector<Block> blocks_;
};

}  // namespace odt
