#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "odt/decoder.hpp"
#include "odt/geometry.hpp"
#include "odt/nn.hpp"
#include "odt/tensor.hpp"

namespace odt {

struct TrackerConfig {
  double speed_mps = 33.3;  // max relative obstacle speed
  double fps = 26.0;        // min capture rate
  bool match_all = true;    // match every in-bound voxel of frame t+1
  bool bounded = true;      // false: search box covers the whole grid
  double tau_init = 10.0;
  // refuse similarity storage above this many entries (the dense path on
  // paper-size grids would need tens of GB)
  std::size_t memory_guard_entries = 1u << 28;
};

// Candidate matches of occupied source voxels against frame-t+1 voxels
// inside each source's bound box. Pairs are stored sparsely; everything
// outside a segment has similarity -inf by convention.
struct MatchPairs {
  std::array<int, 3> dims;
  std::array<int, 3> bound;
  std::vector<int> sources;             // occupied t voxels (linear indices)
  std::vector<std::uint8_t> isolated;   // per source: no candidate targets
  std::vector<int> active;              // indices into sources with >= 1 target
  std::vector<int> segments;            // active.size()+1 offsets into pairs
  std::vector<int> src_of_pair;         // linear source index per pair
  std::vector<int> tgt_of_pair;         // linear target index per pair
  std::size_t storage_entries() const { return tgt_of_pair.size(); }
};

// Per-source voxel motion in finest-grid voxel units. The dense view embeds
// motions at occupied sources and zeros elsewhere.
struct VoxelFlowField {
  std::array<int, 3> dims;
  double voxel_size = 0;                // l4, meters per voxel step
  std::vector<int> source_indices;
  std::vector<Vec3> motions;            // aligned with source_indices
  std::vector<std::uint8_t> isolated;   // empty-bound sources carry zero motion
  std::vector<std::uint8_t> occupancy;  // dense frame-t mask

  std::vector<double> dense_voxel_units() const;  // [V*3]
};

class Tracker {
 public:
  Tracker(ParamStore& ps, const TrackerConfig& cfg);

  // Enumerates candidate pairs and enforces the memory guard. Throws
  // std::runtime_error when the storage bound is exceeded.
  MatchPairs build_pairs(const std::array<int, 3>& dims, const std::vector<std::uint8_t>& occ_t,
                         const std::vector<std::uint8_t>& occ_t1, double l4) const;

  // Differentiable path: cosine similarities over pairs, row softmax with
  // the learnable logit scale, expected displacement per active source.
  // feat_* are [C, nx, ny, nz]; the result rows align with pairs.active.
  struct TrackGraph {
    MatchPairs pairs;
    Tensor similarities;  // [P]
    Tensor distribution;  // [P], row-stochastic per segment
    Tensor motions;       // [A, 3] voxel units, A = active sources
  };
  TrackGraph track_graph(const Tensor& feat_t, const std::vector<std::uint8_t>& occ_t,
                         const Tensor& feat_t1, const std::vector<std::uint8_t>& occ_t1,
                         const std::array<int, 3>& dims, double l4) const;

  // Inference composition over two decoded frames (no graph recorded).
  VoxelFlowField track(const OccupancyPyramid& out_t, const OccupancyPyramid& out_t1) const;

  double tau() const;
  Tensor tau_tensor() const;
  const TrackerConfig& config() const { return cfg_; }

 private:
  TrackerConfig cfg_;
  Tensor log_tau_;  // tau = 1e-2 + exp(log_tau)
};

}  // namespace odt
