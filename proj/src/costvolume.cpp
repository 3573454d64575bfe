#include "odt/costvolume.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace odt {

namespace {

// Sample a pyramid level at the projections of pts, one view. Invalid
// projections yield zero rows.
Tensor sample_view(const Tensor& pts, const FeaturePyramid& pyr, int scale,
                   const CameraModel& cam, double z_near) {
  std::vector<std::uint8_t> valid;
  Tensor uv = project_points(pts, cam, z_near, &valid);
  return bilinear_gather(pyr.levels[scale], uv, valid, FeaturePyramid::strides[scale]);
}

}  // namespace

CostVolumeBuilder::CostVolumeBuilder(ParamStore& ps, Rng& rng, const DmcConfig& cfg,
                                     const VoxelGridSpec& spec)
    : cfg_(cfg), spec_(spec) {
  const int D = cfg.channels;
  const int Ns = cfg.num_samples;
  if (Ns < 1) throw std::invalid_argument("DmcConfig: num_samples must be >= 1");
  l1_ = spec.side_length(1);
  centroids_ = spec.centroids(1);
  const int nq = static_cast<int>(centroids_.size());

  std::vector<double> pts(static_cast<std::size_t>(nq) * 3);
  const int fdim = 2 * cfg.fourier_bands * 3;
  std::vector<double> four(static_cast<std::size_t>(nq) * fdim);
  for (int i = 0; i < nq; ++i) {
    const Vec3& c = centroids_[i];
    pts[i * 3] = c.x;
    pts[i * 3 + 1] = c.y;
    pts[i * 3 + 2] = c.z;
    const Vec3 n = spec.normalize_centroid(c);
    const double xyz[3] = {n.x, n.y, n.z};
    fourier_encode(xyz, 3, cfg.fourier_bands, four.data() + static_cast<std::size_t>(i) * fdim);
  }
  centroid_pts_ = Tensor::from({nq, 3}, std::move(pts));
  fourier_ = Tensor::from({nq, fdim}, std::move(four));

  query_mlp_ = make_mlp(ps, rng, "dmc.query_mlp", fdim, D, D);

  const int pin = cfg.cross_view == CrossViewMode::kConcat ? 2 * D : D;
  for (int b = 0; b < cfg.num_blocks; ++b) {
    const std::string base = "dmc.block" + std::to_string(b);
    Block blk;
    blk.ln_attn = make_layer_norm(ps, base + ".ln_attn", D);
    blk.offset_mlp = make_mlp(ps, rng, base + ".offset", D, D, 3 * Ns, /*zero_init_out=*/true);
    blk.attn_head = make_linear(ps, rng, base + ".attn", D, Ns);
    for (int s = 0; s < 4; ++s)
      blk.scale_mlp[s] = make_mlp(ps, rng, base + ".scale" + std::to_string(s + 1), pin, D, D);
    if (cfg.fusion == FusionMode::kFused) {
      const int fin = cfg.cross_view == CrossViewMode::kConcat ? 4 * D : D;
      blk.fuse_mlp = make_mlp(ps, rng, base + ".fuse", fin, D, D);
    }
    for (int s = 0; s < Ns; ++s) {
      // identity / Ns so the untrained sum starts near the mean cost
      std::vector<double> eye(static_cast<std::size_t>(D) * D, 0.0);
      for (int i = 0; i < D; ++i) eye[static_cast<std::size_t>(i) * D + i] = 1.0 / Ns;
      blk.mix.push_back(ps.add(base + ".mix" + std::to_string(s), {D, D}, std::move(eye)));
    }
    blk.ln_ffn = make_layer_norm(ps, base + ".ln_ffn", D);
    blk.ffn1 = make_linear(ps, rng, base + ".ffn1", D, 2 * D);
    blk.ffn2 = make_linear(ps, rng, base + ".ffn2", 2 * D, D);
    blocks_.push_back(std::move(blk));
  }
}

VoxelQuerySet CostVolumeBuilder::encode_queries(const FeaturePyramid& left,
                                                const FeaturePyramid& right,
                                                const StereoRig& rig) const {
  Tensor q = query_mlp_(fourier_);
  Tensor fl = sample_view(centroid_pts_, left, 3, rig.left, cfg_.z_near);
  Tensor fr = sample_view(centroid_pts_, right, 3, rig.right, cfg_.z_near);
  q = add(q, scale(add(fl, fr), 0.5));
  VoxelQuerySet out;
  out.encodings = q;
  out.centroids = centroids_;
  out.grid_dims = spec_.dims(1);
  return out;
}

Tensor CostVolumeBuilder::sample_offsets(const Tensor& q_rows, int block) const {
  Tensor logits = blocks_[block].offset_mlp(q_rows);
  Tensor sig = sigmoid(logits);
  if (cfg_.offset_mode == OffsetMode::kCentered) return scale(add_const(sig, -0.5), l1_);
  return scale(sig, l1_);
}

Tensor CostVolumeBuilder::attention_weights(const Tensor& q_rows, int block) const {
  return sigmoid(blocks_[block].attn_head(q_rows));
}

Tensor CostVolumeBuilder::per_scale_cost(int block, int scale_idx, const Tensor& pts,
                                         const FeaturePyramid& left, const FeaturePyramid& right,
                                         const StereoRig& rig) const {
  Tensor fl = sample_view(pts, left, scale_idx, rig.left, cfg_.z_near);
  Tensor fr = sample_view(pts, right, scale_idx, rig.right, cfg_.z_near);
  Tensor in = cfg_.cross_view == CrossViewMode::kConcat ? concat_cols({fl, fr})
                                                        : scale(add(fl, fr), 0.5);
  return blocks_[block].scale_mlp[scale_idx](in);
}

Tensor CostVolumeBuilder::fuse_scales(int block, const std::array<Tensor, 4>& costs) const {
  if (cfg_.fusion == FusionMode::kFused) {
    if (cfg_.cross_view == CrossViewMode::kConcat)
      return blocks_[block].fuse_mlp(concat_cols({costs[0], costs[1], costs[2], costs[3]}));
    // cross-view averaging replaces the concatenation across scales as well
    return blocks_[block].fuse_mlp(
        scale(add(add(costs[0], costs[1]), add(costs[2], costs[3])), 0.25));
  }
  return scale(add(add(costs[0], costs[1]), add(costs[2], costs[3])), 0.25);
}

Tensor CostVolumeBuilder::aggregate(int block, const Tensor& q_rows, const Tensor& centroid_pts,
                                    const FeaturePyramid& left, const FeaturePyramid& right,
                                    const StereoRig& rig) const {
  const Block& blk = blocks_[block];
  Tensor deltas = sample_offsets(q_rows, block);
  Tensor attn = attention_weights(q_rows, block);
  Tensor acc;
  for (int s = 0; s < cfg_.num_samples; ++s) {
    Tensor pts = add(centroid_pts, slice_cols(deltas, 3 * s, 3));
    std::array<Tensor, 4> costs;
    for (int i = 0; i < 4; ++i) costs[i] = per_scale_cost(block, i, pts, left, right, rig);
    Tensor c = fuse_scales(block, costs);
    Tensor mixed = linear(c, blk.mix[s], Tensor());
    Tensor contrib = scale_rows(mixed, reshape(slice_cols(attn, s, 1), {attn.dim(0)}));
    acc = acc.defined() ? add(acc, contrib) : contrib;
  }
  return acc;
}

Tensor CostVolumeBuilder::block_forward(int block, const Tensor& q, const FeaturePyramid& left,
                                        const FeaturePyramid& right, const StereoRig& rig) const {
  const Block& blk = blocks_[block];
  Tensor qn = blk.ln_attn(q);
  Tensor q1 = add(q, aggregate(block, qn, centroid_pts_, left, right, rig));
  Tensor qf = blk.ln_ffn(q1);
  return add(q1, blk.ffn2(relu(blk.ffn1(qf))));
}

CostVolume CostVolumeBuilder::build(const VoxelQuerySet& queries, const FeaturePyramid& left,
                                    const FeaturePyramid& right, const StereoRig& rig) const {
  if (queries.encodings.dim(0) != static_cast<int>(centroids_.size()))
    throw std::invalid_argument("CostVolumeBuilder: query count does not match the grid");
  Tensor q = queries.encodings;
  for (int b = 0; b < cfg_.num_blocks; ++b) q = block_forward(b, q, left, right, rig);
  CostVolume cv;
  cv.costs = q;
  cv.grid_dims = queries.grid_dims;
  cv.channels = cfg_.channels;
  return cv;
}

}  // namespace odt
