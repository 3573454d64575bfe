#include "odt/decoder.hpp"

#include <stdexcept>
#include <string>

namespace odt {

std::vector<std::uint8_t> threshold_grid(const Tensor& probs, double theta) {
  std::vector<std::uint8_t> out(probs.numel());
  // ties count as occupied
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = probs.data()[i] >= theta ? 1 : 0;
  return out;
}

OccupancyDecoder::OccupancyDecoder(ParamStore& ps, Rng& rng, const DecoderConfig& cfg,
                                   const VoxelGridSpec& spec)
    : cfg_(cfg), spec_(spec) {
  if (!(cfg.occupancy_threshold > 0.0 && cfg.occupancy_threshold < 1.0))
    throw std::invalid_argument("DecoderConfig: occupancy_threshold must be in (0,1)");
  const int C = cfg.channels;
  for (int k = 0; k < spec.num_levels; ++k) {
    const std::string base = "decoder.stage" + std::to_string(k + 1);
    Stage s;
    s.conv1 = make_conv3d(ps, rng, base + ".conv1", C, C, 3);
    s.gn1 = make_group_norm(ps, base + ".gn1", C);
    s.conv2 = make_conv3d(ps, rng, base + ".conv2", C, C, 3);
    s.gn2 = make_group_norm(ps, base + ".gn2", C);
    // occupancy is sparse; bias the head toward empty
    s.head = make_conv3d(ps, rng, base + ".head", C, 1, 1, /*bias_init=*/-2.0);
    if (cfg.upsample == UpsampleMode::kTransposed && k + 1 < spec.num_levels) {
      s.up_w = ps.add(base + ".up.w", {C, C, 2, 2, 2},
                      kaiming_uniform(rng, static_cast<std::size_t>(C) * C * 8, C));
      s.up_b = ps.add(base + ".up.b", {C}, std::vector<double>(C, 0.0));
    }
    stages_.push_back(std::move(s));
  }
}

OccupancyPyramid OccupancyDecoder::decode(const CostVolume& cv) const {
  const auto base = spec_.dims(1);
  if (cv.grid_dims != base)
    throw std::invalid_argument("OccupancyDecoder: cost volume dims do not match the coarsest grid");
  if (cv.channels != cfg_.channels)
    throw std::invalid_argument("OccupancyDecoder: cost volume channel mismatch");

  OccupancyPyramid out;
  out.spec = spec_;
  // [Nq, D] -> [D, nx, ny, nz]
  Tensor x = reshape(transpose2d(cv.costs), {cfg_.channels, base[0], base[1], base[2]});
  for (int k = 0; k < spec_.num_levels; ++k) {
    const Stage& st = stages_[k];
    x = relu(st.gn1(st.conv1(x)));
    x = relu(st.gn2(st.conv2(x)));
    Tensor logits = st.head(x);
    Tensor p = sigmoid(logits);
    const auto d = spec_.dims(k + 1);
    out.probs.push_back(reshape(p, {1, d[0], d[1], d[2]}));
    out.binary.push_back(threshold_grid(p, cfg_.occupancy_threshold));
    if (k + 1 < spec_.num_levels) {
      x = cfg_.upsample == UpsampleMode::kTrilinear ? upsample2x_trilinear3d(x)
                                                    : conv_transpose3d_2x(x, st.up_w, st.up_b);
    } else {
      out.track_features = x;
    }
  }
  return out;
}

}  // namespace odt
