#include "odt/backbone.hpp"

#include <stdexcept>
#include <string>

namespace odt {

Backbone::Backbone(ParamStore& ps, Rng& rng, const BackboneConfig& cfg) : cfg_(cfg) {
  const int D = cfg.channels;
  for (int s = 0; s < 4; ++s) {
    const std::string base = "backbone.stage" + std::to_string(s + 1);
    const int in = (s == 0) ? 3 : D;
    const int k = (s == 0) ? 7 : 3;
    const int stride = (s == 0) ? 4 : 2;
    stages_[s].down.conv = make_conv2d(ps, rng, base + ".down", in, D, k, stride);
    stages_[s].down.norm = make_group_norm(ps, base + ".down.gn", D);
    for (int e = 0; e < cfg.stage_depth; ++e) {
      ConvBlock b;
      b.conv = make_conv2d(ps, rng, base + ".conv" + std::to_string(e), D, D, 3, 1);
      b.norm = make_group_norm(ps, base + ".conv" + std::to_string(e) + ".gn", D);
      stages_[s].extra.push_back(std::move(b));
    }
    lateral_[s] = make_conv2d(ps, rng, "backbone.lateral" + std::to_string(s + 1), D, D, 1, 1);
    smooth_[s] = make_conv2d(ps, rng, "backbone.smooth" + std::to_string(s + 1), D, D, 3, 1);
  }
}

FeaturePyramid Backbone::extract(const Tensor& image, PadMode pad) const {
  if (image.shape().size() != 3 || image.dim(0) != 3)
    throw std::invalid_argument("Backbone: expected a [3,H,W] image");
  if (image.dim(1) % 4 != 0 || image.dim(2) % 4 != 0)
    throw std::invalid_argument("Backbone: image dims must be divisible by 4, got " +
                                std::to_string(image.dim(1)) + "x" + std::to_string(image.dim(2)));

  // bottom-up trunk
  std::array<Tensor, 4> c;
  Tensor x = image;
  for (int s = 0; s < 4; ++s) {
    if (s > 0) {
      // floor rule: drop an odd trailing row/col before each stride-2 conv
      const int h = x.dim(1) & ~1, w = x.dim(2) & ~1;
      x = crop2d(x, h, w);
    }
    x = relu(stages_[s].down.norm(stages_[s].down.conv(x, pad)));
    for (const auto& b : stages_[s].extra) x = relu(b.norm(b.conv(x, pad)));
    c[s] = x;
  }

  // top-down pathway with lateral projections
  FeaturePyramid pyr;
  Tensor p = lateral_[3](c[3], pad);
  pyr.levels[3] = cfg_.fpn_smooth ? smooth_[3](p, pad) : p;
  for (int s = 2; s >= 0; --s) {
    Tensor lat = lateral_[s](c[s], pad);
    Tensor up = upsample2x_nearest2d(p, lat.dim(1), lat.dim(2));
    p = add(lat, up);
    pyr.levels[s] = cfg_.fpn_smooth ? smooth_[s](p, pad) : p;
  }
  return pyr;
}

std::pair<FeaturePyramid, FeaturePyramid> Backbone::extract_stereo(const Tensor& left,
                                                                   const Tensor& right,
                                                                   PadMode pad) const {
  if (left.shape() != right.shape())
    throw std::invalid_argument("Backbone: stereo images must have equal sizes");
  return {extract(left, pad), extract(right, pad)};
}

}  // namespace odt
