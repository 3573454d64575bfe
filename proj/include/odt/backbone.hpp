#pragma once

#include <array>
#include <utility>
#include <vector>

#include "odt/nn.hpp"
#include "odt/tensor.hpp"

namespace odt {

// Four feature maps at strides {4, 8, 16, 32}, all with the same channel
// count. levels[i] has shape [D, H_i, W_i].
struct FeaturePyramid {
  static constexpr std::array<int, 4> strides{4, 8, 16, 32};
  std::array<Tensor, 4> levels;
};

struct BackboneConfig {
  int channels = 64;      // D, uniform across levels
  int stage_depth = 1;    // unit convs per stage after the downsampling conv
  bool fpn_smooth = true; // 3x3 conv after each top-down merge
};

// Shared-weight convolutional pyramid: a stride-4 stem followed by three
// stride-2 stages, with lateral 1x1 projections and a nearest-neighbor
// top-down pathway. Odd spatial sizes are floor-cropped before each
// downsampling step, so 400x880 ends at 12x27 on the stride-32 level.
class Backbone {
 public:
  Backbone(ParamStore& ps, Rng& rng, const BackboneConfig& cfg);

  // image: [3, H, W], H and W divisible by 4 (throws otherwise).
  // pad selects the convolution padding; circular padding is used by the
  // translation-consistency tests.
  FeaturePyramid extract(const Tensor& image, PadMode pad = PadMode::kZero) const;

  // Both images run through the same weights.
  std::pair<FeaturePyramid, FeaturePyramid> extract_stereo(const Tensor& left,
                                                           const Tensor& right,
                                                           PadMode pad = PadMode::kZero) const;

  int channels() const { return cfg_.channels; }

 private:
  struct ConvBlock {
    Conv2dLayer conv;
    GroupNormLayer norm;
  };
  struct Stage {
    ConvBlock down;
    std::vector<ConvBlock> extra;
  };

  BackboneConfig cfg_;
  std::array<Stage, 4> stages_;
  std::array<Conv2dLayer, 4> lateral_;
  std::array<Conv2dLayer, 4> smooth_;  // unused when fpn_smooth is off
};

}  // namespace odt
