#pragma once

#include "xoftr/common.hpp"
#include "xoftr/nn.hpp"

namespace xoftr {

struct BackboneConfig {
    int c2 = 64, c4 = 128, c8 = 256;  // widths at 1/2, 1/4, 1/8
    int blocks_per_stage = 2;
};

/// Multi-scale features for one image. Tensors are channel-first.
struct FeaturePyramid {
    Tensor f_coarse;  // [C8, H/8, W/8]
    Tensor f_mid;     // [C4, H/4, W/4]
    Tensor f_fine;    // [C2, H/2, W/2]
    Grid validity_coarse;  // 1 where the whole 8x8 footprint is real content
};

/// Residual convolutional encoder with a stride-2 stem, one stride-2 stage
/// per scale and a top-down fusion path. Channel LayerNorm at each position
/// keeps activations translation-covariant at stride granularity.
class Backbone {
public:
    Backbone(ParamStore& ps, const std::string& prefix, const BackboneConfig& cfg,
             SeededStream& rng);

    FeaturePyramid extract(const Grid& image, const Grid& content_mask) const;
    /// Tensor-input variant used when the input itself needs gradients (the
    /// masked-reconstruction pretext differentiates through masked pixels).
    FeaturePyramid extract_tensor(const Tensor& image, const Grid& content_mask) const;

    const BackboneConfig& config() const { return cfg_; }

private:
    struct Block {
        Conv2d conv1, conv2;
        LayerNorm ln1, ln2;
    };
    Tensor run_block(const Block& b, const Tensor& x) const;

    BackboneConfig cfg_;
    Conv2d stem_;
    LayerNorm stem_ln_;
    std::vector<Block> stage2_, stage4_, stage8_;
    Conv2d down4_, down8_;
    LayerNorm down4_ln_, down8_ln_;
    // top-down path
    Conv2d out8_, lat4_, lat2_, smooth4_, smooth2_;
};

/// LayerNorm over channels at every spatial position of a [C,H,W] map.
Tensor channel_layer_norm(const Tensor& x, const LayerNorm& ln);

}  // namespace xoftr
