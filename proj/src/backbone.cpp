#include "xoftr/backbone.hpp"

namespace xoftr {

Tensor channel_layer_norm(const Tensor& x, const LayerNorm& ln) {
    // [C,H,W] -> [H,W,C] -> normalize last axis -> back
    Tensor t = permute(x, {1, 2, 0});
    t = layer_norm(t, ln.gamma, ln.beta);
    return permute(t, {2, 0, 1});
}

Backbone::Backbone(ParamStore& ps, const std::string& prefix, const BackboneConfig& cfg,
                   SeededStream& rng)
    : cfg_(cfg) {
    auto p = [&](const std::string& n) { return prefix + "." + n; };
    stem_ = make_conv2d(ps, p("stem"), 1, cfg.c2, 3, /*stride=*/2, /*pad=*/1, true, rng);
    stem_ln_ = make_layer_norm(ps, p("stem_ln"), cfg.c2);

    auto make_stage = [&](std::vector<Block>& stage, const std::string& name, int ch) {
        for (int i = 0; i < cfg.blocks_per_stage; ++i) {
            Block b;
            std::string bn = p(name + std::to_string(i));
            b.conv1 = make_conv2d(ps, bn + ".conv1", ch, ch, 3, 1, 1, true, rng);
            b.conv2 = make_conv2d(ps, bn + ".conv2", ch, ch, 3, 1, 1, true, rng);
            b.ln1 = make_layer_norm(ps, bn + ".ln1", ch);
            b.ln2 = make_layer_norm(ps, bn + ".ln2", ch);
            stage.push_back(std::move(b));
        }
    };
    make_stage(stage2_, "s2b", cfg.c2);
    down4_ = make_conv2d(ps, p("down4"), cfg.c2, cfg.c4, 3, 2, 1, true, rng);
    down4_ln_ = make_layer_norm(ps, p("down4_ln"), cfg.c4);
    make_stage(stage4_, "s4b", cfg.c4);
    down8_ = make_conv2d(ps, p("down8"), cfg.c4, cfg.c8, 3, 2, 1, true, rng);
    down8_ln_ = make_layer_norm(ps, p("down8_ln"), cfg.c8);
    make_stage(stage8_, "s8b", cfg.c8);

    out8_ = make_conv2d(ps, p("out8"), cfg.c8, cfg.c8, 1, 1, 0, true, rng);
    lat4_ = make_conv2d(ps, p("lat4"), cfg.c8, cfg.c4, 1, 1, 0, true, rng);
    lat2_ = make_conv2d(ps, p("lat2"), cfg.c4, cfg.c2, 1, 1, 0, true, rng);
    smooth4_ = make_conv2d(ps, p("smooth4"), cfg.c4, cfg.c4, 3, 1, 1, true, rng);
    smooth2_ = make_conv2d(ps, p("smooth2"), cfg.c2, cfg.c2, 3, 1, 1, true, rng);
}

Tensor Backbone::run_block(const Block& b, const Tensor& x) const {
    Tensor h = b.conv1(x);
    h = channel_layer_norm(h, b.ln1);
    h = elu(h);
    h = b.conv2(h);
    h = channel_layer_norm(h, b.ln2);
    return elu(add(x, h));
}

FeaturePyramid Backbone::extract_tensor(const Tensor& image, const Grid& content_mask) const {
    if (image.rank() != 3 || image.dim(0) != 1)
        throw ValidationError("backbone expects a [1,H,W] input");
    int h = image.dim(1), w = image.dim(2);
    if (h % 8 != 0 || w % 8 != 0)
        throw ValidationError("backbone input dims must be divisible by 8");
    if (!content_mask.empty() && (content_mask.rows != h || content_mask.cols != w))
        throw ValidationError("content mask dims do not match image");

    Tensor x2 = elu(channel_layer_norm(stem_(image), stem_ln_));
    for (const auto& b : stage2_) x2 = run_block(b, x2);
    Tensor x4 = elu(channel_layer_norm(down4_(x2), down4_ln_));
    for (const auto& b : stage4_) x4 = run_block(b, x4);
    Tensor x8 = elu(channel_layer_norm(down8_(x4), down8_ln_));
    for (const auto& b : stage8_) x8 = run_block(b, x8);

    FeaturePyramid out;
    out.f_coarse = out8_(x8);
    // stage widths already match the fused widths, so laterals are identity
    Tensor top4 = add(upsample_nearest2x(lat4_(x8)), x4);
    out.f_mid = smooth4_(top4);
    Tensor top2 = add(upsample_nearest2x(lat2_(out.f_mid)), x2);
    out.f_fine = smooth2_(top2);

    int h8 = h / 8, w8 = w / 8;
    out.validity_coarse = Grid(h8, w8, 1.0);
    if (!content_mask.empty()) {
        for (int r = 0; r < h8; ++r)
            for (int c = 0; c < w8; ++c) {
                double mn = 1.0;
                for (int i = 0; i < 8; ++i)
                    for (int j = 0; j < 8; ++j)
                        mn = std::min(mn, content_mask.at(r * 8 + i, c * 8 + j));
                out.validity_coarse.at(r, c) = mn > 0.0 ? 1.0 : 0.0;
            }
    }
    return out;
}

FeaturePyramid Backbone::extract(const Grid& image, const Grid& content_mask) const {
    Tensor t = Tensor::from({1, image.rows, image.cols}, image.v);
    return extract_tensor(t, content_mask);
}

}  // namespace xoftr
