#pragma once

#include "xoftr/backbone.hpp"
#include "xoftr/coarse_matcher.hpp"
#include "xoftr/config.hpp"
#include "xoftr/data_io.hpp"
#include "xoftr/fine_matcher.hpp"
#include "xoftr/mim.hpp"
#include "xoftr/subpixel.hpp"

#include <string>

namespace xoftr {

/// Full inference output for one image pair; intermediate stages retained so
/// callers can inspect probabilities or reuse windows.
struct MatchResult {
    CoarseProbabilities cprobs;
    CoarseMatchSet coarse;
    WindowBundle bundle;
    Tensor p_f;               // [N,25,25] fine dual-softmax (undefined if no coarse match)
    FineMatchSet fine;
    Tensor offsets;           // [M,4] sub-pixel offsets (undefined if no fine match)
    SubpixelMatches matches;  // final deduplicated matches in image pixels
};

/// Training-time forward pass over caller-supplied coarse windows (ground
/// truth cells during fine-tuning), with differentiable outputs for all
/// three losses. Fine selection is unthresholded so every window contributes.
struct TrainForward {
    CoarseProbabilities cprobs;
    WindowBundle bundle;
    Tensor p_f;
    FineMatchSet fine;
    Tensor pa, pb;  // [M,2] refined coordinates in image pixels
};

/// Masked-reconstruction pre-training forward pass.
struct MimForward {
    Tensor loss;
    MaskPair mask;
    Grid recon_a, recon_b;  // originals with masked cells replaced by predictions
};

/// The complete matcher: shared backbone, coarse attention + dual-softmax
/// selection, windowed fine re-matching, and sub-pixel regression, plus the
/// masked-reconstruction pre-training head. All parameters live in one
/// ParamStore keyed by stable names.
class XoftrModel {
public:
    explicit XoftrModel(const RunConfig& cfg);

    MatchResult match_pair(const ImagePair& pair) const;
    TrainForward forward_training(const ImagePair& pair, const CoarseMatchSet& windows) const;
    MimForward forward_mim(const ImagePair& aligned_pair, SeededStream& mask_rng) const;

    ParamStore& params() { return ps_; }
    const ParamStore& params() const { return ps_; }
    const RunConfig& config() const { return cfg_; }
    std::string fingerprint() const { return config_fingerprint(cfg_); }

    /// Intermediate encoding shared by the forward passes.
    struct PairFeatures {
        FeaturePyramid pyr_a, pyr_b;
        std::vector<double> mask_a, mask_b;  // coarse-token validity
        Tensor fa_hat, fb_hat;               // [N,C8] attention-refined tokens
        Tensor fused_a, fused_b;             // [C4,h8,w8] fused maps
        int ha = 0, wa = 0, hb = 0, wb = 0;  // coarse grid dims
    };
    PairFeatures encode(const ImagePair& pair) const;
    CoarseProbabilities coarse_probabilities(const PairFeatures& f) const;

private:
    struct WindowDecode {
        WindowBundle bundle;
        Tensor fa5, fb5;
        Tensor p_f;
        FineMatchSet fine;
    };

    Tensor tokens_with_pe(const Tensor& fmap) const;            // [C,h,w] -> [h*w,C] + PE
    Tensor tokens_to_map(const Tensor& tok, int h, int w) const;  // [h*w,C] -> [C,h,w]
    WindowDecode decode_windows(const PairFeatures& feats, const CoarseMatchSet& windows,
                                double theta_f) const;

    RunConfig cfg_;
    ParamStore ps_;
    SeededStream init_rng_;  // drives parameter initialization, in member order
    Backbone backbone_;
    CoarseMatcher matcher_;
    Linear coarse_proj_;
    FeatureFuser fuser_;
    FineDecoder decoder_;
    SubpixelRegressor regressor_;
    MimTokens mim_tokens_;
    MimHead mim_head_;
};

/// Single-archive checkpoint of every named parameter plus the layout
/// fingerprint; loading refuses on fingerprint or shape mismatch.
void save_checkpoint(const std::string& path, const ParamStore& ps,
                     const std::string& fingerprint);
void load_checkpoint(const std::string& path, ParamStore& ps, const std::string& fingerprint);

}  // namespace xoftr
