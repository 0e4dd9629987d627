#pragma once

#include "xoftr/coarse_matcher.hpp"
#include "xoftr/common.hpp"
#include "xoftr/nn.hpp"

namespace xoftr {

/// Window centre of a coarse cell index at the two finer scales. A coarse
/// cell covers a 2x2 block at 1/4 scale and a 4x4 block at 1/2 scale; the
/// centre rounds to the upper cell of the block.
inline int mid_window_center(int coarse_idx) { return 2 * coarse_idx + 1; }
inline int fine_window_center(int coarse_idx) { return 4 * coarse_idx + 2; }

/// Batched multi-scale windows for the retained coarse matches.
struct WindowBundle {
    Tensor wa1, wb1;  // [N, 1, C4]  fused-map cell features
    Tensor wa3, wb3;  // [N, 9, C4]  3x3 windows at 1/4 scale
    Tensor wa5, wb5;  // [N, 25, C2] 5x5 windows at 1/2 scale
    std::vector<std::pair<int, int>> center_a5, center_b5;  // (row, col) at 1/2 scale
    std::vector<std::vector<double>> mask_a3, mask_b3, mask_a5, mask_b5;
    std::vector<int> parent;  // index into the source coarse match list
    int n() const { return int(parent.size()); }
};

struct FineMatch {
    int parent = 0;           // index into the coarse match list
    int ia = 0, jb = 0;       // cell indices inside the two 5x5 windows
    double confidence = 0.0;  // P_f at the selected cell
};

struct FineMatchSet {
    std::vector<FineMatch> matches;
};

/// Eq-4-style fusion of attention output with the raw coarse map:
/// concat channels -> 1x1 conv to C4 -> 3x3 depthwise conv.
class FeatureFuser {
public:
    FeatureFuser() = default;
    FeatureFuser(ParamStore& ps, const std::string& prefix, int c8, int c4, SeededStream& rng);
    Tensor operator()(const Tensor& f_hat, const Tensor& f_raw) const;  // [C8,h,w]x2 -> [C4,h,w]

private:
    Conv2d pointwise_;
    Tensor dw_w_, dw_b_;
};

/// Crop the per-match window pyramid. Windows at borders are zero padded and
/// flagged in the masks. Duplicate coarse cells yield independent copies.
WindowBundle crop_match_windows(const CoarseMatchSet& matches, const Tensor& fused_a,
                                const Tensor& fused_b, const Tensor& mid_a, const Tensor& mid_b,
                                const Tensor& fine_a, const Tensor& fine_b);

/// Standard softmax self-attention over each window's token sequence,
/// batched, with padded keys masked; residual structure starts as identity
/// when the final MLP projection is zero-initialized.
class SoftmaxSelfBlock {
public:
    SoftmaxSelfBlock() = default;
    SoftmaxSelfBlock(ParamStore& ps, const std::string& prefix, int dim, int heads,
                     SeededStream& rng);
    /// x: [N, T, C]; key_mask: per window, length T (empty = all valid).
    Tensor operator()(const Tensor& x, const std::vector<std::vector<double>>& key_mask) const;

private:
    int dim_ = 0, heads_ = 0;
    Linear q_, k_, v_, merge_, mlp1_, mlp2_;
    LayerNorm norm1_, norm2_;
};

/// Bidirectional cross-attention with shared query/key projection: each side
/// attends to the other with the same similarity matrix (transposed), so
/// swapping inputs swaps outputs bit-exactly.
class BidirCrossBlock {
public:
    BidirCrossBlock() = default;
    BidirCrossBlock(ParamStore& ps, const std::string& prefix, int dim, int heads,
                    SeededStream& rng);
    std::pair<Tensor, Tensor> operator()(const Tensor& a, const Tensor& b,
                                         const std::vector<std::vector<double>>& mask_a,
                                         const std::vector<std::vector<double>>& mask_b) const;

private:
    Tensor run_side(const Tensor& x, const Tensor& scores, const Tensor& values,
                    const Tensor& key_mask) const;
    int dim_ = 0, heads_ = 0;
    Linear qk_, v_, merge_, mlp1_, mlp2_;
    LayerNorm norm1_, norm2_;
};

/// Two-stage window decoder: (1x1 + 3x3) tokens -> self + cross attention at
/// C4, then (3x3 + 5x5) tokens -> self + cross attention at C2. An absolute
/// positional bias (2-layer MLP of normalized in-window coordinates) is added
/// to every window feature before each transformer layer.
class FineDecoder {
public:
    FineDecoder() = default;
    FineDecoder(ParamStore& ps, const std::string& prefix, int c4, int c2, int heads,
                SeededStream& rng);

    struct Result {
        Tensor fa5, fb5;  // [N, 25, C2]
    };
    Result decode(const WindowBundle& bundle) const;

    void set_positional_bias(bool on) { use_positional_bias_ = on; }

private:
    Tensor stage1_bias() const;  // [10, C4]
    Tensor stage2_bias() const;  // [34, C2]

    Linear down1_;  // C4 -> C4 projection of the 1x1 token
    Linear down2_;  // C4 -> C2 projection of stage-1 tokens
    SoftmaxSelfBlock self1_, self2_;
    BidirCrossBlock cross1_, cross2_;
    Linear pos1_a_, pos1_b_;  // 2 -> C4 -> C4
    Linear pos2_a_, pos2_b_;  // 2 -> C2 -> C2
    bool use_positional_bias_ = true;
};

/// S_f(i,j) = <fa_i, fb_j> / (sqrt(d)·tau) per window.
Tensor fine_similarity(const Tensor& fa5, const Tensor& fb5, double tau);

/// Dual softmax over each 25x25 similarity with padded cells masked out.
Tensor fine_probs(const Tensor& s_f, const std::vector<std::vector<double>>& mask_a5,
                  const std::vector<std::vector<double>>& mask_b5);

/// Global argmax per window, kept when P_f >= theta_f; ties break toward the
/// smallest flat index. Output ordered by parent match index.
FineMatchSet select_fine_matches(const Tensor& p_f, const WindowBundle& bundle, double theta_f);

}  // namespace xoftr
