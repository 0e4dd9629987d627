#pragma once

#include "xoftr/common.hpp"
#include "xoftr/nn.hpp"

namespace xoftr {

enum class MatchSource { RowSide, ColSide, Both };

struct CoarseMatch {
    int i = 0, j = 0;  // flattened coarse cell indices in A and B
    double confidence = 0.0;
    MatchSource source = MatchSource::RowSide;
};

struct CoarseMatchSet {
    std::vector<CoarseMatch> matches;
    int rows_a = 0, cols_a = 0, rows_b = 0, cols_b = 0;
};

struct CoarseProbabilities {
    Tensor s;   // [NA, NB] similarity
    Tensor p0;  // row-normalized
    Tensor p1;  // column-normalized
};

/// 2-D sinusoidal positional encoding, [rows*cols, dim], constant.
/// dim must be divisible by 4 (sin/cos for each of x and y).
Tensor sinusoidal_pe_2d(int rows, int cols, int dim);

/// Token-sequence transformer block with kernelized (elu+1) linear attention
/// and a gated-concat MLP residual; zero-initialized final projection makes
/// the block start as an exact identity.
class LinearAttentionBlock {
public:
    LinearAttentionBlock() = default;
    LinearAttentionBlock(ParamStore& ps, const std::string& prefix, int dim, int heads,
                         SeededStream& rng);

    /// x: [N, C] queries; source: [M, C] keys/values; source_mask: length M
    /// {0,1} flags, padded tokens excluded from the key/value sums.
    Tensor operator()(const Tensor& x, const Tensor& source,
                      const std::vector<double>& source_mask) const;

private:
    int dim_ = 0, heads_ = 0;
    Linear q_, k_, v_, merge_, mlp1_, mlp2_;
    LayerNorm norm1_, norm2_;
};

/// Kernelized (elu+1) attention evaluated at linear cost via the KV
/// aggregation trick; q: [N,C], k/v: [M,C]. Used inside the block.
Tensor linear_kernel_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                               const std::vector<double>& source_mask);

/// Dense-evaluation oracle of the same kernelized attention (quadratic form),
/// for equivalence testing only.
Tensor dense_kernel_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                              const std::vector<double>& source_mask);

/// Interleaved self/cross attention over both images' coarse tokens, weights
/// shared between images so the module is symmetric under swapping inputs.
class CoarseMatcher {
public:
    CoarseMatcher(ParamStore& ps, const std::string& prefix, int dim, int heads, int layers,
                  SeededStream& rng);

    /// fa, fb: [NA,C], [NB,C] token sequences (positional encoding added by
    /// the caller); masks flag valid (non-padded) tokens.
    std::pair<Tensor, Tensor> refine(const Tensor& fa, const Tensor& fb,
                                     const std::vector<double>& mask_a,
                                     const std::vector<double>& mask_b) const;

    int layers() const { return int(self_.size()); }

private:
    std::vector<LinearAttentionBlock> self_, cross_;
};

/// P0 = row-softmax(S), P1 = column-softmax(S); padded cells get zero
/// probability (−inf logits).
CoarseProbabilities coarse_probs_from_similarity(const Tensor& s, const std::vector<double>& mask_a,
                                                 const std::vector<double>& mask_b);

/// S(i,j) = <proj(fa_i), proj(fb_j)> / (sqrt(d) · tau), then dual softmax.
CoarseProbabilities coarse_similarity(const Tensor& fa_hat, const Tensor& fb_hat,
                                      const Linear& proj, double tau,
                                      const std::vector<double>& mask_a,
                                      const std::vector<double>& mask_b);

/// Union of row-side argmax pairs of P0 and column-side argmax pairs of P1,
/// thresholded at theta_c; duplicates merge to source=Both keeping the max
/// confidence. Ties broken toward the smallest index. Result sorted by (i,j).
CoarseMatchSet select_coarse_matches(const CoarseProbabilities& probs, double theta_c,
                                     int rows_a, int cols_a, int rows_b, int cols_b);

}  // namespace xoftr
