#pragma once

#include "xoftr/backbone.hpp"
#include "xoftr/fine_matcher.hpp"

#include <cstdint>

namespace xoftr {

/// Independently drawn random patch masks for a pair of images, at
/// patch-size granularity (64 px = 8 coarse cells per side).
struct MaskPair {
    int patch = 64;
    int prows_a = 0, pcols_a = 0, prows_b = 0, pcols_b = 0;
    std::vector<uint8_t> mask_a, mask_b;  // row-major patch flags
    int masked_a() const;
    int masked_b() const;
};

/// Uniform random subset of patches without replacement, rounded to the
/// nearest integer count (always within one patch of the requested ratio).
/// Image dims must be divisible by the patch size.
MaskPair sample_mask_pair(int rows_a, int cols_a, int rows_b, int cols_b, double ratio, int patch,
                          SeededStream& rng);

/// Zero out the masked patches of an image (applied to the pixels before the
/// backbone so masked content cannot leak through convolutions).
Grid apply_patch_mask(const Grid& image, const std::vector<uint8_t>& mask, int prows, int pcols,
                      int patch);

/// Per-scale learnable replacement tokens, N(0, 0.02) initialized.
struct MimTokens {
    Tensor t8, t4, t2;
};
MimTokens make_mim_tokens(ParamStore& ps, const std::string& prefix, int c8, int c4, int c2,
                          SeededStream& rng);

/// Replace every feature cell under a masked patch with the scale's token:
/// F·(1−M) + token·M, where M is the patch mask replicated to the map's
/// resolution (exact integer replication).
Tensor tokenize_scale(const Tensor& fmap, const std::vector<uint8_t>& mask, int prows, int pcols,
                      int cells_per_patch, const Tensor& token);

/// Apply tokenize_scale to all three pyramid levels in place.
void tokenize_pyramid(FeaturePyramid* pyr, const std::vector<uint8_t>& mask, int prows, int pcols,
                      int patch, const MimTokens& tokens);

/// Flat coarse-cell indices covered by masked patches.
std::vector<int> masked_coarse_cells(const std::vector<uint8_t>& mask, int prows, int pcols,
                                     int patch, int cols8);

/// How each predicted 10x10 window is placed over its cell's 8x8 pixel
/// footprint when computing the reconstruction error.
enum class MimPlacement {
    kResample,  // bilinearly resample the 10x10 prediction to the 8x8 footprint
    kOverlap,   // overlay 10x10 windows centred on the footprint, average overlaps
};

/// Linear projection of a decoded 5x5 window (25·C2 values) to a 10x10
/// intensity patch.
struct MimHead {
    Linear proj;
};
MimHead make_mim_head(ParamStore& ps, const std::string& prefix, int c2, SeededStream& rng);

/// Project both images' decoded windows to patches: [N, 100] each.
std::pair<Tensor, Tensor> project_patches(const MimHead& head, const Tensor& fa5,
                                          const Tensor& fb5);

/// Mean squared reconstruction error over the masked pixels of both images.
/// `cells` gives the coarse cell of each batch row; sel_a/sel_b flag the rows
/// whose cell is masked in the respective image.
Tensor mim_loss(const Tensor& patches_a, const Tensor& patches_b, const std::vector<int>& cells,
                const std::vector<uint8_t>& sel_a, const std::vector<uint8_t>& sel_b,
                const Grid& target_a, const Grid& target_b, int cols8_a, int cols8_b,
                MimPlacement placement);

}  // namespace xoftr
