#pragma once

#include "xoftr/fine_matcher.hpp"

#include <string>

namespace xoftr {

struct RefinedMatch {
    double xa = 0, ya = 0, xb = 0, yb = 0;  // original-image pixel coordinates
    double confidence = 0.0;                // fine-stage confidence
    int parent = 0;                         // coarse match index
};

struct SubpixelMatches {
    std::vector<RefinedMatch> matches;
};

/// Original-image pixel centre of a 1/2-scale cell index (x for columns,
/// y for rows): cell c covers pixels [2c, 2c+1], centre 2c + 0.5.
inline double fine_cell_center_px(int cell) { return 2.0 * cell + 0.5; }

/// Jointly regress four sub-pixel offsets per match from the concatenated
/// selected fine features; tanh bounds each offset strictly inside (-1,1),
/// measured in original pixels (half a fine cell). Zero-initialized final
/// layer makes all offsets start at exactly zero.
class SubpixelRegressor {
public:
    SubpixelRegressor() = default;
    SubpixelRegressor(ParamStore& ps, const std::string& prefix, int c2, int hidden,
                      SeededStream& rng);
    /// fa_sel, fb_sel: [M, C2] features of the selected cells.
    /// Returns [M, 4] = (dx_a, dy_a, dx_b, dy_b).
    Tensor operator()(const Tensor& fa_sel, const Tensor& fb_sel) const;

private:
    Linear fc1_, fc2_;
};

/// Gather the selected fine-cell feature vectors for each fine match.
/// Returns ([M, C2] for A, [M, C2] for B).
std::pair<Tensor, Tensor> gather_selected_features(const Tensor& fa5, const Tensor& fb5,
                                                   const FineMatchSet& fine);

/// Differentiable refined coordinates for training: ([M,2] A points, [M,2]
/// B points) in original pixels = fine cell centre + offset.
std::pair<Tensor, Tensor> refined_coordinates(const FineMatchSet& fine, const WindowBundle& bundle,
                                              const Tensor& offsets);

/// Final match assembly: cell centres plus offsets, clamped to the image
/// bounds, with duplicate rounded points resolved toward the higher fine
/// confidence (ties toward the smaller parent index) so no A point and no B
/// point appears twice.
SubpixelMatches assemble_matches(const FineMatchSet& fine, const WindowBundle& bundle,
                                 const Tensor& offsets, int width_a, int height_a, int width_b,
                                 int height_b);

/// ASCII match file: `# xA yA xB yB conf` header then one 6-decimal
/// fixed-point line per match.
void write_matches(const std::string& path, const SubpixelMatches& matches);
SubpixelMatches read_matches(const std::string& path);

}  // namespace xoftr
