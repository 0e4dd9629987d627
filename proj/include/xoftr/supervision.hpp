#pragma once

#include "xoftr/coarse_matcher.hpp"
#include "xoftr/data_io.hpp"
#include "xoftr/fine_matcher.hpp"

namespace xoftr {

/// Sparse boolean coarse assignment matrix; one-to-many in both directions.
struct CoarseGT {
    int rows_a = 0, cols_a = 0, rows_b = 0, cols_b = 0;
    std::vector<std::pair<int, int>> positives;  // (flat cell A, flat cell B), sorted, unique
    bool contains(int i, int j) const;
    int n_a() const { return rows_a * cols_a; }
    int n_b() const { return rows_b * cols_b; }
};

/// Per-window fine ground truth: at most one positive cell pair (mutual
/// nearest neighbour), indices into the two 5x5 windows.
struct FineGTEntry {
    bool has_positive = false;
    int ia = 0, jb = 0;
};

struct LossWeights {
    double lambda_c = 0.5;
    double lambda_f = 0.3;
    double lambda_sub = 1e4;
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;
};

/// Project an original-resolution pixel of image A into image B using depth
/// maps, intrinsics and world-to-camera poses. Returns false when the depth is
/// invalid, the point leaves the target image, or the projected depth
/// disagrees with the target depth map by more than 5% (occlusion).
bool project_with_depth(double u, double v, const Mat3& k_a, const Mat4& pose_a,
                        const Grid& depth_a, const Mat3& k_b, const Mat4& pose_b,
                        const Grid& depth_b, Vec2* out);

/// Coarse cell-centre projections in both directions; the union (with the
/// B->A direction transposed) forms the assignment matrix. Cells under the
/// padding masks are excluded.
CoarseGT build_coarse_gt(const ImagePair& pair);

/// Centre-anchored mutual nearest neighbour at 1/2 scale for each coarse
/// match: the A window's centre cell projects into B; the positive is the
/// nearest B cell if it lies inside the B window and projects back to the A
/// window centre.
std::vector<FineGTEntry> build_fine_gt(const ImagePair& pair, const CoarseMatchSet& matches);

/// Essential matrix mapping camera-B rays to camera-A epipolar lines:
/// E = [t]x R with (R, t) taken from pose_a * pose_b^-1, so ground-truth
/// correspondences satisfy x̂_A^T E x̂_B = 0. Frobenius norm sqrt(2).
Mat3 essential_from_poses(const Mat4& pose_a, const Mat4& pose_b);

/// Focal loss over the positive cells of both dual-softmax matrices, averaged
/// per matrix over positives. Empty ground truth returns 0 and sets the
/// warning flag.
Tensor coarse_loss(const Tensor& p0, const Tensor& p1, const CoarseGT& gt,
                   const LossWeights& weights, bool* warned = nullptr);

/// Mean focal loss over windows with a ground-truth positive; windows without
/// one are skipped. Empty input returns 0 and sets the warning flag.
Tensor fine_loss(const Tensor& p_f, const std::vector<FineGTEntry>& gt,
                 const LossWeights& weights, bool* warned = nullptr);

/// Symmetric epipolar distance of refined matches, averaged; coordinates are
/// normalized by the intrinsics, denominators guarded by 1e-12. Invariant to
/// the scale of E. Empty input returns 0 and sets the warning flag.
Tensor subpixel_loss(const Tensor& pa, const Tensor& pb, const Mat3& e, const Mat3& k_a,
                     const Mat3& k_b, bool* warned = nullptr);

/// lambda_c * L_c + lambda_f * L_f + lambda_sub * L_sub; a non-finite
/// component aborts with an error naming it.
Tensor total_loss(const Tensor& l_c, const Tensor& l_f, const Tensor& l_sub,
                  const LossWeights& weights);

}  // namespace xoftr
