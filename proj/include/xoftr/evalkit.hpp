#pragma once

#include "xoftr/common.hpp"
#include "xoftr/subpixel.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace xoftr {

/// Angular deviation of an estimated relative pose from the reference;
/// the headline pose error is the maximum of the two components.
struct PoseErrorRecord {
    double rotation_error_deg = 0.0;
    double translation_error_deg = 0.0;
    double pose_error_deg = 0.0;
    int inlier_count = 0;
    std::string pair_id;
};

/// Relative pose mapping camera-B coordinates into camera-A:
/// x_camA = rotation * x_camB + translation (translation unit-norm,
/// recoverable only up to sign/scale from an essential matrix).
struct RelativePose {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::UnitX();
    int inliers = 0;
    bool ok = false;
};

/// Minimal five-correspondence essential matrix solver. Inputs are
/// homogeneous normalized rays (z = 1), exactly five per side. Returns all
/// real solutions (up to ten), each with Frobenius norm sqrt(2); an empty
/// list when the sample is degenerate.
std::vector<Mat3> five_point_essential(const std::vector<Vec3>& rays_a,
                                       const std::vector<Vec3>& rays_b);

/// First-order (Sampson) approximation of the squared epipolar distance in
/// normalized coordinates.
double sampson_error(const Mat3& e, const Vec3& ray_a, const Vec3& ray_b);

/// Seeded RANSAC over the minimal solver: coordinates normalized by the
/// intrinsics, inlier threshold = threshold_px / mean focal length (Sampson),
/// at most 2000 iterations with early exit at 0.9999 confidence, cheirality
/// disambiguation of the winning essential matrix. Fewer than five matches or
/// no usable model gives ok = false (callers score that as a 180 deg error).
RelativePose estimate_relative_pose(const SubpixelMatches& matches, const Mat3& k_a,
                                    const Mat3& k_b, double threshold_px = 1.5,
                                    uint64_t seed = 0);

/// Rotation error arccos((trace(R_est R_ref^T) - 1) / 2) and sign-invariant
/// translation angle arccos(|t_est . t_ref|), both in degrees. Rotations must
/// be orthonormal within 1e-6.
PoseErrorRecord pose_angular_error(const Mat3& r_est, const Vec3& t_est, const Mat3& r_ref,
                                   const Vec3& t_ref);

/// Area under the recall-vs-threshold curve, exact step-function integration:
/// AUC@T = 100/T * sum_i max(0, T - e_i) / N. Errors must be nonnegative
/// (+inf marks failures); the list must not be empty.
std::vector<double> auc_curve(const std::vector<double>& errors,
                              const std::vector<double>& thresholds);

/// Mean distance of the four image corners mapped by the two homographies;
/// a singular or non-finite estimate scores +inf.
double corner_error(const Mat3& h_est, const Mat3& h_ref, int width, int height);

/// Seeded four-point RANSAC homography (normalized DLT, reprojection
/// threshold in pixels, least-squares refit on the inlier set). ok = false
/// when fewer than four matches or no model fits.
Mat3 estimate_homography(const SubpixelMatches& matches, double threshold_px, uint64_t seed,
                         bool* ok);

/// Structured text reports: one line per pair, then a summary AUC table.
void write_pose_report(const std::string& path, const std::vector<PoseErrorRecord>& records,
                       const std::vector<double>& thresholds_deg);
void write_homography_report(const std::string& path, const std::vector<std::string>& pair_ids,
                             const std::vector<double>& corner_errors_px,
                             const std::vector<double>& thresholds_px);

}  // namespace xoftr
