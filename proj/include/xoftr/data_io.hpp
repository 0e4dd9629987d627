#pragma once

#include "xoftr/common.hpp"
#include "xoftr/image_ops.hpp"
#include "xoftr/rng.hpp"

#include <optional>
#include <string>
#include <vector>

namespace xoftr {

/// Calibration + geometry bundle for one pair, at original image resolution.
struct PairMeta {
    Mat3 k_a = Mat3::Identity(), k_b = Mat3::Identity();
    Mat4 pose_a = Mat4::Identity(), pose_b = Mat4::Identity();  // world-to-camera
    Grid depth_a, depth_b;  // scene units; 0 marks invalid depth
};

/// Model-ready pair: intensities in [0,1], dims divisible by 8, geometry
/// rescaled to match. Masks flag real content vs padding.
struct ImagePair {
    Grid image_a, image_b;
    Grid mask_a, mask_b;
    Mat3 k_a = Mat3::Identity(), k_b = Mat3::Identity();
    Mat4 pose_a = Mat4::Identity(), pose_b = Mat4::Identity();
    Grid depth_a, depth_b;
    bool has_geometry = false;
    std::string pair_id;
};

/// Prepare an in-memory pair: optional resize of the longer side to
/// `resize_limit` (0 disables), zero-pad to multiples of 8, rescale
/// intrinsics/depth consistently. Geometry fields stay empty without meta.
ImagePair make_image_pair(const Grid& a, const Grid& b, const PairMeta* meta,
                          int resize_limit = 640, const std::string& pair_id = "");

ImagePair load_pair(const std::string& path_a, const std::string& path_b,
                    const PairMeta* meta = nullptr, int resize_limit = 640);

// --- homography synthesis -------------------------------------------------

struct HomographyRanges {
    double scale_lo = 0.8, scale_hi = 1.2;
    double rot_deg = 15.0;  // +/- range
    double persp = 0.15;    // +/- range, normalized units
};

struct SyntheticPairRecord {
    Grid source, warped;
    Mat3 gt_h = Mat3::Identity();  // source pixel coords -> warped pixel coords
    uint64_t seed = 0;
};

/// Draw scale/rotation/perspective from the seeded stream (in that order) and
/// compose them about the image centre in normalized coordinates.
Mat3 sample_homography(int rows, int cols, const HomographyRanges& ranges, SeededStream& rng);

SyntheticPairRecord build_synthetic_pair(const Grid& image, const HomographyRanges& ranges,
                                         uint64_t seed);

// --- dataset scanning -------------------------------------------------------

struct PairDescriptor {
    std::string pair_id;
    std::string image_a, image_b;
    std::string depth_a, depth_b;  // empty when the layout has no depth
    bool has_calib = false;
    Mat3 k_a = Mat3::Identity(), k_b = Mat3::Identity();
    Mat4 pose_a = Mat4::Identity(), pose_b = Mat4::Identity();
};

/// layout "posed": images/, depth/, pairs.txt, calib.txt (per image id: 9
/// intrinsics + 16 pose values, row-major, world-to-camera).
/// layout "aligned": vis/, tir/ with matching filenames.
std::vector<PairDescriptor> scan_dataset(const std::string& root, const std::string& layout);

/// Load the geometry referenced by a posed-layout descriptor.
PairMeta load_meta(const PairDescriptor& d);

// --- file primitives --------------------------------------------------------

Grid load_image_gray(const std::string& path);
ImageRGB load_image_rgb(const std::string& path);
void save_image_gray(const std::string& path, const Grid& img);  // 8-bit PNG

/// 16-bit PNG in millimetres, or flat binary (int32 rows, int32 cols, then
/// row-major float32 in scene units). Zero means invalid depth.
Grid load_depth(const std::string& path);
void save_depth_png16(const std::string& path, const Grid& depth);
void save_depth_bin(const std::string& path, const Grid& depth);

}  // namespace xoftr
