#pragma once

#include "xoftr/common.hpp"

namespace xoftr {

/// 3-channel image as three planes in [0,1].
struct ImageRGB {
    Grid r, g, b;
    bool empty() const { return r.empty(); }
    int rows() const { return r.rows; }
    int cols() const { return r.cols; }
};

/// Bilinear sample at (x=col, y=row). Returns false when the 2x2 support
/// leaves the image; *out is untouched in that case.
bool bilinear_sample(const Grid& g, double x, double y, double* out);

Grid resize_bilinear(const Grid& g, int out_rows, int out_cols);
Grid resize_nearest(const Grid& g, int out_rows, int out_cols);

/// Inverse-map warp: out(y,x) = src(H^-1 (x,y)). H maps source pixel coords
/// to destination pixel coords. Out-of-bounds samples become `fill`, flagged
/// 0 in *mask when given.
Grid warp_homography(const Grid& src, const Mat3& h, int out_rows, int out_cols,
                     double fill = 0.0, Grid* mask = nullptr);

Vec2 apply_homography(const Mat3& h, const Vec2& p);

/// Separable Gaussian blur, replicate border. ksize odd.
Grid gaussian_blur(const Grid& g, int ksize, double sigma);

/// Zero-pad bottom/right so both dims are multiples of m; *mask gets 1 over
/// original content, 0 over padding.
Grid pad_to_multiple(const Grid& g, int m, Grid* mask = nullptr);

Grid to_gray(const ImageRGB& img);

void rgb_to_hsv(double r, double g, double b, double* h, double* s, double* v);
void hsv_to_rgb(double h, double s, double v, double* r, double* g, double* b);

/// Hue shift (wraparound, fraction of the circle) plus saturation/value scaling.
ImageRGB hsv_jitter(const ImageRGB& img, double hue_shift, double sat_scale, double val_scale);

/// Min-max rescale to [0,1]; constant input maps to the constant 0.5 image.
Grid minmax_normalize(const Grid& g);

}  // namespace xoftr
