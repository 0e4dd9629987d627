#pragma once

#include "xoftr/image_ops.hpp"
#include "xoftr/rng.hpp"

namespace xoftr {

/// Pseudo-thermal synthesis settings. The cosine transform remaps intensity
/// with a randomized frequency/phase; HSV jitter and blur make the visible
/// source less photometrically clean before the remap.
struct AugmentParams {
    double w0 = 2.0 * kPi / 3.0;  // base frequency (radians)
    double w_r = kPi / 2.0;       // frequency randomization span
    double theta_r = kPi / 2.0;   // phase randomization span
    double hue_range = 0.1;       // +/- hue shift, wraparound fraction
    double sat_lo = 0.7, sat_hi = 1.3;
    double val_lo = 0.7, val_hi = 1.3;
    int blur_kernel = 5;
    double blur_sigma = 1.0;
    double blur_probability = 0.5;

    void validate() const;
};

/// Per-call randomization, in draw order.
struct AugmentDraws {
    double hue = 0.0, sat = 1.0, val = 1.0;
    double alpha0 = 0.0, alpha1 = 0.0;
    bool blur = false;
};

AugmentDraws draw_augment_params(uint64_t seed, const AugmentParams& params);

/// Randomized cosine intensity remap:
///   out = MinMaxNorm( cos( w̄·(I − 0.5) + θ̄ ) )
/// with w̄ = w0 + |alpha0|·w_r and θ̄ = π/2 + alpha1·θ_r. Constant inputs map
/// to the constant 0.5 image.
Grid pseudo_thermal_transform(const Grid& image, double alpha0, double alpha1,
                              const AugmentParams& params);

/// Full pipeline: HSV jitter -> grayscale -> cosine remap (alpha0, alpha1 ~
/// N(0,1) from the seeded stream) -> optional 5x5 Gaussian blur. Draw order:
/// hue, saturation, value, alpha0, alpha1, blur coin.
Grid augment_pipeline(const ImageRGB& rgb, uint64_t seed, const AugmentParams& params);

/// Same pipeline for an already-gray image (hue/saturation jitter is a no-op
/// on gray content; value scaling still applies).
Grid augment_pipeline_gray(const Grid& gray, uint64_t seed, const AugmentParams& params);

}  // namespace xoftr
