#include "xoftr/augment.hpp"

#include <cmath>

namespace xoftr {

void AugmentParams::validate() const {
    if (!(w0 > 0.0)) throw ValidationError("augment: w0 must be positive");
    if (blur_kernel < 3 || blur_kernel % 2 == 0)
        throw ValidationError("augment: blur kernel must be odd and >= 3");
    if (blur_probability < 0.0 || blur_probability > 1.0)
        throw ValidationError("augment: blur probability must be in [0,1]");
}

Grid pseudo_thermal_transform(const Grid& image, double alpha0, double alpha1,
                              const AugmentParams& params) {
    params.validate();
    double w_bar = params.w0 + std::abs(alpha0) * params.w_r;
    double theta_bar = kPi / 2.0 + alpha1 * params.theta_r;
    Grid out(image.rows, image.cols);
    for (size_t i = 0; i < image.v.size(); ++i) {
        double x = image.v[i];
        if (std::isnan(x)) throw ValidationError("pseudo_thermal_transform: NaN pixel");
        out.v[i] = std::cos(w_bar * (x - 0.5) + theta_bar);
    }
    return minmax_normalize(out);
}

AugmentDraws draw_augment_params(uint64_t seed, const AugmentParams& params) {
    SeededStream rng(seed);
    AugmentDraws d;
    d.hue = rng.uniform(-params.hue_range, params.hue_range);
    d.sat = rng.uniform(params.sat_lo, params.sat_hi);
    d.val = rng.uniform(params.val_lo, params.val_hi);
    d.alpha0 = rng.normal();
    d.alpha1 = rng.normal();
    d.blur = rng.bernoulli(params.blur_probability);
    return d;
}

namespace {

Grid run_pipeline(const ImageRGB& rgb, uint64_t seed, const AugmentParams& params) {
    params.validate();
    AugmentDraws d = draw_augment_params(seed, params);
    Grid gray = to_gray(hsv_jitter(rgb, d.hue, d.sat, d.val));
    Grid out = pseudo_thermal_transform(gray, d.alpha0, d.alpha1, params);
    if (d.blur) out = gaussian_blur(out, params.blur_kernel, params.blur_sigma);
    return out;
}

}  // namespace

Grid augment_pipeline(const ImageRGB& rgb, uint64_t seed, const AugmentParams& params) {
    return run_pipeline(rgb, seed, params);
}

Grid augment_pipeline_gray(const Grid& gray, uint64_t seed, const AugmentParams& params) {
    ImageRGB rgb{gray, gray, gray};
    return run_pipeline(rgb, seed, params);
}

}  // namespace xoftr
