#include "xoftr/toybench.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>

namespace xoftr {

Grid make_toy_texture(int rows, int cols, uint64_t seed) {
    SeededStream rng(seed ^ 0xa0761d6478bd642full);
    Grid g(rows, cols);
    for (double& v : g.v) v = rng.uniform();
    g = gaussian_blur(g, 7, 1.5);
    g = minmax_normalize(g);

    // A handful of soft discs breaks up the noise with larger structure.
    const int discs = 6;
    for (int k = 0; k < discs; ++k) {
        const double cy = rng.uniform(0.0, rows - 1.0);
        const double cx = rng.uniform(0.0, cols - 1.0);
        const double radius = rng.uniform(3.0, rows / 4.0);
        const double amp = rng.uniform(-0.5, 0.5);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) {
                const double d2 = (r - cy) * (r - cy) + (c - cx) * (c - cx);
                g.at(r, c) += amp * std::exp(-d2 / (2.0 * radius * radius));
            }
    }

    // A global ramp disambiguates repeated texture across the image.
    const double angle = rng.uniform(0.0, 2.0 * kPi);
    const double gx = std::cos(angle), gy = std::sin(angle);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            g.at(r, c) += 0.3 * (gx * c / cols + gy * r / rows);

    g = gaussian_blur(g, 3, 0.8);
    return minmax_normalize(g);
}

namespace {

double grid_mean(const Grid& g) {
    double s = 0.0;
    for (double v : g.v) s += v;
    return g.v.empty() ? 0.0 : s / double(g.v.size());
}

}  // namespace

ToyPair make_toy_pair(const ToyParams& p, uint64_t seed, bool augment_train) {
    SeededStream rng(seed * 0x2545f4914f6cdd1dull + 0x9e3779b97f4a7c15ull);
    const Grid tex = make_toy_texture(p.rows, p.cols, rng.raw());

    Mat3 k = Mat3::Identity();
    k(0, 0) = k(1, 1) = p.focal;
    k(0, 2) = p.cols / 2.0;
    k(1, 2) = p.rows / 2.0;
    const double d = p.plane_depth;

    Mat3 rot;
    Vec3 t;
    Mat3 h;
    Grid image_b, observed_b, observed_a;
    bool found = false;
    for (int attempt = 0; attempt < 30 && !found; ++attempt) {
        Vec3 axis(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        if (axis.norm() < 1e-6) axis = Vec3::UnitY();
        const double angle = deg2rad(rng.uniform(-p.max_rot_deg, p.max_rot_deg));
        rot = Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
        t = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), 0.3 * rng.uniform(-1, 1)) *
            (p.trans_frac * d);
        if (t.norm() < p.min_trans_frac * d) continue;

        // Homography induced by the plane z = d (world frame = camera A).
        h = k * (rot + t * Vec3::UnitZ().transpose() / d) * k.inverse();
        h /= h(2, 2);

        image_b = warp_homography(tex, h, p.rows, p.cols, 0.0, &observed_b);
        if (grid_mean(observed_b) < p.min_coverage) continue;
        warp_homography(image_b, h.inverse().eval(), p.rows, p.cols, 0.0, &observed_a);
        if (grid_mean(observed_a) < p.min_coverage) continue;
        found = true;
    }
    if (!found) throw Error("could not sample a sufficiently overlapping toy view");

    PairMeta meta;
    meta.k_a = meta.k_b = k;
    meta.pose_a = Mat4::Identity();
    meta.pose_b = Mat4::Identity();
    meta.pose_b.block<3, 3>(0, 0) = rot;
    meta.pose_b.block<3, 1>(0, 3) = t;
    meta.depth_a = Grid(p.rows, p.cols, d);
    meta.depth_b = Grid(p.rows, p.cols, 0.0);
    const Vec3 r3 = rot.col(2);  // world z-axis expressed in camera B
    const Mat3 k_inv = k.inverse();
    for (int r = 0; r < p.rows; ++r)
        for (int c = 0; c < p.cols; ++c) {
            if (observed_b.at(r, c) == 0.0) continue;  // plane content not visible
            const Vec3 ray = k_inv * Vec3(c, r, 1.0);
            const double denom = r3.dot(ray);
            if (std::abs(denom) < 1e-9) continue;
            meta.depth_b.at(r, c) = (d + r3.dot(t)) / denom;
        }

    ToyPair pair;
    pair.gt_h = h;
    const ImagePair base =
        make_image_pair(tex, image_b, &meta, 0, "toy_" + std::to_string(seed));

    pair.thermal_on_a = rng.bernoulli(0.5);
    const uint64_t thermal_seed = rng.raw();
    pair.eval = base;
    Grid& side = pair.thermal_on_a ? pair.eval.image_a : pair.eval.image_b;
    side = augment_pipeline_gray(side, thermal_seed, p.augment);
    pair.train = augment_train ? pair.eval : base;
    return pair;
}

ToyEval evaluate_toy(const XoftrModel& model, const std::vector<ToyPair>& pairs,
                     double px_threshold) {
    ToyEval ev;
    for (const ToyPair& tp : pairs) {
        const MatchResult res = model.match_pair(tp.eval);
        for (const RefinedMatch& m : res.matches.matches) {
            ++ev.total;
            const Vec2 proj = apply_homography(tp.gt_h, Vec2(m.xa, m.ya));
            const double err = std::hypot(proj.x() - m.xb, proj.y() - m.yb);
            if (err < px_threshold) ++ev.correct;
        }
    }
    return ev;
}

}  // namespace xoftr
