#include <doctest.h>

#include "support.hpp"
#include "xoftr/backbone.hpp"
#include "xoftr/image_ops.hpp"

#include <cmath>

using namespace xoftr;

namespace {

BackboneConfig toy_config() {
    BackboneConfig cfg;
    cfg.c2 = 8;
    cfg.c4 = 16;
    cfg.c8 = 32;
    cfg.blocks_per_stage = 2;
    return cfg;
}

Grid random_image(int rows, int cols, SeededStream& rng) {
    Grid g(rows, cols);
    for (auto& v : g.v) v = rng.uniform();
    return g;
}

Grid ones_mask(int rows, int cols) { return Grid(rows, cols, 1.0); }

}  // namespace

TEST_CASE("backbone produces the 1/8, 1/4, 1/2 pyramid shapes") {
    SeededStream rng(11);
    ParamStore ps;
    Backbone bb(ps, "bb", toy_config(), rng);
    Grid img = random_image(64, 48, rng);
    FeaturePyramid pyr = bb.extract(img, ones_mask(64, 48));
    CHECK(pyr.f_coarse.shape() == Shape{32, 8, 6});
    CHECK(pyr.f_mid.shape() == Shape{16, 16, 12});
    CHECK(pyr.f_fine.shape() == Shape{8, 32, 24});
    CHECK(pyr.validity_coarse.rows == 8);
    CHECK(pyr.validity_coarse.cols == 6);
    for (double v : pyr.validity_coarse.v) CHECK(v == 1.0);
}

TEST_CASE("backbone marks padded coarse cells invalid") {
    SeededStream rng(12);
    ParamStore ps;
    Backbone bb(ps, "bb", toy_config(), rng);
    Grid img = random_image(45, 60, rng);
    Grid mask;
    Grid padded = pad_to_multiple(img, 8, &mask);
    REQUIRE(padded.rows == 48);
    REQUIRE(padded.cols == 64);
    FeaturePyramid pyr = bb.extract(padded, mask);
    // rows 45..47 are padding -> bottom cell row partially padded; cols 60..63 too.
    for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 8; ++c) {
            const bool full = (r < 5) && (c < 7);
            CHECK(pyr.validity_coarse.at(r, c) == (full ? 1.0 : 0.0));
        }
}

TEST_CASE("backbone output is finite on a zero image and bit-identical across runs") {
    SeededStream rng(13);
    ParamStore ps;
    Backbone bb(ps, "bb", toy_config(), rng);
    Grid img(32, 32);  // all zeros
    FeaturePyramid p1 = bb.extract(img, ones_mask(32, 32));
    for (double v : p1.f_coarse.values()) CHECK(std::isfinite(v));
    for (double v : p1.f_mid.values()) CHECK(std::isfinite(v));
    for (double v : p1.f_fine.values()) CHECK(std::isfinite(v));

    FeaturePyramid p2 = bb.extract(img, ones_mask(32, 32));
    CHECK(p1.f_coarse.values() == p2.f_coarse.values());
    CHECK(p1.f_mid.values() == p2.f_mid.values());
    CHECK(p1.f_fine.values() == p2.f_fine.values());

    // Same seed, separate instance: identical weights, identical outputs.
    SeededStream rng2(13);
    ParamStore ps2;
    Backbone bb2(ps2, "bb", toy_config(), rng2);
    Grid img2 = random_image(32, 32, rng2);
    FeaturePyramid q1 = bb.extract(img2, ones_mask(32, 32));
    FeaturePyramid q2 = bb2.extract(img2, ones_mask(32, 32));
    CHECK(q1.f_coarse.values() == q2.f_coarse.values());
}

TEST_CASE("backbone coarse features are covariant to 8-pixel translation") {
    SeededStream rng(14);
    ParamStore ps;
    Backbone bb(ps, "bb", toy_config(), rng);
    // Two crops of one wide image, offset by exactly 8 px (one coarse cell).
    // Cells whose full receptive field (~127 px, i.e. 8 cells) lies inside
    // both crops must agree exactly, one cell apart.
    Grid wide = random_image(288, 296, rng);
    Grid a(288, 288), b(288, 288);
    for (int r = 0; r < 288; ++r)
        for (int c = 0; c < 288; ++c) {
            a.at(r, c) = wide.at(r, c);
            b.at(r, c) = wide.at(r, c + 8);
        }
    FeaturePyramid pa = bb.extract(a, ones_mask(288, 288));
    FeaturePyramid pb = bb.extract(b, ones_mask(288, 288));
    const int cells = 36, margin = 8, ch = 32;
    const double* da = pa.f_coarse.data();
    const double* db = pb.f_coarse.data();
    double worst = 0.0;
    for (int k = 0; k < ch; ++k)
        for (int r = margin; r < cells - margin; ++r)
            for (int c = margin; c < cells - margin - 1; ++c) {
                // cell (r, c+1) of A sees the same pixels as cell (r, c) of B
                double va = da[(size_t(k) * cells + r) * cells + c + 1];
                double vb = db[(size_t(k) * cells + r) * cells + c];
                double rel = std::abs(va - vb) / std::max({1e-12, std::abs(va), std::abs(vb)});
                worst = std::max(worst, rel);
            }
    CHECK(worst < 1e-10);
}

TEST_CASE("backbone gradients match central differences") {
    SeededStream rng(15);
    ParamStore ps;
    BackboneConfig cfg;
    cfg.c2 = 4;
    cfg.c4 = 6;
    cfg.c8 = 8;
    cfg.blocks_per_stage = 1;
    Backbone bb(ps, "bb", cfg, rng);
    Grid img = random_image(16, 16, rng);
    Grid mask = ones_mask(16, 16);
    auto loss_fn = [&]() {
        FeaturePyramid pyr = bb.extract(img, mask);
        return add(add(mean_all(square(pyr.f_coarse)), mean_all(square(pyr.f_mid))),
                   mean_all(square(pyr.f_fine)));
    };
    double err = testsupport::max_rel_grad_err(ps.all(), loss_fn);
    CHECK(err < 1e-3);
}
