#include <doctest.h>

#include "support.hpp"
#include "xoftr/mim.hpp"

#include <cmath>

using namespace xoftr;

namespace {

std::vector<int> all_cells(int n) {
    std::vector<int> c(n);
    for (int i = 0; i < n; ++i) c[i] = i;
    return c;
}

}  // namespace

TEST_CASE("mask sampling hits the requested ratio within one patch") {
    SeededStream rng(61);
    MaskPair mp = sample_mask_pair(448, 640, 448, 640, 0.5, 64, rng);
    CHECK(mp.prows_a == 7);
    CHECK(mp.pcols_a == 10);
    CHECK(mp.masked_a() == 35);
    CHECK(mp.masked_b() == 35);
    CHECK(mp.mask_a != mp.mask_b);  // drawn independently

    MaskPair m0 = sample_mask_pair(128, 128, 128, 128, 0.0, 64, rng);
    CHECK(m0.masked_a() == 0);
    MaskPair m1 = sample_mask_pair(128, 128, 128, 128, 1.0, 64, rng);
    CHECK(m1.masked_a() == 4);

    for (double ratio : {0.3, 0.5, 0.77}) {
        MaskPair m = sample_mask_pair(448, 640, 448, 640, ratio, 64, rng);
        CHECK(std::abs(m.masked_a() - ratio * 70.0) <= 1.0);
        CHECK(std::abs(m.masked_b() - ratio * 70.0) <= 1.0);
    }

    SeededStream r1(99), r2(99);
    MaskPair a = sample_mask_pair(448, 640, 448, 640, 0.5, 64, r1);
    MaskPair b = sample_mask_pair(448, 640, 448, 640, 0.5, 64, r2);
    CHECK(a.mask_a == b.mask_a);
    CHECK(a.mask_b == b.mask_b);

    CHECK_THROWS_WITH_AS(sample_mask_pair(100, 64, 64, 64, 0.5, 64, rng),
                         doctest::Contains("padded"), ValidationError);
}

TEST_CASE("patch masking zeroes exactly the masked pixels before the backbone") {
    Grid img(128, 192);
    for (int r = 0; r < 128; ++r)
        for (int c = 0; c < 192; ++c) img.at(r, c) = 1.0 + r * 0.001 + c * 0.0001;
    std::vector<uint8_t> mask(2 * 3, 0);
    mask[0 * 3 + 1] = 1;  // patch (0,1)
    mask[1 * 3 + 2] = 1;  // patch (1,2)
    Grid out = apply_patch_mask(img, mask, 2, 3, 64);
    int zeros = 0;
    for (int r = 0; r < 128; ++r)
        for (int c = 0; c < 192; ++c) {
            const bool in_masked = (r < 64 && c >= 64 && c < 128) || (r >= 64 && c >= 128);
            if (in_masked) {
                CHECK(out.at(r, c) == 0.0);
                ++zeros;
            } else {
                CHECK(out.at(r, c) == img.at(r, c));
            }
        }
    CHECK(zeros == 2 * 64 * 64);
    CHECK_THROWS_AS(apply_patch_mask(img, mask, 3, 3, 64), ValidationError);
}

TEST_CASE("token replacement covers exactly the masked cells at every scale") {
    SeededStream rng(62);
    ParamStore ps;
    MimTokens tok = make_mim_tokens(ps, "mim", 6, 4, 2, rng);
    CHECK(tok.t8.shape() == Shape{6});

    // One 64px patch masked out of a 2x2 patch grid; coarse map 16x16.
    std::vector<uint8_t> mask = {0, 1, 0, 0};
    Tensor fmap = testsupport::random_tensor({6, 16, 16}, rng, 1.0, false);
    Tensor out = tokenize_scale(fmap, mask, 2, 2, 8, tok.t8);
    int replaced = 0;
    for (int k = 0; k < 6; ++k)
        for (int r = 0; r < 16; ++r)
            for (int c = 0; c < 16; ++c) {
                double got = out.data()[(size_t(k) * 16 + r) * 16 + c];
                if (r < 8 && c >= 8) {
                    CHECK(got == tok.t8.data()[k]);
                    if (k == 0) ++replaced;
                } else {
                    CHECK(got == fmap.data()[(size_t(k) * 16 + r) * 16 + c]);
                }
            }
    CHECK(replaced == 64);

    // Empty mask leaves the map untouched; full mask replaces every cell.
    Tensor same = tokenize_scale(fmap, {0, 0, 0, 0}, 2, 2, 8, tok.t8);
    CHECK(same.values() == fmap.values());
    Tensor full = tokenize_scale(fmap, {1, 1, 1, 1}, 2, 2, 8, tok.t8);
    for (int k = 0; k < 6; ++k)
        for (int i = 0; i < 256; ++i) CHECK(full.data()[k * 256 + i] == tok.t8.data()[k]);

    // Pyramid variant applies the right replication factor per scale.
    FeaturePyramid pyr;
    pyr.f_coarse = testsupport::random_tensor({6, 16, 16}, rng, 1.0, false);
    pyr.f_mid = testsupport::random_tensor({4, 32, 32}, rng, 1.0, false);
    pyr.f_fine = testsupport::random_tensor({2, 64, 64}, rng, 1.0, false);
    Tensor before = pyr.f_fine;
    tokenize_pyramid(&pyr, mask, 2, 2, 64, tok);
    int changed = 0;
    for (int i = 0; i < 64 * 64; ++i)
        if (pyr.f_fine.data()[i] != before.data()[i]) ++changed;
    CHECK(changed == 32 * 32);  // one patch = 32x32 cells at 1/2 scale

    CHECK_THROWS_AS(tokenize_scale(fmap, mask, 2, 2, 4, tok.t8), ValidationError);
}

TEST_CASE("masked coarse cell enumeration replicates the patch mask") {
    std::vector<uint8_t> mask = {1, 0, 0, 1};  // patches (0,0) and (1,1) of a 2x2 grid
    std::vector<int> cells = masked_coarse_cells(mask, 2, 2, 64, 16);
    REQUIRE(cells.size() == 128);
    CHECK(std::is_sorted(cells.begin(), cells.end()));
    for (int dr = 0; dr < 8; ++dr)
        for (int dc = 0; dc < 8; ++dc) {
            CHECK(std::binary_search(cells.begin(), cells.end(), dr * 16 + dc));
            CHECK(std::binary_search(cells.begin(), cells.end(), (8 + dr) * 16 + 8 + dc));
            CHECK_FALSE(std::binary_search(cells.begin(), cells.end(), dr * 16 + 8 + dc));
        }
    CHECK_THROWS_AS(masked_coarse_cells(mask, 2, 2, 64, 8), ValidationError);
}

TEST_CASE("reconstruction loss is exact on constant images for both placements") {
    // One 64x64 image fully masked: windows for all 64 coarse cells.
    const int n = 64;
    Grid target_a(64, 64, 0.5), target_b(64, 64, 0.25);
    std::vector<int> cells = all_cells(n);
    std::vector<uint8_t> sel_a(n, 1), sel_b(n, 1);
    Tensor pa = Tensor::from({n, 100}, std::vector<double>(n * 100, 0.6));
    Tensor pb = Tensor::from({n, 100}, std::vector<double>(n * 100, 0.25));

    for (MimPlacement placement : {MimPlacement::kResample, MimPlacement::kOverlap}) {
        // A is off by 0.1 everywhere, B is exact: mean over both = 0.01 / 2.
        Tensor loss = mim_loss(pa, pb, cells, sel_a, sel_b, target_a, target_b, 8, 8, placement);
        CHECK(loss.data()[0] == doctest::Approx(0.005).epsilon(1e-12));

        // Only A selected: 0.01 exactly (the documented example).
        Tensor la = mim_loss(pa, pb, cells, sel_a, std::vector<uint8_t>(n, 0), target_a,
                             target_b, 8, 8, placement);
        CHECK(la.data()[0] == doctest::Approx(0.01).epsilon(1e-12));

        // Exact predictions cost nothing.
        Tensor pz = Tensor::from({n, 100}, std::vector<double>(n * 100, 0.5));
        Tensor l0 = mim_loss(pz, pb, cells, sel_a, sel_b, target_a, target_b, 8, 8, placement);
        CHECK(l0.data()[0] == 0.0);

        // Nothing selected: zero.
        Tensor ln = mim_loss(pa, pb, cells, std::vector<uint8_t>(n, 0),
                             std::vector<uint8_t>(n, 0), target_a, target_b, 8, 8, placement);
        CHECK(ln.data()[0] == 0.0);
    }
}

TEST_CASE("bilinear resampling reconstructs linear gradients exactly") {
    // Target value = image row index; windows hold the matching linear ramp.
    Grid target(64, 64);
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 64; ++c) target.at(r, c) = double(r);
    const int n = 64;
    std::vector<double> vals(n * 100);
    for (int w = 0; w < n; ++w) {
        const int cell_row = w / 8;
        for (int ir = 0; ir < 10; ++ir)
            for (int ic = 0; ic < 10; ++ic)
                // row o of the 8x8 footprint samples the window at 1.25*o + 0.125,
                // so a ramp of slope 0.8 with offset 8*cell_row - 0.1 recovers
                // exactly 8*cell_row + o.
                vals[(size_t(w) * 10 + ir) * 10 + ic] = 0.8 * ir + 8.0 * cell_row - 0.1;
    }
    Tensor patches = Tensor::from({n, 100}, vals);
    Tensor zero = Tensor::zeros({n, 100});
    Tensor loss = mim_loss(patches, zero, all_cells(n), std::vector<uint8_t>(n, 1),
                           std::vector<uint8_t>(n, 0), target, target, 8, 8,
                           MimPlacement::kResample);
    CHECK(loss.data()[0] < 1e-22);
}

TEST_CASE("overlapping placement centres windows and averages shared pixels") {
    Grid target(64, 64, 0.5);
    // Single masked cell (1,1): every covered masked pixel has one contributor,
    // and the window is centred on the 8x8 footprint with a one-pixel ring.
    {
        std::vector<int> cells = {1 * 8 + 1};
        std::vector<double> vals(100);
        for (int wr = 0; wr < 10; ++wr)
            for (int wc = 0; wc < 10; ++wc) vals[wr * 10 + wc] = 0.5 + 0.1;
        // Poison the ring tokens: pixels outside the masked cell must be ignored.
        for (int i = 0; i < 10; ++i) {
            vals[0 * 10 + i] = 99.0;
            vals[9 * 10 + i] = 99.0;
            vals[i * 10 + 0] = 99.0;
            vals[i * 10 + 9] = 99.0;
        }
        Tensor p = Tensor::from({1, 100}, vals);
        Tensor z = Tensor::zeros({1, 100});
        Tensor loss = mim_loss(p, z, cells, {1}, {0}, target, target, 8, 8,
                               MimPlacement::kOverlap);
        CHECK(loss.data()[0] == doctest::Approx(0.01).epsilon(1e-12));
    }
    // Two horizontally adjacent masked cells: the two columns where the windows
    // overlap average the +0.2 and -0.2 predictions to an exact hit.
    {
        std::vector<int> cells = {1 * 8 + 1, 1 * 8 + 2};
        Tensor p = Tensor::from(
            {2, 100}, [] {
                std::vector<double> v(200);
                for (int i = 0; i < 100; ++i) v[i] = 0.7;        // window 0: +0.2
                for (int i = 100; i < 200; ++i) v[i] = 0.3;      // window 1: -0.2
                return v;
            }());
        Tensor z = Tensor::zeros({2, 100});
        Tensor loss = mim_loss(p, z, cells, {1, 1}, {0, 0}, target, target, 8, 8,
                               MimPlacement::kOverlap);
        // 128 masked pixels; 2x8 of them get both windows (error 0), the other
        // 112 get one window (error 0.04).
        CHECK(loss.data()[0] == doctest::Approx(112.0 * 0.04 / 128.0).epsilon(1e-12));
    }
}

TEST_CASE("projection head emits one 10x10 patch per window") {
    SeededStream rng(63);
    ParamStore ps;
    MimHead head = make_mim_head(ps, "mim", 4, rng);
    Tensor fa5 = testsupport::random_tensor({3, 25, 4}, rng, 1.0, false);
    Tensor fb5 = testsupport::random_tensor({3, 25, 4}, rng, 1.0, false);
    auto [pa, pb] = project_patches(head, fa5, fb5);
    CHECK(pa.shape() == Shape{3, 100});
    CHECK(pb.shape() == Shape{3, 100});
    CHECK(pa.values() != pb.values());
}

TEST_CASE("token replacement is differentiable in the map and the token") {
    SeededStream rng(65);
    ParamStore ps;
    MimTokens tok = make_mim_tokens(ps, "mim", 3, 3, 2, rng);
    Tensor fmap = testsupport::random_tensor({2, 4, 4}, rng, 0.5, true);
    std::vector<uint8_t> mask = {1, 0, 0, 1};
    auto loss_fn = [&]() {
        return mean_all(square(tokenize_scale(fmap, mask, 2, 2, 2, tok.t2)));
    };
    CHECK(testsupport::max_rel_grad_err({fmap, tok.t2}, loss_fn) < 1e-3);
}

TEST_CASE("reconstruction gradients flow through tokens and head for both placements") {
    SeededStream rng(64);
    ParamStore ps;
    MimTokens tok = make_mim_tokens(ps, "mim", 3, 3, 2, rng);
    MimHead head = make_mim_head(ps, "mim", 2, rng);
    Grid target_a(16, 16, 0.4), target_b(16, 16, 0.6);
    // 16x16 targets -> 2x2 coarse grid; one window per coarse cell.
    std::vector<int> cells = {0, 1, 2, 3};
    std::vector<uint8_t> sel_a = {1, 0, 0, 1}, sel_b = {0, 1, 1, 0};
    Tensor fa5 = testsupport::random_tensor({4, 25, 2}, rng, 0.5, true);
    Tensor fb5 = testsupport::random_tensor({4, 25, 2}, rng, 0.5, true);

    for (MimPlacement placement : {MimPlacement::kResample, MimPlacement::kOverlap}) {
        auto loss_fn = [&]() {
            auto [pa, pb] = project_patches(head, add(fa5, tok.t2), add(fb5, tok.t2));
            return mim_loss(pa, pb, cells, sel_a, sel_b, target_a, target_b, 2, 2, placement);
        };
        std::vector<Tensor> params = ps.all();
        params.push_back(fa5);
        params.push_back(fb5);
        CHECK(testsupport::max_rel_grad_err(params, loss_fn) < 1e-3);
    }
}
