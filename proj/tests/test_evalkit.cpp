#include <doctest.h>

#include "support.hpp"
#include "xoftr/evalkit.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <cstdio>

using namespace xoftr;

namespace {

Mat3 random_rotation(SeededStream& rng, double max_angle_rad) {
    Vec3 axis(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    while (axis.norm() < 1e-6)
        axis = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    return Eigen::AngleAxisd(rng.uniform(-max_angle_rad, max_angle_rad), axis.normalized())
        .toRotationMatrix();
}

struct Scene {
    Mat3 rotation;   // camera-B -> camera-A
    Vec3 translation;
    Mat3 k;
    SubpixelMatches matches;
};

// Synthetic two-view scene with exact projections; x_camA = R x_camB + t.
Scene make_scene(SeededStream& rng, int n_points, int n_outliers = 0) {
    Scene s;
    s.rotation = random_rotation(rng, 0.3);
    s.translation = Vec3(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.2, 0.2));
    while (s.translation.norm() < 0.1) s.translation.x() += 0.3;
    s.k << 320, 0, 160, 0, 320, 120, 0, 0, 1;
    int placed = 0;
    while (placed < n_points) {
        // Points in front of camera B; transform into A and keep those in front.
        Vec3 xb(rng.uniform(-3, 3), rng.uniform(-2, 2), rng.uniform(4, 10));
        Vec3 xa = s.rotation * xb + s.translation;
        if (xa.z() < 0.5) continue;
        Vec3 pa = s.k * (xa / xa.z());
        Vec3 pb = s.k * (xb / xb.z());
        RefinedMatch m;
        m.xa = pa.x();
        m.ya = pa.y();
        m.xb = pb.x();
        m.yb = pb.y();
        m.confidence = 1.0;
        m.parent = placed;
        s.matches.matches.push_back(m);
        ++placed;
    }
    for (int i = 0; i < n_outliers; ++i) {
        RefinedMatch m;
        m.xa = rng.uniform(0, 320);
        m.ya = rng.uniform(0, 240);
        m.xb = rng.uniform(0, 320);
        m.yb = rng.uniform(0, 240);
        m.confidence = 0.5;
        m.parent = n_points + i;
        s.matches.matches.push_back(m);
    }
    return s;
}

}  // namespace

TEST_CASE("minimal five-point solver recovers the essential matrix on exact data") {
    SeededStream rng(71);
    int recovered = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Mat3 r = random_rotation(rng, 0.4);
        Vec3 t(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-0.4, 0.4));
        while (t.norm() < 0.2) t.x() += 0.5;
        Mat3 tx;
        tx << 0, -t.z(), t.y(), t.z(), 0, -t.x(), -t.y(), t.x(), 0;
        Mat3 e_ref = tx * r;
        e_ref *= std::sqrt(2.0) / e_ref.norm();

        std::vector<Vec3> rays_a, rays_b;
        for (int i = 0; i < 5; ++i) {
            Vec3 xb(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(3, 9));
            Vec3 xa = r * xb + t;
            if (xa.z() < 0.3) {
                --i;
                continue;
            }
            rays_a.push_back(xa / xa.z());
            rays_b.push_back(xb / xb.z());
        }
        std::vector<Mat3> solutions = five_point_essential(rays_a, rays_b);
        double best = 1e9;
        for (const Mat3& e : solutions) {
            // Internal validity: rank-2 and trace constraint for every solution.
            CHECK(std::abs(e.determinant()) < 1e-6);
            Mat3 resid = e * e.transpose() * e - 0.5 * (e * e.transpose()).trace() * e;
            CHECK(resid.norm() < 1e-6);
            best = std::min({best, (e - e_ref).norm(), (e + e_ref).norm()});
        }
        if (best < 1e-6) ++recovered;
    }
    CHECK(recovered >= 99);

    CHECK_THROWS_AS(five_point_essential(std::vector<Vec3>(4), std::vector<Vec3>(4)),
                    ValidationError);
}

TEST_CASE("sampson error vanishes on exact correspondences and grows off the epipolar line") {
    SeededStream rng(72);
    Scene s = make_scene(rng, 10);
    Mat3 tx;
    tx << 0, -s.translation.z(), s.translation.y(), s.translation.z(), 0, -s.translation.x(),
        -s.translation.y(), s.translation.x(), 0;
    Mat3 e = tx * s.rotation;
    Mat3 k_inv = s.k.inverse();
    for (const auto& m : s.matches.matches) {
        Vec3 a = k_inv * Vec3(m.xa, m.ya, 1.0);
        Vec3 b = k_inv * Vec3(m.xb, m.yb, 1.0);
        CHECK(sampson_error(e, a / a.z(), b / b.z()) < 1e-18);
        Vec3 a_off = a / a.z() + Vec3(0.01, 0.01, 0);
        CHECK(sampson_error(e, a_off, b / b.z()) > 1e-8);
    }
}

TEST_CASE("relative pose is recovered within a tenth of a degree from exact matches") {
    SeededStream rng(73);
    Scene s = make_scene(rng, 50);
    RelativePose pose = estimate_relative_pose(s.matches, s.k, s.k, 1.5, 7);
    REQUIRE(pose.ok);
    CHECK(pose.inliers >= 48);
    PoseErrorRecord err =
        pose_angular_error(pose.rotation, pose.translation, s.rotation, s.translation);
    CHECK(err.pose_error_deg < 0.1);

    // Determinism: same seed, same matches, identical result.
    RelativePose again = estimate_relative_pose(s.matches, s.k, s.k, 1.5, 7);
    CHECK(pose.rotation == again.rotation);
    CHECK(pose.translation == again.translation);
    CHECK(pose.inliers == again.inliers);

    // Fewer than five matches cannot be estimated.
    SubpixelMatches four;
    four.matches.assign(s.matches.matches.begin(), s.matches.matches.begin() + 4);
    CHECK_FALSE(estimate_relative_pose(four, s.k, s.k, 1.5, 7).ok);
}

TEST_CASE("pose estimation survives outliers and image rescaling") {
    SeededStream rng(74);
    Scene s = make_scene(rng, 50, 15);
    RelativePose pose = estimate_relative_pose(s.matches, s.k, s.k, 1.5, 11);
    REQUIRE(pose.ok);
    PoseErrorRecord err =
        pose_angular_error(pose.rotation, pose.translation, s.rotation, s.translation);
    CHECK(err.pose_error_deg < 0.1);

    // Uniform 2x rescale of pixels and intrinsics leaves the estimate unchanged.
    Scene scaled = s;
    for (auto& m : scaled.matches.matches) {
        m.xa *= 2.0;
        m.ya *= 2.0;
        m.xb *= 2.0;
        m.yb *= 2.0;
    }
    scaled.k.row(0) *= 2.0;
    scaled.k.row(1) *= 2.0;
    RelativePose pose2 = estimate_relative_pose(scaled.matches, scaled.k, scaled.k, 1.5, 11);
    REQUIRE(pose2.ok);
    PoseErrorRecord err2 =
        pose_angular_error(pose2.rotation, pose2.translation, s.rotation, s.translation);
    CHECK(std::abs(err2.pose_error_deg - err.pose_error_deg) < 0.01);
}

TEST_CASE("angular pose error follows axis-angle arithmetic") {
    SeededStream rng(75);
    Mat3 r = random_rotation(rng, 0.5);
    Vec3 t(0.3, -0.2, 0.1);
    PoseErrorRecord zero = pose_angular_error(r, t, r, t);
    CHECK(zero.rotation_error_deg == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(zero.translation_error_deg == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(zero.pose_error_deg == doctest::Approx(0.0).epsilon(1e-9));

    // A 10 degree rotation offset about z.
    Mat3 rz = Eigen::AngleAxisd(deg2rad(10.0), Vec3::UnitZ()).toRotationMatrix();
    PoseErrorRecord ten = pose_angular_error(rz * r, t, r, t);
    CHECK(ten.rotation_error_deg == doctest::Approx(10.0).epsilon(1e-9));
    CHECK(ten.translation_error_deg == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(ten.pose_error_deg == doctest::Approx(10.0).epsilon(1e-9));

    // Translation direction is sign-invariant; orthogonal directions are 90 deg.
    PoseErrorRecord flip = pose_angular_error(r, -t, r, t);
    CHECK(flip.translation_error_deg == doctest::Approx(0.0).epsilon(1e-9));
    PoseErrorRecord ortho = pose_angular_error(r, Vec3(0, 0, 1), r, Vec3(1, 0, 0));
    CHECK(ortho.translation_error_deg == doctest::Approx(90.0).epsilon(1e-9));

    Mat3 bad = r;
    bad(0, 0) += 0.01;
    CHECK_THROWS_AS(pose_angular_error(bad, t, r, t), ValidationError);
}

TEST_CASE("auc step integration matches the closed form and a Riemann oracle") {
    CHECK(auc_curve({2.0}, {10.0})[0] == 80.0);  // (10-2)/10, exactly

    std::vector<double> zeros(7, 0.0);
    for (double a : auc_curve(zeros, {5, 10, 20})) CHECK(a == 100.0);

    std::vector<double> big = {25.0, 30.0, std::numeric_limits<double>::infinity()};
    for (double a : auc_curve(big, {5, 10, 20})) CHECK(a == 0.0);

    CHECK_THROWS_AS(auc_curve({}, {5.0}), ValidationError);
    CHECK_THROWS_AS(auc_curve({-1.0}, {5.0}), ValidationError);
    CHECK_THROWS_AS(auc_curve({1.0}, {0.0}), ValidationError);

    SeededStream rng(76);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 1 + rng.uniform_int(40);
        std::vector<double> errors(n);
        for (double& e : errors) e = rng.uniform(0.0, 30.0);
        if (trial % 3 == 0) errors[0] = std::numeric_limits<double>::infinity();
        const double t = rng.uniform(1.0, 25.0);
        const double exact = auc_curve(errors, {t})[0];

        std::vector<double> sorted = errors;
        std::sort(sorted.begin(), sorted.end());
        const int samples = 100000;
        double riemann = 0.0;
        for (int si = 0; si < samples; ++si) {
            const double x = (si + 0.5) * t / samples;
            riemann += double(std::upper_bound(sorted.begin(), sorted.end(), x) -
                              sorted.begin());
        }
        riemann = 100.0 * riemann / (double(samples) * n);
        CHECK(std::abs(exact - riemann) < 0.05);

        // Appending an error beyond T never raises AUC@T; dropping the largest
        // error never lowers it.
        std::vector<double> appended = errors;
        appended.push_back(t + 1.0);
        CHECK(auc_curve(appended, {t})[0] <= exact + 1e-12);
        if (n > 1) {
            std::vector<double> dropped(sorted.begin(), sorted.end() - 1);
            CHECK(auc_curve(dropped, {t})[0] >= exact - 1e-12);
        }
    }
}

TEST_CASE("corner error measures mean corner displacement") {
    Mat3 h = Mat3::Identity();
    h(0, 1) = 0.1;
    h(2, 0) = 1e-4;
    CHECK(corner_error(h, h, 640, 480) == 0.0);

    Mat3 shifted = h;
    shifted.row(0) += 3.0 * h.row(2);  // compose with translation (3, 4)
    shifted.row(1) += 4.0 * h.row(2);
    CHECK(corner_error(shifted, h, 640, 480) == doctest::Approx(5.0).epsilon(1e-9));

    Mat3 singular = Mat3::Zero();
    singular(0, 0) = 1.0;
    CHECK(std::isinf(corner_error(singular, h, 640, 480)));
}

TEST_CASE("homography RANSAC recovers a known warp among outliers") {
    SeededStream rng(77);
    Mat3 h;
    h << 1.05, 0.08, 12.0, -0.06, 0.97, -7.0, 1e-4, -8e-5, 1.0;
    SubpixelMatches matches;
    for (int i = 0; i < 40; ++i) {
        Vec2 p(rng.uniform(20, 300), rng.uniform(20, 220));
        Vec3 q = h * Vec3(p.x(), p.y(), 1.0);
        RefinedMatch m;
        m.xa = p.x();
        m.ya = p.y();
        m.xb = q.x() / q.z();
        m.yb = q.y() / q.z();
        m.confidence = 1.0;
        m.parent = i;
        matches.matches.push_back(m);
    }
    for (int i = 0; i < 10; ++i) {
        RefinedMatch m;
        m.xa = rng.uniform(0, 320);
        m.ya = rng.uniform(0, 240);
        m.xb = rng.uniform(0, 320);
        m.yb = rng.uniform(0, 240);
        m.confidence = 0.4;
        m.parent = 40 + i;
        matches.matches.push_back(m);
    }
    bool ok = false;
    Mat3 est = estimate_homography(matches, 3.0, 13, &ok);
    REQUIRE(ok);
    CHECK(corner_error(est, h, 320, 240) < 0.1);

    bool ok2 = false;
    Mat3 est2 = estimate_homography(matches, 3.0, 13, &ok2);
    CHECK(est == est2);  // determinism

    SubpixelMatches three;
    three.matches.assign(matches.matches.begin(), matches.matches.begin() + 3);
    bool ok3 = true;
    estimate_homography(three, 3.0, 13, &ok3);
    CHECK_FALSE(ok3);
}

TEST_CASE("evaluation reports carry per-pair lines and an AUC summary") {
    std::vector<PoseErrorRecord> records(3);
    records[0] = {1.0, 2.0, 2.0, 100, "pair_a"};
    records[1] = {8.0, 3.0, 8.0, 60, "pair_b"};
    records[2] = {90.0, 120.0, 120.0, 5, "pair_c"};
    const std::string path = "build_test_pose_report.txt";
    write_pose_report(path, records, {5, 10, 20});

    FILE* f = std::fopen(path.c_str(), "r");
    REQUIRE(f != nullptr);
    std::vector<std::string> lines;
    char buf[512];
    while (std::fgets(buf, sizeof buf, f)) lines.push_back(buf);
    std::fclose(f);
    REQUIRE(lines.size() == 8);
    CHECK(lines[2].rfind("pair_a ", 0) == 0);
    CHECK(lines[6] == "# method auc@5deg auc@10deg auc@20deg\n");
    double a5 = 0, a10 = 0, a20 = 0;
    REQUIRE(std::sscanf(lines[7].c_str(), "xoftr %lf %lf %lf", &a5, &a10, &a20) == 3);
    std::vector<double> expect = auc_curve({2.0, 8.0, 120.0}, {5, 10, 20});
    CHECK(a5 == doctest::Approx(expect[0]).epsilon(1e-2));
    CHECK(a10 == doctest::Approx(expect[1]).epsilon(1e-2));
    CHECK(a20 == doctest::Approx(expect[2]).epsilon(1e-2));
    std::remove(path.c_str());

    const std::string hpath = "build_test_homog_report.txt";
    write_homography_report(hpath, {"p0", "p1"},
                            {1.5, std::numeric_limits<double>::infinity()}, {3, 5, 10});
    f = std::fopen(hpath.c_str(), "r");
    REQUIRE(f != nullptr);
    lines.clear();
    while (std::fgets(buf, sizeof buf, f)) lines.push_back(buf);
    std::fclose(f);
    REQUIRE(lines.size() == 7);
    CHECK(lines[3] == "p1 inf\n");
    std::remove(hpath.c_str());
}
