#include "xoftr/evalkit.hpp"

#include "xoftr/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace xoftr {

namespace {

Vec3 normalized_ray(const Mat3& k_inv, double x, double y) {
    Vec3 r = k_inv * Vec3(x, y, 1.0);
    return r / r.z();
}

// Least-squares depths for one correspondence under x_camA = R x_camB + t;
// both must be positive for the point to lie in front of both cameras.
bool in_front(const Mat3& r, const Vec3& t, const Vec3& ray_a, const Vec3& ray_b) {
    Eigen::Matrix<double, 3, 2> m;
    m.col(0) = ray_a;
    m.col(1) = -(r * ray_b);
    Eigen::Vector2d depths = m.colPivHouseholderQr().solve(t);
    return depths[0] > 0.0 && depths[1] > 0.0;
}

// Decompose an essential matrix and pick the (R, t) candidate that places the
// most correspondences in front of both cameras.
RelativePose recover_pose(const Mat3& e, const std::vector<Vec3>& rays_a,
                          const std::vector<Vec3>& rays_b) {
    Eigen::JacobiSVD<Mat3> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 u = svd.matrixU();
    Mat3 v = svd.matrixV();
    if (u.determinant() < 0) u = -u;
    if (v.determinant() < 0) v = -v;
    Mat3 w;
    w << 0, -1, 0, 1, 0, 0, 0, 0, 1;
    const Mat3 r1 = u * w * v.transpose();
    const Mat3 r2 = u * w.transpose() * v.transpose();
    const Vec3 t = u.col(2);

    RelativePose best;
    int best_count = -1;
    for (const Mat3& r : {r1, r2})
        for (const Vec3& tt : {Vec3(t), Vec3(-t)}) {
            int count = 0;
            for (size_t i = 0; i < rays_a.size(); ++i)
                if (in_front(r, tt, rays_a[i], rays_b[i])) ++count;
            if (count > best_count) {
                best_count = count;
                best.rotation = r;
                best.translation = tt;
            }
        }
    best.ok = best_count > 0;
    return best;
}

// Hartley normalization: translate to the centroid, scale mean length to sqrt(2).
Mat3 normalizing_transform(const std::vector<Vec2>& pts) {
    Vec2 mean = Vec2::Zero();
    for (const Vec2& p : pts) mean += p;
    mean /= double(pts.size());
    double dist = 0.0;
    for (const Vec2& p : pts) dist += (p - mean).norm();
    dist /= double(pts.size());
    const double s = dist > 1e-12 ? std::sqrt(2.0) / dist : 1.0;
    Mat3 t;
    t << s, 0, -s * mean.x(), 0, s, -s * mean.y(), 0, 0, 1;
    return t;
}

// Direct linear transform homography from at least four correspondences.
bool dlt_homography(const std::vector<Vec2>& from, const std::vector<Vec2>& to, Mat3* h_out) {
    const int n = int(from.size());
    if (n < 4) return false;
    const Mat3 tf = normalizing_transform(from);
    const Mat3 tt = normalizing_transform(to);
    Eigen::MatrixXd a(2 * n, 9);
    for (int i = 0; i < n; ++i) {
        const Vec3 p = tf * Vec3(from[i].x(), from[i].y(), 1.0);
        const Vec3 q = tt * Vec3(to[i].x(), to[i].y(), 1.0);
        a.row(2 * i) << 0, 0, 0, -p.x(), -p.y(), -1, q.y() * p.x(), q.y() * p.y(), q.y();
        a.row(2 * i + 1) << p.x(), p.y(), 1, 0, 0, 0, -q.x() * p.x(), -q.x() * p.y(), -q.x();
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    Eigen::Matrix<double, 9, 1> h = svd.matrixV().col(8);
    Mat3 hn;
    hn << h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8];
    Mat3 result = tt.inverse() * hn * tf;
    if (!result.allFinite() || std::abs(result.determinant()) < 1e-12) return false;
    *h_out = result / result.norm();
    return true;
}

double reprojection_sq(const Mat3& h, const Vec2& from, const Vec2& to) {
    Vec3 q = h * Vec3(from.x(), from.y(), 1.0);
    if (std::abs(q.z()) < 1e-12) return std::numeric_limits<double>::infinity();
    return (Vec2(q.x() / q.z(), q.y() / q.z()) - to).squaredNorm();
}

// Draw k distinct indices in [0, n).
std::vector<int> sample_distinct(SeededStream& rng, int k, int n) {
    std::vector<int> out;
    out.reserve(k);
    while (int(out.size()) < k) {
        int candidate = rng.uniform_int(n);
        if (std::find(out.begin(), out.end(), candidate) == out.end())
            out.push_back(candidate);
    }
    return out;
}

// Iterations needed for the requested confidence given the inlier ratio.
int ransac_iterations_needed(double inlier_ratio, int sample_size, double confidence) {
    if (inlier_ratio <= 0.0) return std::numeric_limits<int>::max();
    const double p_good = std::pow(inlier_ratio, sample_size);
    if (p_good >= 1.0) return 1;
    const double denom = std::log1p(-p_good);
    if (denom >= 0.0) return 1;
    return int(std::ceil(std::log1p(-confidence) / denom));
}

}  // namespace

double sampson_error(const Mat3& e, const Vec3& ray_a, const Vec3& ray_b) {
    const Vec3 eb = e * ray_b;
    const Vec3 eta = e.transpose() * ray_a;
    double num = ray_a.dot(eb);
    num *= num;
    const double den = eb.x() * eb.x() + eb.y() * eb.y() + eta.x() * eta.x() + eta.y() * eta.y();
    if (den < 1e-300) return num > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    return num / den;
}

RelativePose estimate_relative_pose(const SubpixelMatches& matches, const Mat3& k_a,
                                    const Mat3& k_b, double threshold_px, uint64_t seed) {
    RelativePose fail;
    const int n = int(matches.matches.size());
    if (n < 5) return fail;
    if (threshold_px <= 0.0) throw ValidationError("inlier threshold must be positive");

    const Mat3 ka_inv = k_a.inverse();
    const Mat3 kb_inv = k_b.inverse();
    std::vector<Vec3> rays_a(n), rays_b(n);
    for (int i = 0; i < n; ++i) {
        rays_a[i] = normalized_ray(ka_inv, matches.matches[i].xa, matches.matches[i].ya);
        rays_b[i] = normalized_ray(kb_inv, matches.matches[i].xb, matches.matches[i].yb);
    }
    const double mean_focal = (k_a(0, 0) + k_a(1, 1) + k_b(0, 0) + k_b(1, 1)) / 4.0;
    const double thr_sq = (threshold_px / mean_focal) * (threshold_px / mean_focal);

    SeededStream rng(seed);
    const int max_iterations = 2000;
    const double confidence = 0.9999;
    Mat3 best_e = Mat3::Zero();
    int best_inliers = 0;
    int max_inliers = 0;
    // Truncated-residual (MSAC) score: a model must not only cover inliers but
    // fit them tightly, so a perfect model beats a sloppy one that grazes an
    // extra outlier.
    double best_score = std::numeric_limits<double>::infinity();
    int needed = max_iterations;
    for (int it = 0; it < max_iterations && it < needed; ++it) {
        const std::vector<int> idx = sample_distinct(rng, 5, n);
        std::vector<Vec3> sa(5), sb(5);
        for (int i = 0; i < 5; ++i) {
            sa[i] = rays_a[idx[i]];
            sb[i] = rays_b[idx[i]];
        }
        std::vector<Mat3> candidates;
        try {
            candidates = five_point_essential(sa, sb);
        } catch (const Error&) {
            continue;
        }
        for (const Mat3& e : candidates) {
            int inliers = 0;
            double score = 0.0;
            for (int i = 0; i < n; ++i) {
                const double s = sampson_error(e, rays_a[i], rays_b[i]);
                if (s < thr_sq) ++inliers;
                score += std::min(s, thr_sq);
            }
            if (score < best_score) {
                best_score = score;
                best_e = e;
                best_inliers = inliers;
            }
            if (inliers > max_inliers) {
                max_inliers = inliers;
                needed = ransac_iterations_needed(double(inliers) / n, 5, confidence);
            }
        }
    }
    if (best_inliers < 5) return fail;

    std::vector<Vec3> in_a, in_b;
    for (int i = 0; i < n; ++i)
        if (sampson_error(best_e, rays_a[i], rays_b[i]) < thr_sq) {
            in_a.push_back(rays_a[i]);
            in_b.push_back(rays_b[i]);
        }
    RelativePose pose = recover_pose(best_e, in_a, in_b);
    pose.inliers = best_inliers;
    return pose;
}

PoseErrorRecord pose_angular_error(const Mat3& r_est, const Vec3& t_est, const Mat3& r_ref,
                                   const Vec3& t_ref) {
    for (const Mat3& r : {r_est, r_ref}) {
        if ((r.transpose() * r - Mat3::Identity()).norm() > 1e-6 ||
            std::abs(r.determinant() - 1.0) > 1e-6)
            throw ValidationError("rotation matrix is not orthonormal");
    }
    PoseErrorRecord rec;
    const double cos_r = std::clamp(((r_est * r_ref.transpose()).trace() - 1.0) / 2.0, -1.0, 1.0);
    rec.rotation_error_deg = rad2deg(std::acos(cos_r));
    const double na = t_est.norm(), nb = t_ref.norm();
    if (na < 1e-12 || nb < 1e-12) {
        rec.translation_error_deg = 0.0;  // no measurable baseline direction
    } else {
        const double cos_t = std::clamp(std::abs(t_est.dot(t_ref)) / (na * nb), 0.0, 1.0);
        rec.translation_error_deg = rad2deg(std::acos(cos_t));
    }
    rec.pose_error_deg = std::max(rec.rotation_error_deg, rec.translation_error_deg);
    return rec;
}

std::vector<double> auc_curve(const std::vector<double>& errors,
                              const std::vector<double>& thresholds) {
    if (errors.empty()) throw ValidationError("cannot integrate an empty error list");
    for (double e : errors)
        if (std::isnan(e) || e < 0.0)
            throw ValidationError("errors must be nonnegative (use +inf for failures)");
    std::vector<double> auc;
    auc.reserve(thresholds.size());
    for (double t : thresholds) {
        if (t <= 0.0) throw ValidationError("thresholds must be positive");
        // recall(e) is a step function; its exact integral over [0, T] is
        // sum_i max(0, T - e_i) / N.
        double area = 0.0;
        for (double e : errors)
            if (e < t) area += t - e;
        auc.push_back(100.0 * area / (double(errors.size()) * t));
    }
    return auc;
}

double corner_error(const Mat3& h_est, const Mat3& h_ref, int width, int height) {
    if (!h_est.allFinite() || std::abs(h_est.determinant()) < 1e-12)
        return std::numeric_limits<double>::infinity();
    const Vec2 corners[4] = {{0.0, 0.0},
                             {double(width - 1), 0.0},
                             {double(width - 1), double(height - 1)},
                             {0.0, double(height - 1)}};
    double total = 0.0;
    for (const Vec2& c : corners) {
        const Vec3 pe = h_est * Vec3(c.x(), c.y(), 1.0);
        const Vec3 pr = h_ref * Vec3(c.x(), c.y(), 1.0);
        if (std::abs(pe.z()) < 1e-12 || std::abs(pr.z()) < 1e-12)
            return std::numeric_limits<double>::infinity();
        total += (Vec2(pe.x() / pe.z(), pe.y() / pe.z()) -
                  Vec2(pr.x() / pr.z(), pr.y() / pr.z()))
                     .norm();
    }
    return total / 4.0;
}

Mat3 estimate_homography(const SubpixelMatches& matches, double threshold_px, uint64_t seed,
                         bool* ok) {
    if (ok) *ok = false;
    const int n = int(matches.matches.size());
    Mat3 best = Mat3::Identity();
    if (n < 4) return best;
    if (threshold_px <= 0.0) throw ValidationError("inlier threshold must be positive");

    std::vector<Vec2> from(n), to(n);
    for (int i = 0; i < n; ++i) {
        from[i] = Vec2(matches.matches[i].xa, matches.matches[i].ya);
        to[i] = Vec2(matches.matches[i].xb, matches.matches[i].yb);
    }
    const double thr_sq = threshold_px * threshold_px;

    SeededStream rng(seed);
    const int max_iterations = 2000;
    const double confidence = 0.9999;
    int best_inliers = 0;
    int needed = max_iterations;
    for (int it = 0; it < max_iterations && it < needed; ++it) {
        const std::vector<int> idx = sample_distinct(rng, 4, n);
        std::vector<Vec2> sf(4), st(4);
        for (int i = 0; i < 4; ++i) {
            sf[i] = from[idx[i]];
            st[i] = to[idx[i]];
        }
        Mat3 h;
        if (!dlt_homography(sf, st, &h)) continue;
        int inliers = 0;
        for (int i = 0; i < n; ++i)
            if (reprojection_sq(h, from[i], to[i]) < thr_sq) ++inliers;
        if (inliers > best_inliers) {
            best_inliers = inliers;
            best = h;
            needed = ransac_iterations_needed(double(inliers) / n, 4, confidence);
        }
    }
    if (best_inliers < 4) return Mat3::Identity();

    // Least-squares refit on the full inlier set.
    std::vector<Vec2> in_f, in_t;
    for (int i = 0; i < n; ++i)
        if (reprojection_sq(best, from[i], to[i]) < thr_sq) {
            in_f.push_back(from[i]);
            in_t.push_back(to[i]);
        }
    Mat3 refit;
    if (dlt_homography(in_f, in_t, &refit)) best = refit;
    if (ok) *ok = true;
    return best;
}

void write_pose_report(const std::string& path, const std::vector<PoseErrorRecord>& records,
                       const std::vector<double>& thresholds_deg) {
    std::vector<double> errors;
    errors.reserve(records.size());
    for (const auto& r : records) errors.push_back(r.pose_error_deg);
    const std::vector<double> auc = auc_curve(errors, thresholds_deg);

    FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw InputError("cannot write report file: " + path);
    std::fprintf(f, "# relative pose evaluation\n");
    std::fprintf(f, "# pair rot_deg trans_deg pose_deg inliers\n");
    for (const auto& r : records)
        std::fprintf(f, "%s %.4f %.4f %.4f %d\n", r.pair_id.c_str(), r.rotation_error_deg,
                     r.translation_error_deg, r.pose_error_deg, r.inlier_count);
    std::fprintf(f, "#\n# method");
    for (double t : thresholds_deg) std::fprintf(f, " auc@%gdeg", t);
    std::fprintf(f, "\nxoftr");
    for (double a : auc) std::fprintf(f, " %.2f", a);
    std::fprintf(f, "\n");
    std::fclose(f);
}

void write_homography_report(const std::string& path, const std::vector<std::string>& pair_ids,
                             const std::vector<double>& corner_errors_px,
                             const std::vector<double>& thresholds_px) {
    if (pair_ids.size() != corner_errors_px.size())
        throw ValidationError("pair id and error counts differ");
    const std::vector<double> auc = auc_curve(corner_errors_px, thresholds_px);

    FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw InputError("cannot write report file: " + path);
    std::fprintf(f, "# homography evaluation\n");
    std::fprintf(f, "# pair corner_error_px\n");
    for (size_t i = 0; i < pair_ids.size(); ++i) {
        if (std::isinf(corner_errors_px[i]))
            std::fprintf(f, "%s inf\n", pair_ids[i].c_str());
        else
            std::fprintf(f, "%s %.4f\n", pair_ids[i].c_str(), corner_errors_px[i]);
    }
    std::fprintf(f, "#\n# method");
    for (double t : thresholds_px) std::fprintf(f, " auc@%gpx", t);
    std::fprintf(f, "\nxoftr");
    for (double a : auc) std::fprintf(f, " %.2f", a);
    std::fprintf(f, "\n");
    std::fclose(f);
}

}  // namespace xoftr
