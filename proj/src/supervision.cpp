#include "xoftr/supervision.hpp"

#include "xoftr/subpixel.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace xoftr {

namespace {

// Coarse-cell validity: every pixel of the cell's 8x8 footprint is unpadded.
// An empty mask means the whole image is valid.
std::vector<double> coarse_cell_validity(const Grid& mask, int rows8, int cols8) {
    std::vector<double> valid(size_t(rows8) * cols8, 1.0);
    if (mask.empty()) return valid;
    for (int r = 0; r < rows8; ++r)
        for (int c = 0; c < cols8; ++c) {
            double mn = 1.0;
            for (int dr = 0; dr < 8; ++dr)
                for (int dc = 0; dc < 8; ++dc) mn = std::min(mn, mask.at(8 * r + dr, 8 * c + dc));
            valid[size_t(r) * cols8 + c] = mn > 0.0 ? 1.0 : 0.0;
        }
    return valid;
}

Tensor as_tensor3x3(const Mat3& m) {
    Tensor t = Tensor::zeros({3, 3});
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) t.data()[r * 3 + c] = m(r, c);
    return t;
}

// Focal term gathered at the given flat positive indices, averaged.
Tensor focal_positive_mean(const Tensor& p_flat_rows, const std::vector<int>& flat,
                           const LossWeights& w) {
    Tensor ps = index_rows(p_flat_rows, flat);  // [P, 1]
    Tensor one_minus = add_scalar(neg(ps), 1.0);
    Tensor term = mul(pow_scalar(one_minus, w.focal_gamma), neg(log_t(ps)));
    return mul_scalar(mean_all(term), w.focal_alpha);
}

}  // namespace

bool CoarseGT::contains(int i, int j) const {
    return std::binary_search(positives.begin(), positives.end(), std::make_pair(i, j));
}

bool project_with_depth(double u, double v, const Mat3& k_a, const Mat4& pose_a,
                        const Grid& depth_a, const Mat3& k_b, const Mat4& pose_b,
                        const Grid& depth_b, Vec2* out) {
    const int r = int(std::lround(v)), c = int(std::lround(u));
    if (r < 0 || r >= depth_a.rows || c < 0 || c >= depth_a.cols) return false;
    const double d = depth_a.at(r, c);
    if (d <= 0.0) return false;
    const Vec3 x_cam_a = d * (k_a.inverse() * Vec3(u, v, 1.0));
    const Mat4 rel = pose_b * pose_a.inverse();  // camera A -> camera B
    const Vec3 x_cam_b = rel.block<3, 3>(0, 0) * x_cam_a + rel.block<3, 1>(0, 3);
    if (x_cam_b.z() <= 1e-9) return false;
    const Vec3 px = k_b * x_cam_b;
    const double ub = px.x() / px.z(), vb = px.y() / px.z();
    const int rb = int(std::lround(vb)), cb = int(std::lround(ub));
    if (rb < 0 || rb >= depth_b.rows || cb < 0 || cb >= depth_b.cols) return false;
    const double db = depth_b.at(rb, cb);
    if (db <= 0.0) return false;
    if (std::abs(x_cam_b.z() - db) / db >= 0.05) return false;  // occluded
    *out = Vec2(ub, vb);
    return true;
}

CoarseGT build_coarse_gt(const ImagePair& pair) {
    if (!pair.has_geometry)
        throw ValidationError("coarse ground truth requires depth maps and camera poses");
    CoarseGT gt;
    gt.rows_a = pair.image_a.rows / 8;
    gt.cols_a = pair.image_a.cols / 8;
    gt.rows_b = pair.image_b.rows / 8;
    gt.cols_b = pair.image_b.cols / 8;
    const std::vector<double> valid_a = coarse_cell_validity(pair.mask_a, gt.rows_a, gt.cols_a);
    const std::vector<double> valid_b = coarse_cell_validity(pair.mask_b, gt.rows_b, gt.cols_b);
    std::set<std::pair<int, int>> pos;

    auto sweep = [&](bool a_to_b) {
        const Mat3& ks = a_to_b ? pair.k_a : pair.k_b;
        const Mat3& kt = a_to_b ? pair.k_b : pair.k_a;
        const Mat4& ps = a_to_b ? pair.pose_a : pair.pose_b;
        const Mat4& pt = a_to_b ? pair.pose_b : pair.pose_a;
        const Grid& ds = a_to_b ? pair.depth_a : pair.depth_b;
        const Grid& dt = a_to_b ? pair.depth_b : pair.depth_a;
        const int rows_s = a_to_b ? gt.rows_a : gt.rows_b;
        const int cols_s = a_to_b ? gt.cols_a : gt.cols_b;
        const int rows_t = a_to_b ? gt.rows_b : gt.rows_a;
        const int cols_t = a_to_b ? gt.cols_b : gt.cols_a;
        const auto& vs = a_to_b ? valid_a : valid_b;
        const auto& vt = a_to_b ? valid_b : valid_a;
        for (int r = 0; r < rows_s; ++r)
            for (int c = 0; c < cols_s; ++c) {
                if (vs[size_t(r) * cols_s + c] <= 0.0) continue;
                Vec2 p;
                if (!project_with_depth(8.0 * c + 3.5, 8.0 * r + 3.5, ks, ps, ds, kt, pt, dt, &p))
                    continue;
                const int ct = int(std::floor(p.x() / 8.0));
                const int rt = int(std::floor(p.y() / 8.0));
                if (rt < 0 || rt >= rows_t || ct < 0 || ct >= cols_t) continue;
                if (vt[size_t(rt) * cols_t + ct] <= 0.0) continue;
                const int src = r * cols_s + c, dst = rt * cols_t + ct;
                pos.emplace(a_to_b ? src : dst, a_to_b ? dst : src);
            }
    };
    sweep(true);
    sweep(false);
    gt.positives.assign(pos.begin(), pos.end());
    return gt;
}

std::vector<FineGTEntry> build_fine_gt(const ImagePair& pair, const CoarseMatchSet& matches) {
    if (!pair.has_geometry)
        throw ValidationError("fine ground truth requires depth maps and camera poses");
    std::vector<FineGTEntry> out(matches.matches.size());
    for (size_t m = 0; m < matches.matches.size(); ++m) {
        const CoarseMatch& cm = matches.matches[m];
        const int ra = cm.i / matches.cols_a, ca = cm.i % matches.cols_a;
        const int rb = cm.j / matches.cols_b, cb = cm.j % matches.cols_b;
        const int rfa = fine_window_center(ra), cfa = fine_window_center(ca);
        const int rfb = fine_window_center(rb), cfb = fine_window_center(cb);
        Vec2 fwd;
        if (!project_with_depth(fine_cell_center_px(cfa), fine_cell_center_px(rfa), pair.k_a,
                                pair.pose_a, pair.depth_a, pair.k_b, pair.pose_b, pair.depth_b,
                                &fwd))
            continue;
        const int cn = int(std::lround((fwd.x() - 0.5) / 2.0));
        const int rn = int(std::lround((fwd.y() - 0.5) / 2.0));
        if (std::abs(cn - cfb) > 2 || std::abs(rn - rfb) > 2) continue;
        Vec2 back;
        if (!project_with_depth(fine_cell_center_px(cn), fine_cell_center_px(rn), pair.k_b,
                                pair.pose_b, pair.depth_b, pair.k_a, pair.pose_a, pair.depth_a,
                                &back))
            continue;
        if (int(std::lround((back.x() - 0.5) / 2.0)) != cfa ||
            int(std::lround((back.y() - 0.5) / 2.0)) != rfa)
            continue;  // not mutual
        out[m].has_positive = true;
        out[m].ia = 12;  // the window's centre cell
        out[m].jb = (rn - rfb + 2) * 5 + (cn - cfb + 2);
    }
    return out;
}

Mat3 essential_from_poses(const Mat4& pose_a, const Mat4& pose_b) {
    const Mat4 rel = pose_a * pose_b.inverse();  // camera B -> camera A
    const Mat3 r = rel.block<3, 3>(0, 0);
    const Vec3 t = rel.block<3, 1>(0, 3);
    if (t.norm() < 1e-9)
        throw ValidationError("degenerate geometry: zero baseline between the two views");
    Mat3 tx;
    tx << 0, -t.z(), t.y(), t.z(), 0, -t.x(), -t.y(), t.x(), 0;
    Mat3 e = tx * r;
    e *= std::sqrt(2.0) / e.norm();
    return e;
}

Tensor coarse_loss(const Tensor& p0, const Tensor& p1, const CoarseGT& gt,
                   const LossWeights& weights, bool* warned) {
    if (warned) *warned = false;
    if (gt.positives.empty()) {
        if (warned) *warned = true;
        return Tensor::scalar(0.0);
    }
    if (p0.shape() != Shape{gt.n_a(), gt.n_b()} || p1.shape() != Shape{gt.n_a(), gt.n_b()})
        throw ValidationError("probability matrices do not match the ground-truth dimensions");
    std::vector<int> flat;
    flat.reserve(gt.positives.size());
    for (const auto& ij : gt.positives) flat.push_back(ij.first * gt.n_b() + ij.second);
    const int64_t n = int64_t(gt.n_a()) * gt.n_b();
    Tensor l0 = focal_positive_mean(reshape(p0, {int(n), 1}), flat, weights);
    Tensor l1 = focal_positive_mean(reshape(p1, {int(n), 1}), flat, weights);
    return add(l0, l1);
}

Tensor fine_loss(const Tensor& p_f, const std::vector<FineGTEntry>& gt, const LossWeights& weights,
                 bool* warned) {
    if (warned) *warned = false;
    std::vector<int> flat;
    for (size_t m = 0; m < gt.size(); ++m)
        if (gt[m].has_positive) flat.push_back(int(m) * 625 + gt[m].ia * 25 + gt[m].jb);
    if (flat.empty()) {
        if (warned) *warned = true;
        return Tensor::scalar(0.0);
    }
    const int n = p_f.shape()[0];
    if (int(gt.size()) != n)
        throw ValidationError("fine ground truth does not match the window batch");
    return focal_positive_mean(reshape(p_f, {n * 625, 1}), flat, weights);
}

Tensor subpixel_loss(const Tensor& pa, const Tensor& pb, const Mat3& e, const Mat3& k_a,
                     const Mat3& k_b, bool* warned) {
    if (warned) *warned = false;
    if (!pa.defined() || pa.shape()[0] == 0) {
        if (warned) *warned = true;
        return Tensor::scalar(0.0);
    }
    const int n = pa.shape()[0];
    const double eps = 1e-12;
    Tensor ones = Tensor::full({n, 1}, 1.0);
    Tensor ha = concat({pa, ones}, 1);  // [n,3] homogeneous pixels
    Tensor hb = concat({pb, ones}, 1);
    Tensor xa_hat = matmul(ha, as_tensor3x3(k_a.inverse().transpose()));
    Tensor xb_hat = matmul(hb, as_tensor3x3(k_b.inverse().transpose()));
    Tensor ea = matmul(xa_hat, as_tensor3x3(e));              // rows = x̂_A^T E
    Tensor eb = matmul(xb_hat, as_tensor3x3(e.transpose()));  // rows = (E x̂_B)^T
    Tensor num = square(sum_axis(mul(ea, xb_hat), 1, /*keepdim=*/true));  // [n,1]
    Tensor la = sum_axis(square(slice(ea, 1, 0, 2)), 1, true);
    Tensor lb = sum_axis(square(slice(eb, 1, 0, 2)), 1, true);
    Tensor one = Tensor::full({1, 1}, 1.0);
    Tensor inv = add(div(one, add_scalar(la, eps)), div(one, add_scalar(lb, eps)));
    return mean_all(mul(num, inv));
}

Tensor total_loss(const Tensor& l_c, const Tensor& l_f, const Tensor& l_sub,
                  const LossWeights& weights) {
    if (!std::isfinite(l_c.item()))
        throw Error("training aborted: coarse matching loss is not finite");
    if (!std::isfinite(l_f.item()))
        throw Error("training aborted: fine matching loss is not finite");
    if (!std::isfinite(l_sub.item()))
        throw Error("training aborted: sub-pixel refinement loss is not finite");
    return add(add(mul_scalar(l_c, weights.lambda_c), mul_scalar(l_f, weights.lambda_f)),
               mul_scalar(l_sub, weights.lambda_sub));
}

}  // namespace xoftr
