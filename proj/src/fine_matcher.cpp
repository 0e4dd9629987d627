#include "xoftr/fine_matcher.hpp"

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace xoftr {

namespace {

// [N,T,C] -> [N*heads, T, C/heads]
Tensor batch_split_heads(const Tensor& x, int heads) {
    const auto& s = x.shape();
    const int n = s[0], t = s[1], c = s[2];
    const int dk = c / heads;
    Tensor y = reshape(x, {n, t, heads, dk});
    y = permute(y, {0, 2, 1, 3});  // [n, heads, t, dk]
    return reshape(y, {n * heads, t, dk});
}

// [N*heads, T, dk] -> [N, T, heads*dk]
Tensor batch_merge_heads(const Tensor& x, int n, int heads) {
    const auto& s = x.shape();
    const int t = s[1], dk = s[2];
    Tensor y = reshape(x, {n, heads, t, dk});
    y = permute(y, {0, 2, 1, 3});
    return reshape(y, {n, t, heads * dk});
}

// Key mask broadcastable against [N*heads, Tq, Tk] score tensors.
Tensor key_mask_tensor(const std::vector<std::vector<double>>& masks, int heads) {
    const int n = int(masks.size());
    const int t = n > 0 ? int(masks[0].size()) : 0;
    Tensor m = Tensor::zeros({n * heads, 1, t});
    double* d = m.data();
    for (int i = 0; i < n; ++i)
        for (int h = 0; h < heads; ++h)
            for (int j = 0; j < t; ++j) d[(int64_t(i) * heads + h) * t + j] = masks[i][j];
    return m;
}

std::vector<std::vector<double>> all_valid_mask(int n, int t) {
    return std::vector<std::vector<double>>(n, std::vector<double>(t, 1.0));
}

// Residual update shared by all attention blocks: LN(message), then an MLP on
// [x | message] whose final projection starts at zero, then LN, then add.
Tensor residual_merge(const Tensor& x, Tensor message, const LayerNorm& norm1, const Linear& mlp1,
                      const Linear& mlp2, const LayerNorm& norm2) {
    message = norm1(message);
    message = mlp2(elu(mlp1(concat({x, message}, int(x.rank()) - 1))));
    message = norm2(message);
    return add(x, message);
}

}  // namespace

// ---------------------------------------------------------------------------
// FeatureFuser

FeatureFuser::FeatureFuser(ParamStore& ps, const std::string& prefix, int c8, int c4,
                           SeededStream& rng) {
    pointwise_ = make_conv2d(ps, prefix + ".pw", 2 * c8, c4, 1, 1, 0, /*bias=*/true, rng);
    const double bound = 1.0 / std::sqrt(9.0);
    dw_w_ = ps.create(prefix + ".dw.w", {c4, 3, 3});
    for (auto& v : dw_w_.values()) v = rng.uniform(-bound, bound);
    dw_b_ = ps.create(prefix + ".dw.b", {c4});
}

Tensor FeatureFuser::operator()(const Tensor& f_hat, const Tensor& f_raw) const {
    if (f_hat.shape() != f_raw.shape())
        throw ValidationError("feature fusion requires maps of identical shape");
    Tensor x = concat({f_hat, f_raw}, 0);         // [2*C8, h, w]
    Tensor y = pointwise_(x);                     // [C4, h, w]
    return depthwise_conv2d(y, dw_w_, dw_b_, 1);  // 3x3, same padding
}

// ---------------------------------------------------------------------------
// Window cropping

namespace {

// Gather per-cell features from a [C,h,w] map as [N,1,C] rows.
Tensor gather_cells(const Tensor& fmap, const std::vector<std::pair<int, int>>& cells) {
    const auto& s = fmap.shape();
    const int c = s[0], h = s[1], w = s[2];
    Tensor rows = reshape(permute(fmap, {1, 2, 0}), {h * w, c});
    std::vector<int> idx;
    idx.reserve(cells.size());
    for (const auto& rc : cells) idx.push_back(rc.first * w + rc.second);
    return reshape(index_rows(rows, idx), {int(cells.size()), 1, c});
}

}  // namespace

WindowBundle crop_match_windows(const CoarseMatchSet& matches, const Tensor& fused_a,
                                const Tensor& fused_b, const Tensor& mid_a, const Tensor& mid_b,
                                const Tensor& fine_a, const Tensor& fine_b) {
    WindowBundle out;
    const int n = int(matches.matches.size());
    out.parent.resize(n);
    std::vector<std::pair<int, int>> cells_a(n), cells_b(n);
    std::vector<std::pair<int, int>> mid_ca(n), mid_cb(n);
    out.center_a5.resize(n);
    out.center_b5.resize(n);
    for (int m = 0; m < n; ++m) {
        out.parent[m] = m;
        const CoarseMatch& cm = matches.matches[m];
        const int ra = cm.i / matches.cols_a, ca = cm.i % matches.cols_a;
        const int rb = cm.j / matches.cols_b, cb = cm.j % matches.cols_b;
        cells_a[m] = {ra, ca};
        cells_b[m] = {rb, cb};
        mid_ca[m] = {mid_window_center(ra), mid_window_center(ca)};
        mid_cb[m] = {mid_window_center(rb), mid_window_center(cb)};
        out.center_a5[m] = {fine_window_center(ra), fine_window_center(ca)};
        out.center_b5[m] = {fine_window_center(rb), fine_window_center(cb)};
    }
    out.wa1 = gather_cells(fused_a, cells_a);
    out.wb1 = gather_cells(fused_b, cells_b);
    out.wa3 = crop_windows(mid_a, mid_ca, 3, &out.mask_a3);
    out.wb3 = crop_windows(mid_b, mid_cb, 3, &out.mask_b3);
    out.wa5 = crop_windows(fine_a, out.center_a5, 5, &out.mask_a5);
    out.wb5 = crop_windows(fine_b, out.center_b5, 5, &out.mask_b5);
    return out;
}

// ---------------------------------------------------------------------------
// SoftmaxSelfBlock

SoftmaxSelfBlock::SoftmaxSelfBlock(ParamStore& ps, const std::string& prefix, int dim, int heads,
                                   SeededStream& rng)
    : dim_(dim), heads_(heads) {
    if (dim % heads != 0) throw ValidationError("attention width must divide evenly into heads");
    q_ = make_linear(ps, prefix + ".q", dim, dim, /*bias=*/false, rng);
    k_ = make_linear(ps, prefix + ".k", dim, dim, /*bias=*/false, rng);
    v_ = make_linear(ps, prefix + ".v", dim, dim, /*bias=*/false, rng);
    merge_ = make_linear(ps, prefix + ".merge", dim, dim, /*bias=*/true, rng);
    mlp1_ = make_linear(ps, prefix + ".mlp1", 2 * dim, 2 * dim, /*bias=*/false, rng);
    mlp2_ = make_linear_zero(ps, prefix + ".mlp2", 2 * dim, dim, /*bias=*/false);
    norm1_ = make_layer_norm(ps, prefix + ".norm1", dim);
    norm2_ = make_layer_norm(ps, prefix + ".norm2", dim);
}

Tensor SoftmaxSelfBlock::operator()(const Tensor& x,
                                    const std::vector<std::vector<double>>& key_mask) const {
    const int n = x.shape()[0];
    const int t = x.shape()[1];
    Tensor q = batch_split_heads(q_(x), heads_);
    Tensor k = batch_split_heads(k_(x), heads_);
    Tensor v = batch_split_heads(v_(x), heads_);
    const double scale = 1.0 / std::sqrt(double(dim_ / heads_));
    Tensor scores = mul_scalar(matmul(q, permute(k, {0, 2, 1})), scale);  // [n*h, t, t]
    Tensor mask =
        key_mask.empty() ? key_mask_tensor(all_valid_mask(n, t), heads_) : key_mask_tensor(key_mask, heads_);
    Tensor attn = masked_softmax(scores, mask);
    Tensor message = batch_merge_heads(matmul(attn, v), n, heads_);
    message = merge_(message);
    return residual_merge(x, message, norm1_, mlp1_, mlp2_, norm2_);
}

// ---------------------------------------------------------------------------
// BidirCrossBlock

BidirCrossBlock::BidirCrossBlock(ParamStore& ps, const std::string& prefix, int dim, int heads,
                                 SeededStream& rng)
    : dim_(dim), heads_(heads) {
    if (dim % heads != 0) throw ValidationError("attention width must divide evenly into heads");
    qk_ = make_linear(ps, prefix + ".qk", dim, dim, /*bias=*/false, rng);
    v_ = make_linear(ps, prefix + ".v", dim, dim, /*bias=*/false, rng);
    merge_ = make_linear(ps, prefix + ".merge", dim, dim, /*bias=*/true, rng);
    mlp1_ = make_linear(ps, prefix + ".mlp1", 2 * dim, 2 * dim, /*bias=*/false, rng);
    mlp2_ = make_linear_zero(ps, prefix + ".mlp2", 2 * dim, dim, /*bias=*/false);
    norm1_ = make_layer_norm(ps, prefix + ".norm1", dim);
    norm2_ = make_layer_norm(ps, prefix + ".norm2", dim);
}

Tensor BidirCrossBlock::run_side(const Tensor& x, const Tensor& scores, const Tensor& values,
                                 const Tensor& key_mask) const {
    const int n = x.shape()[0];
    Tensor attn = masked_softmax(scores, key_mask);
    Tensor message = batch_merge_heads(matmul(attn, values), n, heads_);
    message = merge_(message);
    return residual_merge(x, message, norm1_, mlp1_, mlp2_, norm2_);
}

std::pair<Tensor, Tensor> BidirCrossBlock::operator()(
    const Tensor& a, const Tensor& b, const std::vector<std::vector<double>>& mask_a,
    const std::vector<std::vector<double>>& mask_b) const {
    const int n = a.shape()[0];
    Tensor ka = batch_split_heads(qk_(a), heads_);
    Tensor kb = batch_split_heads(qk_(b), heads_);
    Tensor va = batch_split_heads(v_(a), heads_);
    Tensor vb = batch_split_heads(v_(b), heads_);
    const double scale = 1.0 / std::sqrt(double(dim_ / heads_));
    // A single shared projection plays both the query and the key role, so
    // the two directions use transposed copies of the same similarity.
    Tensor s_ab = mul_scalar(matmul(ka, permute(kb, {0, 2, 1})), scale);
    Tensor s_ba = mul_scalar(matmul(kb, permute(ka, {0, 2, 1})), scale);
    const int ta = a.shape()[1], tb = b.shape()[1];
    Tensor mask_b_t = key_mask_tensor(mask_b.empty() ? all_valid_mask(n, tb) : mask_b, heads_);
    Tensor mask_a_t = key_mask_tensor(mask_a.empty() ? all_valid_mask(n, ta) : mask_a, heads_);
    Tensor out_a = run_side(a, s_ab, vb, mask_b_t);
    Tensor out_b = run_side(b, s_ba, va, mask_a_t);
    return {out_a, out_b};
}

// ---------------------------------------------------------------------------
// FineDecoder

FineDecoder::FineDecoder(ParamStore& ps, const std::string& prefix, int c4, int c2, int heads,
                         SeededStream& rng) {
    down1_ = make_linear(ps, prefix + ".down1", c4, c4, /*bias=*/true, rng);
    down2_ = make_linear(ps, prefix + ".down2", c4, c2, /*bias=*/true, rng);
    self1_ = SoftmaxSelfBlock(ps, prefix + ".self1", c4, heads, rng);
    cross1_ = BidirCrossBlock(ps, prefix + ".cross1", c4, heads, rng);
    self2_ = SoftmaxSelfBlock(ps, prefix + ".self2", c2, heads, rng);
    cross2_ = BidirCrossBlock(ps, prefix + ".cross2", c2, heads, rng);
    pos1_a_ = make_linear(ps, prefix + ".pos1.a", 2, c4, /*bias=*/true, rng);
    pos1_b_ = make_linear(ps, prefix + ".pos1.b", c4, c4, /*bias=*/true, rng);
    pos2_a_ = make_linear(ps, prefix + ".pos2.a", 2, c2, /*bias=*/true, rng);
    pos2_b_ = make_linear(ps, prefix + ".pos2.b", c2, c2, /*bias=*/true, rng);
}

namespace {

// Normalized in-window coordinates: the 1x1 token sits at the window centre
// (0,0); a k x k grid spans [-1,1] in both axes.
Tensor grid_coords(int k, bool with_center_token) {
    std::vector<double> rows;
    if (with_center_token) {
        rows.push_back(0.0);
        rows.push_back(0.0);
    }
    const double half = (k - 1) / 2.0;
    for (int r = 0; r < k; ++r)
        for (int c = 0; c < k; ++c) {
            rows.push_back((r - half) / half);
            rows.push_back((c - half) / half);
        }
    const int n = int(rows.size()) / 2;
    return Tensor::from({n, 2}, rows);
}

}  // namespace

Tensor FineDecoder::stage1_bias() const {
    Tensor coords = grid_coords(3, /*with_center_token=*/true);  // [10, 2]
    return pos1_b_(elu(pos1_a_(coords)));                        // [10, C4]
}

Tensor FineDecoder::stage2_bias() const {
    Tensor c3 = grid_coords(3, false);             // [9, 2]
    Tensor c5 = grid_coords(5, false);             // [25, 2]
    Tensor coords = concat({c3, c5}, 0);           // [34, 2]
    return pos2_b_(elu(pos2_a_(coords)));          // [34, C2]
}

FineDecoder::Result FineDecoder::decode(const WindowBundle& bundle) const {
    const int n = bundle.n();
    if (n == 0) throw ValidationError("fine decoding requires at least one window");

    // Stage 1: centre token + 3x3 window at C4.
    Tensor ta = concat({down1_(bundle.wa1), bundle.wa3}, 1);  // [n, 10, C4]
    Tensor tb = concat({down1_(bundle.wb1), bundle.wb3}, 1);
    std::vector<std::vector<double>> mask10_a(n), mask10_b(n);
    for (int i = 0; i < n; ++i) {
        mask10_a[i].push_back(1.0);
        mask10_a[i].insert(mask10_a[i].end(), bundle.mask_a3[i].begin(), bundle.mask_a3[i].end());
        mask10_b[i].push_back(1.0);
        mask10_b[i].insert(mask10_b[i].end(), bundle.mask_b3[i].begin(), bundle.mask_b3[i].end());
    }
    Tensor bias1, bias1_33;
    if (use_positional_bias_) {
        bias1 = stage1_bias();
        bias1_33 = slice(bias1, 0, 1, 9);
        ta = add(ta, bias1);
        tb = add(tb, bias1);
    }
    ta = self1_(ta, mask10_a);
    tb = self1_(tb, mask10_b);
    Tensor a3 = slice(ta, 1, 1, 9);  // [n, 9, C4]
    Tensor b3 = slice(tb, 1, 1, 9);
    if (use_positional_bias_) {
        a3 = add(a3, bias1_33);
        b3 = add(b3, bias1_33);
    }
    auto [a3c, b3c] = cross1_(a3, b3, bundle.mask_a3, bundle.mask_b3);

    // Stage 2: projected 3x3 tokens + 5x5 window at C2.
    Tensor ua = concat({down2_(a3c), bundle.wa5}, 1);  // [n, 34, C2]
    Tensor ub = concat({down2_(b3c), bundle.wb5}, 1);
    std::vector<std::vector<double>> mask34_a(n), mask34_b(n);
    for (int i = 0; i < n; ++i) {
        mask34_a[i] = bundle.mask_a3[i];
        mask34_a[i].insert(mask34_a[i].end(), bundle.mask_a5[i].begin(), bundle.mask_a5[i].end());
        mask34_b[i] = bundle.mask_b3[i];
        mask34_b[i].insert(mask34_b[i].end(), bundle.mask_b5[i].begin(), bundle.mask_b5[i].end());
    }
    Tensor bias2, bias2_55;
    if (use_positional_bias_) {
        bias2 = stage2_bias();
        bias2_55 = slice(bias2, 0, 9, 25);
        ua = add(ua, bias2);
        ub = add(ub, bias2);
    }
    ua = self2_(ua, mask34_a);
    ub = self2_(ub, mask34_b);
    Tensor a5 = slice(ua, 1, 9, 25);  // [n, 25, C2]
    Tensor b5 = slice(ub, 1, 9, 25);
    if (use_positional_bias_) {
        a5 = add(a5, bias2_55);
        b5 = add(b5, bias2_55);
    }
    auto [a5c, b5c] = cross2_(a5, b5, bundle.mask_a5, bundle.mask_b5);
    return {a5c, b5c};
}

// ---------------------------------------------------------------------------
// Fine probabilities and selection

Tensor fine_similarity(const Tensor& fa5, const Tensor& fb5, double tau) {
    if (tau <= 0.0) throw ValidationError("similarity temperature must be positive");
    const int d = fa5.shape().back();
    const double scale = 1.0 / (std::sqrt(double(d)) * tau);
    return mul_scalar(matmul(fa5, permute(fb5, {0, 2, 1})), scale);  // [n, 25, 25]
}

Tensor fine_probs(const Tensor& s_f, const std::vector<std::vector<double>>& mask_a5,
                  const std::vector<std::vector<double>>& mask_b5) {
    const int n = s_f.shape()[0];
    const int t = s_f.shape()[1];
    Tensor mb = Tensor::zeros({n, 1, t});
    Tensor ma = Tensor::zeros({n, 1, t});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < t; ++j) {
            mb.data()[int64_t(i) * t + j] = mask_b5.empty() ? 1.0 : mask_b5[i][j];
            ma.data()[int64_t(i) * t + j] = mask_a5.empty() ? 1.0 : mask_a5[i][j];
        }
    Tensor p_row = masked_softmax(s_f, mb);
    Tensor p_col = permute(masked_softmax(permute(s_f, {0, 2, 1}), ma), {0, 2, 1});
    return mul(p_row, p_col);
}

FineMatchSet select_fine_matches(const Tensor& p_f, const WindowBundle& bundle, double theta_f) {
    const int n = p_f.shape()[0];
    const int t = p_f.shape()[1];
    FineMatchSet out;
    const double* d = p_f.data();
    for (int m = 0; m < n; ++m) {
        const double* win = d + int64_t(m) * t * t;
        int best = 0;
        for (int f = 1; f < t * t; ++f)
            if (win[f] > win[best]) best = f;
        if (win[best] >= theta_f) {
            FineMatch fm;
            fm.parent = bundle.parent[m];
            fm.ia = best / t;
            fm.jb = best % t;
            fm.confidence = win[best];
            out.matches.push_back(fm);
        }
    }
    return out;
}

}  // namespace xoftr
