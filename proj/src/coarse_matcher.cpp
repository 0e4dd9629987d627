#include "xoftr/coarse_matcher.hpp"

#include <cmath>
#include <map>

namespace xoftr {

Tensor sinusoidal_pe_2d(int rows, int cols, int dim) {
    if (dim % 4 != 0) throw ValidationError("positional encoding dim must be divisible by 4");
    int quarter = dim / 4;
    Tensor pe = Tensor::zeros({rows * cols, dim});
    double* p = pe.data();
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            double* row = p + (size_t(r) * cols + c) * dim;
            for (int i = 0; i < quarter; ++i) {
                double omega = std::pow(10000.0, -double(4 * i) / dim);
                row[4 * i + 0] = std::sin(c * omega);
                row[4 * i + 1] = std::cos(c * omega);
                row[4 * i + 2] = std::sin(r * omega);
                row[4 * i + 3] = std::cos(r * omega);
            }
        }
    return pe;
}

namespace {

// [N, C] -> [heads, N, C/heads]
Tensor split_heads(const Tensor& x, int heads) {
    int n = x.dim(0), c = x.dim(1);
    Tensor t = reshape(x, {n, heads, c / heads});
    return permute(t, {1, 0, 2});
}

Tensor merge_heads(const Tensor& x) {
    int h = x.dim(0), n = x.dim(1), dk = x.dim(2);
    return reshape(permute(x, {1, 0, 2}), {n, h * dk});
}

Tensor feature_map(const Tensor& x) { return add_scalar(elu(x), 1.0); }

Tensor mask_tokens(const Tensor& x /*[h,N,dk]*/, const std::vector<double>& mask) {
    if (mask.empty()) return x;
    Tensor m = Tensor::from({1, int(mask.size()), 1}, mask);
    return mul(x, m);
}

}  // namespace

LinearAttentionBlock::LinearAttentionBlock(ParamStore& ps, const std::string& prefix, int dim,
                                           int heads, SeededStream& rng)
    : dim_(dim), heads_(heads) {
    if (dim % heads != 0) throw ValidationError("attention dim must divide into heads");
    q_ = make_linear(ps, prefix + ".q", dim, dim, false, rng);
    k_ = make_linear(ps, prefix + ".k", dim, dim, false, rng);
    v_ = make_linear(ps, prefix + ".v", dim, dim, false, rng);
    merge_ = make_linear(ps, prefix + ".merge", dim, dim, true, rng);
    mlp1_ = make_linear(ps, prefix + ".mlp1", 2 * dim, 2 * dim, false, rng);
    mlp2_ = make_linear_zero(ps, prefix + ".mlp2", 2 * dim, dim, false);
    norm1_ = make_layer_norm(ps, prefix + ".norm1", dim);
    norm2_ = make_layer_norm(ps, prefix + ".norm2", dim);
}

Tensor linear_kernel_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                               const std::vector<double>& source_mask) {
    Tensor qh = feature_map(split_heads(q, heads));        // [h, N, dk]
    Tensor kh = feature_map(split_heads(k, heads));        // [h, M, dk]
    Tensor vh = split_heads(v, heads);                     // [h, M, dk]
    kh = mask_tokens(kh, source_mask);
    vh = mask_tokens(vh, source_mask);

    // linear attention: out_i = q_i (K^T V) / (q_i · sum_j k_j)
    Tensor kv = matmul(permute(kh, {0, 2, 1}), vh);        // [h, dk, dk]
    Tensor ksum = sum_axis(kh, 1, /*keepdim=*/true);       // [h, 1, dk]
    Tensor z = matmul(qh, permute(ksum, {0, 2, 1}));       // [h, N, 1]
    Tensor out = div(matmul(qh, kv), add_scalar(z, 1e-6)); // [h, N, dk]
    return merge_heads(out);
}

Tensor LinearAttentionBlock::operator()(const Tensor& x, const Tensor& source,
                                        const std::vector<double>& source_mask) const {
    if (x.dim(1) != dim_ || source.dim(1) != dim_)
        throw ValidationError("attention block channel mismatch");
    Tensor attn = linear_kernel_attention(q_(x), k_(source), v_(source), heads_, source_mask);
    Tensor message = merge_(attn);                             // [N, C]
    message = layer_norm(message, norm1_.gamma, norm1_.beta);
    message = mlp2_(elu(mlp1_(concat({x, message}, 1))));
    message = layer_norm(message, norm2_.gamma, norm2_.beta);
    return add(x, message);
}

Tensor dense_kernel_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                              const std::vector<double>& source_mask) {
    // quadratic-cost evaluation of the same kernelized attention
    Tensor qh = feature_map(split_heads(q, heads));
    Tensor kh = feature_map(split_heads(k, heads));
    Tensor vh = split_heads(v, heads);
    kh = mask_tokens(kh, source_mask);
    vh = mask_tokens(vh, source_mask);
    Tensor scores = matmul(qh, permute(kh, {0, 2, 1}));  // [h, N, M]
    Tensor denom = add_scalar(sum_axis(scores, 2, true), 1e-6);
    Tensor out = div(matmul(scores, vh), denom);
    return merge_heads(out);
}

CoarseMatcher::CoarseMatcher(ParamStore& ps, const std::string& prefix, int dim, int heads,
                             int layers, SeededStream& rng) {
    for (int l = 0; l < layers; ++l) {
        self_.emplace_back(ps, prefix + ".self" + std::to_string(l), dim, heads, rng);
        cross_.emplace_back(ps, prefix + ".cross" + std::to_string(l), dim, heads, rng);
    }
}

std::pair<Tensor, Tensor> CoarseMatcher::refine(const Tensor& fa, const Tensor& fb,
                                                const std::vector<double>& mask_a,
                                                const std::vector<double>& mask_b) const {
    if (fa.dim(1) != fb.dim(1)) throw ValidationError("coarse token dims differ between images");
    Tensor a = fa, b = fb;
    for (size_t l = 0; l < self_.size(); ++l) {
        Tensor a1 = self_[l](a, a, mask_a);
        Tensor b1 = self_[l](b, b, mask_b);
        Tensor a2 = cross_[l](a1, b1, mask_b);
        Tensor b2 = cross_[l](b1, a1, mask_a);
        a = a2;
        b = b2;
    }
    return {a, b};
}

CoarseProbabilities coarse_probs_from_similarity(const Tensor& s, const std::vector<double>& mask_a,
                                                 const std::vector<double>& mask_b) {
    int na = s.dim(0), nb = s.dim(1);
    std::vector<double> joint(size_t(na) * nb, 1.0);
    if (!mask_a.empty() || !mask_b.empty()) {
        for (int i = 0; i < na; ++i)
            for (int j = 0; j < nb; ++j) {
                double m = 1.0;
                if (!mask_a.empty()) m *= mask_a[i];
                if (!mask_b.empty()) m *= mask_b[j];
                joint[size_t(i) * nb + j] = m;
            }
    }
    Tensor mask = Tensor::from({na, nb}, joint);
    std::vector<double> joint_t(size_t(nb) * na);
    for (int i = 0; i < na; ++i)
        for (int j = 0; j < nb; ++j) joint_t[size_t(j) * na + i] = joint[size_t(i) * nb + j];
    Tensor mask_t = Tensor::from({nb, na}, joint_t);

    CoarseProbabilities out;
    out.s = s;
    out.p0 = masked_softmax(s, mask);
    out.p1 = transpose2d(masked_softmax(transpose2d(s), mask_t));
    return out;
}

CoarseProbabilities coarse_similarity(const Tensor& fa_hat, const Tensor& fb_hat,
                                      const Linear& proj, double tau,
                                      const std::vector<double>& mask_a,
                                      const std::vector<double>& mask_b) {
    if (tau <= 0.0) throw ValidationError("similarity temperature must be positive");
    Tensor pa = proj(fa_hat);
    Tensor pb = proj(fb_hat);
    double scale = 1.0 / (std::sqrt(double(pa.dim(1))) * tau);
    Tensor s = mul_scalar(matmul(pa, transpose2d(pb)), scale);
    CoarseProbabilities out = coarse_probs_from_similarity(s, mask_a, mask_b);
    return out;
}

CoarseMatchSet select_coarse_matches(const CoarseProbabilities& probs, double theta_c, int rows_a,
                                     int cols_a, int rows_b, int cols_b) {
    int na = probs.p0.dim(0), nb = probs.p0.dim(1);
    if (rows_a * cols_a != na || rows_b * cols_b != nb)
        throw ValidationError("coarse grid dims do not match probability matrices");
    const double* p0 = probs.p0.data();
    const double* p1 = probs.p1.data();

    // (i,j) -> (confidence, bitmask of sources)
    std::map<std::pair<int, int>, std::pair<double, int>> picked;
    for (int i = 0; i < na; ++i) {
        int best = 0;
        for (int j = 1; j < nb; ++j)
            if (p0[size_t(i) * nb + j] > p0[size_t(i) * nb + best]) best = j;
        double conf = p0[size_t(i) * nb + best];
        if (conf >= theta_c) {
            auto& slot = picked[{i, best}];
            slot.first = std::max(slot.first, conf);
            slot.second |= 1;
        }
    }
    for (int j = 0; j < nb; ++j) {
        int best = 0;
        for (int i = 1; i < na; ++i)
            if (p1[size_t(i) * nb + j] > p1[size_t(best) * nb + j]) best = i;
        double conf = p1[size_t(best) * nb + j];
        if (conf >= theta_c) {
            auto& slot = picked[{best, j}];
            slot.first = std::max(slot.first, conf);
            slot.second |= 2;
        }
    }

    CoarseMatchSet out;
    out.rows_a = rows_a;
    out.cols_a = cols_a;
    out.rows_b = rows_b;
    out.cols_b = cols_b;
    for (const auto& [key, val] : picked) {
        CoarseMatch m;
        m.i = key.first;
        m.j = key.second;
        m.confidence = val.first;
        m.source = val.second == 3 ? MatchSource::Both
                                   : (val.second == 1 ? MatchSource::RowSide : MatchSource::ColSide);
        out.matches.push_back(m);
    }
    return out;
}

}  // namespace xoftr
