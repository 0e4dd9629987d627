#include "xoftr/mim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

namespace xoftr {

namespace {

int count_flags(const std::vector<uint8_t>& m) {
    return int(std::count(m.begin(), m.end(), uint8_t(1)));
}

std::vector<uint8_t> draw_mask(int prows, int pcols, double ratio, SeededStream& rng) {
    const int num = prows * pcols;
    const int k = int(std::lround(ratio * num));
    std::vector<int> idx(num);
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    std::vector<uint8_t> mask(num, 0);
    for (int i = 0; i < k; ++i) mask[idx[i]] = 1;
    return mask;
}

}  // namespace

int MaskPair::masked_a() const { return count_flags(mask_a); }
int MaskPair::masked_b() const { return count_flags(mask_b); }

MaskPair sample_mask_pair(int rows_a, int cols_a, int rows_b, int cols_b, double ratio, int patch,
                          SeededStream& rng) {
    if (patch <= 0) throw ValidationError("patch size must be positive");
    if (ratio < 0.0 || ratio > 1.0) throw ValidationError("mask ratio must lie in [0,1]");
    if (rows_a % patch || cols_a % patch || rows_b % patch || cols_b % patch)
        throw ValidationError(
            "image dimensions must be padded to a multiple of the patch size before masking");
    MaskPair mp;
    mp.patch = patch;
    mp.prows_a = rows_a / patch;
    mp.pcols_a = cols_a / patch;
    mp.prows_b = rows_b / patch;
    mp.pcols_b = cols_b / patch;
    mp.mask_a = draw_mask(mp.prows_a, mp.pcols_a, ratio, rng);
    mp.mask_b = draw_mask(mp.prows_b, mp.pcols_b, ratio, rng);
    return mp;
}

Grid apply_patch_mask(const Grid& image, const std::vector<uint8_t>& mask, int prows, int pcols,
                      int patch) {
    if (image.rows != prows * patch || image.cols != pcols * patch)
        throw ValidationError("patch mask does not match the image dimensions");
    Grid out = image;
    for (int pr = 0; pr < prows; ++pr)
        for (int pc = 0; pc < pcols; ++pc) {
            if (!mask[size_t(pr) * pcols + pc]) continue;
            for (int r = pr * patch; r < (pr + 1) * patch; ++r)
                for (int c = pc * patch; c < (pc + 1) * patch; ++c) out.at(r, c) = 0.0;
        }
    return out;
}

MimTokens make_mim_tokens(ParamStore& ps, const std::string& prefix, int c8, int c4, int c2,
                          SeededStream& rng) {
    MimTokens t;
    t.t8 = ps.create(prefix + ".token8", {c8});
    t.t4 = ps.create(prefix + ".token4", {c4});
    t.t2 = ps.create(prefix + ".token2", {c2});
    for (Tensor* tok : {&t.t8, &t.t4, &t.t2})
        for (auto& v : tok->values()) v = 0.02 * rng.normal();
    return t;
}

Tensor tokenize_scale(const Tensor& fmap, const std::vector<uint8_t>& mask, int prows, int pcols,
                      int cells_per_patch, const Tensor& token) {
    const auto& s = fmap.shape();
    const int c = s[0], h = s[1], w = s[2];
    if (h != prows * cells_per_patch || w != pcols * cells_per_patch)
        throw ValidationError("patch mask does not replicate onto this feature map exactly");
    if (token.shape() != Shape{c})
        throw ValidationError("replacement token width does not match the feature map");
    Tensor m = Tensor::zeros({1, h, w});
    Tensor inv = Tensor::zeros({1, h, w});
    for (int r = 0; r < h; ++r)
        for (int col = 0; col < w; ++col) {
            const int flag = mask[size_t(r / cells_per_patch) * pcols + col / cells_per_patch];
            m.data()[int64_t(r) * w + col] = flag;
            inv.data()[int64_t(r) * w + col] = 1 - flag;
        }
    Tensor tok = reshape(token, {c, 1, 1});
    return add(mul(fmap, inv), mul(tok, m));
}

void tokenize_pyramid(FeaturePyramid* pyr, const std::vector<uint8_t>& mask, int prows, int pcols,
                      int patch, const MimTokens& tokens) {
    pyr->f_coarse = tokenize_scale(pyr->f_coarse, mask, prows, pcols, patch / 8, tokens.t8);
    pyr->f_mid = tokenize_scale(pyr->f_mid, mask, prows, pcols, patch / 4, tokens.t4);
    pyr->f_fine = tokenize_scale(pyr->f_fine, mask, prows, pcols, patch / 2, tokens.t2);
}

std::vector<int> masked_coarse_cells(const std::vector<uint8_t>& mask, int prows, int pcols,
                                     int patch, int cols8) {
    const int k8 = patch / 8;
    if (cols8 != pcols * k8)
        throw ValidationError("coarse grid width does not match the patch mask");
    std::vector<int> cells;
    for (int pr = 0; pr < prows; ++pr)
        for (int pc = 0; pc < pcols; ++pc) {
            if (!mask[size_t(pr) * pcols + pc]) continue;
            for (int dr = 0; dr < k8; ++dr)
                for (int dc = 0; dc < k8; ++dc)
                    cells.push_back((pr * k8 + dr) * cols8 + pc * k8 + dc);
        }
    std::sort(cells.begin(), cells.end());
    return cells;
}

MimHead make_mim_head(ParamStore& ps, const std::string& prefix, int c2, SeededStream& rng) {
    MimHead h;
    h.proj = make_linear(ps, prefix + ".proj", 25 * c2, 100, /*bias=*/true, rng);
    return h;
}

std::pair<Tensor, Tensor> project_patches(const MimHead& head, const Tensor& fa5,
                                          const Tensor& fb5) {
    const int n = fa5.shape()[0];
    const int flat = fa5.shape()[1] * fa5.shape()[2];
    Tensor pa = head.proj(reshape(fa5, {n, flat}));
    Tensor pb = head.proj(reshape(fb5, {n, flat}));
    return {pa, pb};
}

namespace {

// Constant [100, 64] matrix resampling a 10x10 window to its 8x8 footprint
// with bilinear weights.
Tensor resample_matrix_10_to_8() {
    double wr[8][10] = {};
    for (int o = 0; o < 8; ++o) {
        const double src = (o + 0.5) * (10.0 / 8.0) - 0.5;
        const int i0 = int(std::floor(src));
        const double f = src - i0;
        wr[o][i0] += 1.0 - f;
        wr[o][i0 + 1] += f;
    }
    Tensor w = Tensor::zeros({100, 64});
    for (int ir = 0; ir < 10; ++ir)
        for (int ic = 0; ic < 10; ++ic)
            for (int orow = 0; orow < 8; ++orow)
                for (int ocol = 0; ocol < 8; ++ocol)
                    w.data()[(int64_t(ir) * 10 + ic) * 64 + orow * 8 + ocol] =
                        wr[orow][ir] * wr[ocol][ic];
    return w;
}

// Target 8x8 footprint pixels of each selected cell, as a constant [N,64].
Tensor footprint_targets(const std::vector<int>& rows, const std::vector<int>& cells,
                         const Grid& target, int cols8) {
    Tensor t = Tensor::zeros({int(rows.size()), 64});
    for (size_t i = 0; i < rows.size(); ++i) {
        const int cell = cells[rows[i]];
        const int r0 = (cell / cols8) * 8, c0 = (cell % cols8) * 8;
        for (int dr = 0; dr < 8; ++dr)
            for (int dc = 0; dc < 8; ++dc)
                t.data()[i * 64 + dr * 8 + dc] = target.at(r0 + dr, c0 + dc);
    }
    return t;
}

// Sum of squared errors for one image under the overlapping-window placement;
// adds the masked pixel count to *px_count.
Tensor overlap_sq_err(const Tensor& patches, const std::vector<int>& sel_rows,
                      const std::vector<int>& cells, const Grid& target, int cols8,
                      int64_t* px_count) {
    std::unordered_set<int> masked_cells;
    for (int r : sel_rows) masked_cells.insert(cells[r]);
    // Contributions of every selected window to every pixel it covers.
    std::unordered_map<int64_t, std::vector<int64_t>> contrib;
    for (int r : sel_rows) {
        const int cell = cells[r];
        const int row0 = (cell / cols8) * 8 - 1, col0 = (cell % cols8) * 8 - 1;
        for (int wr = 0; wr < 10; ++wr)
            for (int wc = 0; wc < 10; ++wc) {
                const int pr = row0 + wr, pc = col0 + wc;
                if (pr < 0 || pr >= target.rows || pc < 0 || pc >= target.cols) continue;
                if (!masked_cells.count((pr / 8) * cols8 + pc / 8)) continue;
                contrib[int64_t(pr) * target.cols + pc].push_back(int64_t(r) * 100 + wr * 10 + wc);
            }
    }
    // Group masked pixels by contributor count (row-major order, deterministic).
    const int max_k = 4;
    std::vector<std::vector<std::vector<int>>> slots(max_k + 1);
    std::vector<std::vector<double>> tgt(max_k + 1);
    for (int k = 1; k <= max_k; ++k) slots[k].resize(k);
    for (int pr = 0; pr < target.rows; ++pr)
        for (int pc = 0; pc < target.cols; ++pc) {
            auto it = contrib.find(int64_t(pr) * target.cols + pc);
            if (it == contrib.end()) continue;
            const auto& list = it->second;
            const int k = int(list.size());
            if (k < 1 || k > max_k)
                throw Error("unexpected overlap count in reconstruction placement");
            for (int s = 0; s < k; ++s) slots[k][s].push_back(int(list[s]));
            tgt[k].push_back(target.at(pr, pc));
            ++*px_count;
        }
    Tensor flat = reshape(patches, {patches.shape()[0] * 100, 1});
    Tensor total;
    for (int k = 1; k <= max_k; ++k) {
        if (tgt[k].empty()) continue;
        Tensor acc = index_rows(flat, slots[k][0]);
        for (int s = 1; s < k; ++s) acc = add(acc, index_rows(flat, slots[k][s]));
        acc = mul_scalar(acc, 1.0 / k);
        Tensor t = Tensor::from({int(tgt[k].size()), 1}, tgt[k]);
        Tensor sq = sum_all(square(sub(acc, t)));
        total = total.defined() ? add(total, sq) : sq;
    }
    return total.defined() ? total : Tensor::scalar(0.0);
}

}  // namespace

Tensor mim_loss(const Tensor& patches_a, const Tensor& patches_b, const std::vector<int>& cells,
                const std::vector<uint8_t>& sel_a, const std::vector<uint8_t>& sel_b,
                const Grid& target_a, const Grid& target_b, int cols8_a, int cols8_b,
                MimPlacement placement) {
    std::vector<int> rows_a, rows_b;
    for (size_t i = 0; i < cells.size(); ++i) {
        if (i < sel_a.size() && sel_a[i]) rows_a.push_back(int(i));
        if (i < sel_b.size() && sel_b[i]) rows_b.push_back(int(i));
    }
    if (rows_a.empty() && rows_b.empty()) return Tensor::scalar(0.0);

    if (placement == MimPlacement::kResample) {
        Tensor w = resample_matrix_10_to_8();
        Tensor total;
        int64_t count = 0;
        if (!rows_a.empty()) {
            Tensor pred = matmul(index_rows(patches_a, rows_a), w);
            Tensor sq = sum_all(square(sub(pred, footprint_targets(rows_a, cells, target_a, cols8_a))));
            total = sq;
            count += 64 * int64_t(rows_a.size());
        }
        if (!rows_b.empty()) {
            Tensor pred = matmul(index_rows(patches_b, rows_b), w);
            Tensor sq = sum_all(square(sub(pred, footprint_targets(rows_b, cells, target_b, cols8_b))));
            total = total.defined() ? add(total, sq) : sq;
            count += 64 * int64_t(rows_b.size());
        }
        return mul_scalar(total, 1.0 / double(count));
    }

    int64_t count = 0;
    Tensor total;
    if (!rows_a.empty()) {
        total = overlap_sq_err(patches_a, rows_a, cells, target_a, cols8_a, &count);
    }
    if (!rows_b.empty()) {
        Tensor sq = overlap_sq_err(patches_b, rows_b, cells, target_b, cols8_b, &count);
        total = total.defined() ? add(total, sq) : sq;
    }
    return mul_scalar(total, 1.0 / double(count));
}

}  // namespace xoftr
