#include "xoftr/subpixel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace xoftr {

SubpixelRegressor::SubpixelRegressor(ParamStore& ps, const std::string& prefix, int c2, int hidden,
                                     SeededStream& rng) {
    fc1_ = make_linear(ps, prefix + ".fc1", 2 * c2, hidden, /*bias=*/true, rng);
    fc2_ = make_linear_zero(ps, prefix + ".fc2", hidden, 4, /*bias=*/true);
}

Tensor SubpixelRegressor::operator()(const Tensor& fa_sel, const Tensor& fb_sel) const {
    Tensor x = concat({fa_sel, fb_sel}, 1);  // [M, 2*C2]
    return tanh_t(fc2_(elu(fc1_(x))));       // [M, 4] in (-1,1)
}

std::pair<Tensor, Tensor> gather_selected_features(const Tensor& fa5, const Tensor& fb5,
                                                   const FineMatchSet& fine) {
    const int t = fa5.shape()[1];  // 25
    const int c = fa5.shape()[2];
    Tensor fa_rows = reshape(fa5, {fa5.shape()[0] * t, c});
    Tensor fb_rows = reshape(fb5, {fb5.shape()[0] * t, c});
    std::vector<int> idx_a, idx_b;
    idx_a.reserve(fine.matches.size());
    idx_b.reserve(fine.matches.size());
    for (const FineMatch& m : fine.matches) {
        idx_a.push_back(m.parent * t + m.ia);
        idx_b.push_back(m.parent * t + m.jb);
    }
    return {index_rows(fa_rows, idx_a), index_rows(fb_rows, idx_b)};
}

namespace {

// Pixel coordinates of a fine match's two cell centres.
void match_centers(const FineMatch& m, const WindowBundle& bundle, double* xa, double* ya,
                   double* xb, double* yb) {
    const auto& ca = bundle.center_a5[m.parent];
    const auto& cb = bundle.center_b5[m.parent];
    const int ra = ca.first + m.ia / 5 - 2, cca = ca.second + m.ia % 5 - 2;
    const int rb = cb.first + m.jb / 5 - 2, ccb = cb.second + m.jb % 5 - 2;
    *xa = fine_cell_center_px(cca);
    *ya = fine_cell_center_px(ra);
    *xb = fine_cell_center_px(ccb);
    *yb = fine_cell_center_px(rb);
}

}  // namespace

std::pair<Tensor, Tensor> refined_coordinates(const FineMatchSet& fine, const WindowBundle& bundle,
                                              const Tensor& offsets) {
    const int m = int(fine.matches.size());
    Tensor ca = Tensor::zeros({m, 2});
    Tensor cb = Tensor::zeros({m, 2});
    for (int i = 0; i < m; ++i) {
        double xa, ya, xb, yb;
        match_centers(fine.matches[i], bundle, &xa, &ya, &xb, &yb);
        ca.data()[2 * i] = xa;
        ca.data()[2 * i + 1] = ya;
        cb.data()[2 * i] = xb;
        cb.data()[2 * i + 1] = yb;
    }
    Tensor pa = add(ca, slice(offsets, 1, 0, 2));
    Tensor pb = add(cb, slice(offsets, 1, 2, 2));
    return {pa, pb};
}

SubpixelMatches assemble_matches(const FineMatchSet& fine, const WindowBundle& bundle,
                                 const Tensor& offsets, int width_a, int height_a, int width_b,
                                 int height_b) {
    const int m = int(fine.matches.size());
    std::vector<RefinedMatch> cand(m);
    const double* off = offsets.defined() ? offsets.data() : nullptr;
    for (int i = 0; i < m; ++i) {
        const FineMatch& fm = fine.matches[i];
        RefinedMatch r;
        match_centers(fm, bundle, &r.xa, &r.ya, &r.xb, &r.yb);
        if (off) {
            r.xa += off[4 * i];
            r.ya += off[4 * i + 1];
            r.xb += off[4 * i + 2];
            r.yb += off[4 * i + 3];
        }
        r.xa = std::clamp(r.xa, 0.0, double(width_a - 1));
        r.ya = std::clamp(r.ya, 0.0, double(height_a - 1));
        r.xb = std::clamp(r.xb, 0.0, double(width_b - 1));
        r.yb = std::clamp(r.yb, 0.0, double(height_b - 1));
        r.confidence = fm.confidence;
        r.parent = fm.parent;
        cand[i] = r;
    }
    // Higher confidence wins rounded-point conflicts; stable order otherwise.
    std::vector<int> order(m);
    for (int i = 0; i < m; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int l, int r) {
        if (cand[l].confidence != cand[r].confidence) return cand[l].confidence > cand[r].confidence;
        return cand[l].parent < cand[r].parent;
    });
    std::set<std::pair<int64_t, int64_t>> seen_a, seen_b;
    std::vector<RefinedMatch> kept;
    kept.reserve(m);
    for (int idx : order) {
        const RefinedMatch& r = cand[idx];
        std::pair<int64_t, int64_t> ka{llround(r.xa), llround(r.ya)};
        std::pair<int64_t, int64_t> kb{llround(r.xb), llround(r.yb)};
        if (seen_a.count(ka) || seen_b.count(kb)) continue;
        seen_a.insert(ka);
        seen_b.insert(kb);
        kept.push_back(r);
    }
    std::sort(kept.begin(), kept.end(), [](const RefinedMatch& l, const RefinedMatch& r) {
        return l.parent < r.parent;
    });
    SubpixelMatches out;
    out.matches = std::move(kept);
    return out;
}

void write_matches(const std::string& path, const SubpixelMatches& matches) {
    std::ofstream f(path);
    if (!f) throw InputError("cannot open match file for writing: " + path);
    f << "# xA yA xB yB conf\n";
    char line[160];
    for (const RefinedMatch& m : matches.matches) {
        std::snprintf(line, sizeof(line), "%.6f %.6f %.6f %.6f %.6f\n", m.xa, m.ya, m.xb, m.yb,
                      m.confidence);
        f << line;
    }
}

SubpixelMatches read_matches(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InputError("cannot open match file: " + path);
    SubpixelMatches out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        RefinedMatch m;
        if (!(ss >> m.xa >> m.ya >> m.xb >> m.yb >> m.confidence))
            throw InputError("malformed match line: " + line);
        out.matches.push_back(m);
    }
    return out;
}

}  // namespace xoftr
