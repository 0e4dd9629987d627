#include "xoftr/model.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>

namespace xoftr {

namespace {

std::vector<double> grid_to_mask(const Grid& g) {
    return g.v;
}

CoarseMatchSet keep_mutual_only(const CoarseMatchSet& in) {
    CoarseMatchSet out = in;
    out.matches.clear();
    for (const auto& m : in.matches)
        if (m.source == MatchSource::Both) out.matches.push_back(m);
    return out;
}

}  // namespace

namespace {

RunConfig validated(RunConfig cfg) {
    cfg.validate();
    return cfg;
}

BackboneConfig backbone_config(const RunConfig& cfg) {
    BackboneConfig bc;
    bc.c2 = cfg.c2;
    bc.c4 = cfg.c4;
    bc.c8 = cfg.c8;
    bc.blocks_per_stage = cfg.backbone_blocks;
    return bc;
}

}  // namespace

XoftrModel::XoftrModel(const RunConfig& cfg)
    : cfg_(validated(cfg)),
      init_rng_(cfg_.seed ^ 0x9e3779b97f4a7c15ull),
      backbone_(ps_, "backbone", backbone_config(cfg_), init_rng_),
      matcher_(ps_, "coarse", cfg_.c8, cfg_.heads, cfg_.coarse_layers, init_rng_),
      coarse_proj_(make_linear(ps_, "coarse_proj", cfg_.c8, cfg_.c8, true, init_rng_)),
      fuser_(ps_, "fuser", cfg_.c8, cfg_.c4, init_rng_),
      decoder_(ps_, "decoder", cfg_.c4, cfg_.c2, cfg_.heads, init_rng_),
      regressor_(ps_, "sprm", cfg_.c2, cfg_.subpixel_hidden, init_rng_),
      mim_tokens_(make_mim_tokens(ps_, "mim_tokens", cfg_.c8, cfg_.c4, cfg_.c2, init_rng_)),
      mim_head_(make_mim_head(ps_, "mim_head", cfg_.c2, init_rng_)) {
    decoder_.set_positional_bias(cfg_.use_positional_bias);
}

Tensor XoftrModel::tokens_with_pe(const Tensor& fmap) const {
    const int c = fmap.dim(0), h = fmap.dim(1), w = fmap.dim(2);
    Tensor tok = reshape(permute(fmap, {1, 2, 0}), {h * w, c});
    return add(tok, sinusoidal_pe_2d(h, w, c));
}

Tensor XoftrModel::tokens_to_map(const Tensor& tok, int h, int w) const {
    const int c = tok.dim(1);
    return permute(reshape(tok, {h, w, c}), {2, 0, 1});
}

XoftrModel::PairFeatures XoftrModel::encode(const ImagePair& pair) const {
    PairFeatures f;
    f.pyr_a = backbone_.extract(pair.image_a, pair.mask_a);
    f.pyr_b = backbone_.extract(pair.image_b, pair.mask_b);
    f.ha = f.pyr_a.f_coarse.dim(1);
    f.wa = f.pyr_a.f_coarse.dim(2);
    f.hb = f.pyr_b.f_coarse.dim(1);
    f.wb = f.pyr_b.f_coarse.dim(2);
    f.mask_a = grid_to_mask(f.pyr_a.validity_coarse);
    f.mask_b = grid_to_mask(f.pyr_b.validity_coarse);

    Tensor ta = tokens_with_pe(f.pyr_a.f_coarse);
    Tensor tb = tokens_with_pe(f.pyr_b.f_coarse);
    std::tie(f.fa_hat, f.fb_hat) = matcher_.refine(ta, tb, f.mask_a, f.mask_b);

    f.fused_a = fuser_(tokens_to_map(f.fa_hat, f.ha, f.wa), f.pyr_a.f_coarse);
    f.fused_b = fuser_(tokens_to_map(f.fb_hat, f.hb, f.wb), f.pyr_b.f_coarse);
    return f;
}

CoarseProbabilities XoftrModel::coarse_probabilities(const PairFeatures& f) const {
    return coarse_similarity(f.fa_hat, f.fb_hat, coarse_proj_, cfg_.tau, f.mask_a, f.mask_b);
}

XoftrModel::WindowDecode XoftrModel::decode_windows(const PairFeatures& f,
                                                    const CoarseMatchSet& windows,
                                                    double theta_f) const {
    WindowDecode d;
    d.bundle = crop_match_windows(windows, f.fused_a, f.fused_b, f.pyr_a.f_mid, f.pyr_b.f_mid,
                                  f.pyr_a.f_fine, f.pyr_b.f_fine);
    FineDecoder::Result dec = decoder_.decode(d.bundle);
    d.fa5 = dec.fa5;
    d.fb5 = dec.fb5;
    Tensor s_f = fine_similarity(d.fa5, d.fb5, cfg_.tau);
    d.p_f = fine_probs(s_f, d.bundle.mask_a5, d.bundle.mask_b5);
    d.fine = select_fine_matches(d.p_f, d.bundle, theta_f);
    return d;
}

MatchResult XoftrModel::match_pair(const ImagePair& pair) const {
    MatchResult r;
    PairFeatures f = encode(pair);
    r.cprobs = coarse_probabilities(f);
    r.coarse = select_coarse_matches(r.cprobs, cfg_.theta_c, f.ha, f.wa, f.hb, f.wb);
    if (cfg_.one_to_one_only) r.coarse = keep_mutual_only(r.coarse);
    if (r.coarse.matches.empty()) return r;

    const double theta_f = cfg_.use_theta_f ? cfg_.theta_f : 0.0;
    WindowDecode d = decode_windows(f, r.coarse, theta_f);
    r.bundle = d.bundle;
    r.p_f = d.p_f;
    r.fine = d.fine;
    if (r.fine.matches.empty()) return r;

    auto [fa_sel, fb_sel] = gather_selected_features(d.fa5, d.fb5, r.fine);
    const int m = int(r.fine.matches.size());
    r.offsets = cfg_.use_sprm ? regressor_(fa_sel, fb_sel) : Tensor::zeros({m, 4});
    r.matches = assemble_matches(r.fine, r.bundle, r.offsets, pair.image_a.cols,
                                 pair.image_a.rows, pair.image_b.cols, pair.image_b.rows);
    return r;
}

TrainForward XoftrModel::forward_training(const ImagePair& pair,
                                          const CoarseMatchSet& windows) const {
    TrainForward t;
    PairFeatures f = encode(pair);
    t.cprobs = coarse_probabilities(f);
    if (windows.matches.empty()) return t;

    WindowDecode d = decode_windows(f, windows, 0.0);  // unthresholded picks
    t.bundle = d.bundle;
    t.p_f = d.p_f;
    t.fine = d.fine;
    if (t.fine.matches.empty()) return t;

    auto [fa_sel, fb_sel] = gather_selected_features(d.fa5, d.fb5, t.fine);
    const int m = int(t.fine.matches.size());
    Tensor offsets = cfg_.use_sprm ? regressor_(fa_sel, fb_sel) : Tensor::zeros({m, 4});
    std::tie(t.pa, t.pb) = refined_coordinates(t.fine, t.bundle, offsets);
    return t;
}

namespace {

/// Write the 10x10 prediction of one coarse cell into the 8x8 pixel footprint
/// of `out`, bilinearly resampled (same geometry as the reconstruction loss).
void paint_cell(Grid* out, const double* patch, int cell, int cols8) {
    const int cr = cell / cols8, cc = cell % cols8;
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) {
            const double sy = (r + 0.5) * 1.25 - 0.5;
            const double sx = (c + 0.5) * 1.25 - 0.5;
            const int y0 = int(sy), x0 = int(sx);
            const double fy = sy - y0, fx = sx - x0;
            const int y1 = std::min(y0 + 1, 9), x1 = std::min(x0 + 1, 9);
            const double v = (1 - fy) * ((1 - fx) * patch[y0 * 10 + x0] + fx * patch[y0 * 10 + x1]) +
                             fy * ((1 - fx) * patch[y1 * 10 + x0] + fx * patch[y1 * 10 + x1]);
            out->at(8 * cr + r, 8 * cc + c) = clamp01(v);
        }
}

}  // namespace

MimForward XoftrModel::forward_mim(const ImagePair& pair, SeededStream& mask_rng) const {
    if (!pair.image_a.same_dims(pair.image_b))
        throw ValidationError("masked pre-training needs an aligned pair (equal dimensions)");
    MimForward out;
    const int patch = 64;
    out.mask = sample_mask_pair(pair.image_a.rows, pair.image_a.cols, pair.image_b.rows,
                                pair.image_b.cols, cfg_.mask_ratio, patch, mask_rng);

    const Grid masked_a = apply_patch_mask(pair.image_a, out.mask.mask_a, out.mask.prows_a,
                                           out.mask.pcols_a, patch);
    const Grid masked_b = apply_patch_mask(pair.image_b, out.mask.mask_b, out.mask.prows_b,
                                           out.mask.pcols_b, patch);

    FeaturePyramid pyr_a = backbone_.extract(masked_a, pair.mask_a);
    FeaturePyramid pyr_b = backbone_.extract(masked_b, pair.mask_b);
    tokenize_pyramid(&pyr_a, out.mask.mask_a, out.mask.prows_a, out.mask.pcols_a, patch,
                     mim_tokens_);
    tokenize_pyramid(&pyr_b, out.mask.mask_b, out.mask.prows_b, out.mask.pcols_b, patch,
                     mim_tokens_);

    const int h = pyr_a.f_coarse.dim(1), w = pyr_a.f_coarse.dim(2);
    std::vector<double> mask_tok_a = pyr_a.validity_coarse.v;
    std::vector<double> mask_tok_b = pyr_b.validity_coarse.v;
    Tensor ta = tokens_with_pe(pyr_a.f_coarse);
    Tensor tb = tokens_with_pe(pyr_b.f_coarse);
    auto [fa_hat, fb_hat] = matcher_.refine(ta, tb, mask_tok_a, mask_tok_b);
    Tensor fused_a = fuser_(tokens_to_map(fa_hat, h, w), pyr_a.f_coarse);
    Tensor fused_b = fuser_(tokens_to_map(fb_hat, h, w), pyr_b.f_coarse);

    // Reconstruction windows over every cell masked in either image; the pair
    // is co-registered, so cell i of A corresponds to cell i of B.
    std::vector<int> cells_a = masked_coarse_cells(out.mask.mask_a, out.mask.prows_a,
                                                   out.mask.pcols_a, patch, w);
    std::vector<int> cells_b = masked_coarse_cells(out.mask.mask_b, out.mask.prows_b,
                                                   out.mask.pcols_b, patch, w);
    std::vector<int> cells;
    std::set_union(cells_a.begin(), cells_a.end(), cells_b.begin(), cells_b.end(),
                   std::back_inserter(cells));

    out.recon_a = pair.image_a;
    out.recon_b = pair.image_b;
    if (cells.empty()) {
        out.loss = Tensor::scalar(0.0);
        return out;
    }

    CoarseMatchSet windows;
    windows.rows_a = windows.rows_b = h;
    windows.cols_a = windows.cols_b = w;
    for (int c : cells) {
        CoarseMatch m;
        m.i = m.j = c;
        m.confidence = 1.0;
        m.source = MatchSource::Both;
        windows.matches.push_back(m);
    }

    WindowBundle bundle = crop_match_windows(windows, fused_a, fused_b, pyr_a.f_mid, pyr_b.f_mid,
                                             pyr_a.f_fine, pyr_b.f_fine);
    FineDecoder::Result dec = decoder_.decode(bundle);
    auto [patches_a, patches_b] = project_patches(mim_head_, dec.fa5, dec.fb5);

    std::vector<uint8_t> sel_a(cells.size(), 0), sel_b(cells.size(), 0);
    for (size_t i = 0; i < cells.size(); ++i) {
        sel_a[i] = std::binary_search(cells_a.begin(), cells_a.end(), cells[i]) ? 1 : 0;
        sel_b[i] = std::binary_search(cells_b.begin(), cells_b.end(), cells[i]) ? 1 : 0;
    }

    const MimPlacement placement = cfg_.mim_placement == "overlap" ? MimPlacement::kOverlap
                                                                   : MimPlacement::kResample;
    out.loss = mim_loss(patches_a, patches_b, cells, sel_a, sel_b, pair.image_a, pair.image_b, w,
                        w, placement);

    for (size_t i = 0; i < cells.size(); ++i) {
        if (sel_a[i]) paint_cell(&out.recon_a, patches_a.data() + i * 100, cells[i], w);
        if (sel_b[i]) paint_cell(&out.recon_b, patches_b.data() + i * 100, cells[i], w);
    }
    return out;
}

// --- checkpoint i/o ---------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'X', 'F', 'C', 'K', 'P', 'T', '0', '1'};

void write_bytes(FILE* f, const void* p, size_t n, const std::string& path) {
    if (std::fwrite(p, 1, n, f) != n) throw InputError("short write to checkpoint: " + path);
}

void read_bytes(FILE* f, void* p, size_t n, const std::string& path) {
    if (std::fread(p, 1, n, f) != n) throw InputError("truncated checkpoint: " + path);
}

void write_u64(FILE* f, uint64_t v, const std::string& path) { write_bytes(f, &v, 8, path); }

uint64_t read_u64(FILE* f, const std::string& path) {
    uint64_t v = 0;
    read_bytes(f, &v, 8, path);
    return v;
}

void write_str(FILE* f, const std::string& s, const std::string& path) {
    write_u64(f, s.size(), path);
    write_bytes(f, s.data(), s.size(), path);
}

std::string read_str(FILE* f, const std::string& path) {
    const uint64_t n = read_u64(f, path);
    if (n > (1ull << 20)) throw InputError("corrupt checkpoint (oversized string): " + path);
    std::string s(n, '\0');
    read_bytes(f, s.data(), n, path);
    return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& ps,
                     const std::string& fingerprint) {
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw InputError("cannot write checkpoint: " + path);
    try {
        write_bytes(f, kMagic, 8, path);
        write_str(f, fingerprint, path);
        write_u64(f, ps.names().size(), path);
        for (const std::string& name : ps.names()) {
            Tensor t = ps.get(name);
            write_str(f, name, path);
            write_u64(f, t.rank(), path);
            for (int i = 0; i < t.rank(); ++i) write_u64(f, uint64_t(t.dim(i)), path);
            write_bytes(f, t.data(), sizeof(double) * t.numel(), path);
        }
    } catch (...) {
        std::fclose(f);
        throw;
    }
    std::fclose(f);
}

void load_checkpoint(const std::string& path, ParamStore& ps, const std::string& fingerprint) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw InputError("cannot read checkpoint: " + path);
    try {
        char magic[8];
        read_bytes(f, magic, 8, path);
        if (std::memcmp(magic, kMagic, 8) != 0)
            throw InputError("not a checkpoint file: " + path);
        const std::string saved = read_str(f, path);
        if (saved != fingerprint)
            throw InputError("checkpoint layout mismatch: file has '" + saved +
                             "', model expects '" + fingerprint + "'");
        const uint64_t n = read_u64(f, path);
        if (n != ps.names().size())
            throw InputError("checkpoint parameter count " + std::to_string(n) +
                             " differs from model's " + std::to_string(ps.names().size()));
        for (uint64_t i = 0; i < n; ++i) {
            const std::string name = read_str(f, path);
            const uint64_t rank = read_u64(f, path);
            Shape shape(rank);
            for (auto& d : shape) d = int(read_u64(f, path));
            if (!ps.has(name))
                throw InputError("checkpoint parameter '" + name + "' not in model");
            Tensor t = ps.get(name);
            if (t.shape() != shape)
                throw InputError("checkpoint parameter '" + name + "' has shape " +
                                 shape_str(shape) + ", model expects " + shape_str(t.shape()));
            read_bytes(f, t.data(), sizeof(double) * t.numel(), path);
        }
    } catch (...) {
        std::fclose(f);
        throw;
    }
    std::fclose(f);
}

}  // namespace xoftr
