#include "xoftr/cli.hpp"

#include "xoftr/augment.hpp"
#include "xoftr/config.hpp"
#include "xoftr/data_io.hpp"
#include "xoftr/evalkit.hpp"
#include "xoftr/model.hpp"
#include "xoftr/toybench.hpp"
#include "xoftr/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace xoftr {

namespace {

namespace fs = std::filesystem;

const char kUsage[] =
    "usage: xoftr <subcommand> [options]\n"
    "subcommands:\n"
    "  pretrain          masked-reconstruction pre-training on aligned pairs\n"
    "                    --out DIR (--data DIR | --toy N) [--steps N] [--preview-every N]\n"
    "  finetune          matcher training on posed pairs or the synthetic benchmark\n"
    "                    --out DIR (--data DIR | --toy N) [--weights CKPT]\n"
    "  match             match one image pair\n"
    "                    --pair IMG_A IMG_B --weights CKPT --out FILE\n"
    "  eval-pose         relative-pose benchmark over a directory of match files\n"
    "                    --matches DIR --gt FILE --out FILE\n"
    "  eval-homography   homography benchmark over a directory of match files\n"
    "                    --matches DIR --gt FILE --out FILE\n"
    "  augment-preview   contact sheet of pseudo-thermal variants\n"
    "                    --input IMG --out IMG [--grid RxC]\n"
    "common options: --config FILE, --seed N, ablation switches (--no-pretrain,\n"
    "--no-augment, --one-to-one-only, --no-sprm, --no-theta-f, --no-positional-bias),\n"
    "and any config key as --<key-with-dashes> VALUE (e.g. --theta-c 0.5).\n";

int usage_error(const std::string& msg) {
    std::fprintf(stderr, "error: %s\n%s", msg.c_str(), kUsage);
    return 2;
}

struct ParsedArgs {
    std::string config_file;
    ConfigOverrides overrides;
    std::map<std::string, std::string> opt;  // CLI-only options
    std::vector<std::string> pair_paths;     // --pair A B
};

/// Ablation switches and their config effect.
const std::map<std::string, std::pair<std::string, std::string>>& ablation_flags() {
    static const std::map<std::string, std::pair<std::string, std::string>> m = {
        {"no-pretrain", {"use_pretrain", "false"}},
        {"no-augment", {"use_augment", "false"}},
        {"one-to-one-only", {"one_to_one_only", "true"}},
        {"no-sprm", {"use_sprm", "false"}},
        {"no-theta-f", {"use_theta_f", "false"}},
        {"no-positional-bias", {"use_positional_bias", "false"}},
    };
    return m;
}

std::string underscored(const std::string& s) {
    std::string r = s;
    std::replace(r.begin(), r.end(), '-', '_');
    return r;
}

/// Returns -1 on success, else the exit code.
int parse_args(const std::vector<std::string>& args, size_t start,
               const std::set<std::string>& cli_opts, ParsedArgs* out) {
    for (size_t i = start; i < args.size(); ++i) {
        const std::string& arg = args[i];
        if (arg.rfind("--", 0) != 0) return usage_error("unexpected argument '" + arg + "'");
        const std::string name = arg.substr(2);
        auto need_value = [&](const char* what) -> bool {
            if (i + 1 < args.size()) return true;
            usage_error("flag '--" + name + "' needs " + what);
            return false;
        };
        if (const auto it = ablation_flags().find(name); it != ablation_flags().end()) {
            out->overrides.push_back(it->second);
        } else if (name == "config") {
            if (!need_value("a file path")) return 2;
            out->config_file = args[++i];
        } else if (name == "pair") {
            if (i + 2 >= args.size()) return usage_error("flag '--pair' needs two image paths");
            out->pair_paths = {args[i + 1], args[i + 2]};
            i += 2;
        } else if (name == "steps") {
            if (!need_value("a value")) return 2;
            out->overrides.emplace_back("pretrain_steps", args[++i]);
        } else if (cli_opts.count(name)) {
            if (!need_value("a value")) return 2;
            out->opt[name] = args[++i];
        } else if (is_config_key(underscored(name))) {
            if (!need_value("a value")) return 2;
            out->overrides.emplace_back(underscored(name), args[++i]);
        } else {
            return usage_error("unknown flag '--" + name + "'");
        }
    }
    return -1;
}

void ensure_parent_dir(const std::string& path) {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

void write_text_file(const std::string& path, const std::string& content) {
    ensure_parent_dir(path);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write file: " + path);
    out << content;
}

/// Resolved-config snapshot next to an artifact: <artifact>.config for files,
/// <dir>/resolved_config.txt for directories.
void write_snapshot_for_file(const std::string& artifact, const RunConfig& cfg) {
    write_text_file(artifact + ".config", serialize_config(cfg));
}

void write_snapshot_for_dir(const std::string& dir, const RunConfig& cfg) {
    fs::create_directories(dir);
    write_text_file((fs::path(dir) / "resolved_config.txt").string(), serialize_config(cfg));
}

Grid contact_sheet(const std::vector<Grid>& cells, int rows, int cols, int sep = 2) {
    int ch = 0, cw = 0;
    for (const Grid& g : cells) {
        ch = std::max(ch, g.rows);
        cw = std::max(cw, g.cols);
    }
    Grid sheet(rows * ch + (rows - 1) * sep, cols * cw + (cols - 1) * sep, 1.0);
    for (int k = 0; k < int(cells.size()) && k < rows * cols; ++k) {
        const int r0 = (k / cols) * (ch + sep), c0 = (k % cols) * (cw + sep);
        for (int r = 0; r < cells[k].rows; ++r)
            for (int c = 0; c < cells[k].cols; ++c)
                sheet.at(r0 + r, c0 + c) = cells[k].at(r, c);
    }
    return sheet;
}

/// Aligned pair ready for masked pre-training: dims padded to the 64-pixel
/// patch grid, with content masks.
ImagePair load_aligned_pair(const std::string& vis_path, const std::string& tir_path,
                            int resize_limit, const std::string& id) {
    Grid a = load_image_gray(vis_path);
    Grid b = load_image_gray(tir_path);
    if (resize_limit > 0) {
        auto resize_to_limit = [&](const Grid& g) {
            const int longer = std::max(g.rows, g.cols);
            if (longer <= resize_limit) return g;
            const double s = double(resize_limit) / longer;
            return resize_bilinear(g, std::max(1, int(std::lround(g.rows * s))),
                                   std::max(1, int(std::lround(g.cols * s))));
        };
        a = resize_to_limit(a);
        b = resize_to_limit(b);
    }
    if (a.rows != b.rows || a.cols != b.cols)
        throw ValidationError("aligned pair has mismatched dimensions: " + id);
    ImagePair pair;
    pair.image_a = pad_to_multiple(a, 64, &pair.mask_a);
    pair.image_b = pad_to_multiple(b, 64, &pair.mask_b);
    pair.pair_id = id;
    return pair;
}

ImagePair make_toy_aligned_pair(const RunConfig& cfg, uint64_t index) {
    const uint64_t seed = cfg.seed * 1000003ull + index;
    const Grid tex = make_toy_texture(128, 128, seed);
    const Grid thermal = augment_pipeline_gray(tex, seed ^ 0x5851f42d4c957f2dull,
                                               cfg.augment_params());
    ImagePair pair;
    pair.image_a = tex;
    pair.image_b = thermal;
    pair.mask_a = Grid(128, 128, 1.0);
    pair.mask_b = Grid(128, 128, 1.0);
    pair.pair_id = "toy_aligned_" + std::to_string(index);
    return pair;
}

int parse_positive_int(const std::string& flag, const std::string& v, int* out) {
    char* end = nullptr;
    const long r = std::strtol(v.c_str(), &end, 10);
    if (v.empty() || end != v.c_str() + v.size() || r <= 0)
        return usage_error("flag '--" + flag + "' needs a positive integer, got '" + v + "'");
    *out = int(r);
    return -1;
}

// --- subcommands -------------------------------------------------------------

int cmd_pretrain(const ParsedArgs& pa, const RunConfig& cfg) {
    const auto out_it = pa.opt.find("out");
    if (out_it == pa.opt.end()) return usage_error("pretrain needs --out DIR");
    const std::string out_dir = out_it->second;

    std::vector<ImagePair> pairs;
    if (const auto it = pa.opt.find("toy"); it != pa.opt.end()) {
        int n = 0;
        if (int rc = parse_positive_int("toy", it->second, &n); rc != -1) return rc;
        for (int i = 0; i < n; ++i) pairs.push_back(make_toy_aligned_pair(cfg, i));
    } else if (const auto dit = pa.opt.find("data"); dit != pa.opt.end()) {
        for (const PairDescriptor& d : scan_dataset(dit->second, "aligned"))
            pairs.push_back(load_aligned_pair(d.image_a, d.image_b, cfg.resize_limit, d.pair_id));
    } else {
        return usage_error("pretrain needs --data DIR or --toy N");
    }
    if (pairs.empty()) throw InputError("no aligned pairs to pre-train on");

    int preview_every = 0;
    if (const auto it = pa.opt.find("preview-every"); it != pa.opt.end())
        if (int rc = parse_positive_int("preview-every", it->second, &preview_every); rc != -1)
            return rc;

    write_snapshot_for_dir(out_dir, cfg);
    XoftrModel model(cfg);
    Trainer trainer(model, cfg);

    auto write_preview = [&](int step, const ImagePair& pair) {
        SeededStream preview_rng(cfg.seed ^ uint64_t(step) ^ 0xfeedfacecafef00dull);
        const MimForward fwd = model.forward_mim(pair, preview_rng);
        const Grid masked_a = apply_patch_mask(pair.image_a, fwd.mask.mask_a, fwd.mask.prows_a,
                                               fwd.mask.pcols_a, fwd.mask.patch);
        const Grid masked_b = apply_patch_mask(pair.image_b, fwd.mask.mask_b, fwd.mask.prows_b,
                                               fwd.mask.pcols_b, fwd.mask.patch);
        const Grid sheet = contact_sheet(
            {pair.image_a, masked_a, fwd.recon_a, pair.image_b, masked_b, fwd.recon_b}, 2, 3);
        char name[64];
        std::snprintf(name, sizeof name, "recon_%06d.png", step);
        save_image_gray((fs::path(out_dir) / name).string(), sheet);
    };

    double running = 0.0;
    for (int step = 1; step <= cfg.pretrain_steps; ++step) {
        const ImagePair& pair = pairs[size_t(step - 1) % pairs.size()];
        running += trainer.pretrain_step(pair);
        if (step % 50 == 0 || step == cfg.pretrain_steps) {
            std::printf("step %d/%d  mean masked mse %.6f\n", step, cfg.pretrain_steps,
                        running / std::min(step, 50));
            std::fflush(stdout);
            running = 0.0;
        }
        if (preview_every > 0 && step % preview_every == 0) write_preview(step, pairs[0]);
    }
    write_preview(cfg.pretrain_steps, pairs[0]);
    save_checkpoint((fs::path(out_dir) / "pretrain.ckpt").string(), model.params(),
                    model.fingerprint());
    std::printf("checkpoint: %s\n", (fs::path(out_dir) / "pretrain.ckpt").c_str());
    return 0;
}

int cmd_finetune(const ParsedArgs& pa, const RunConfig& cfg) {
    const auto out_it = pa.opt.find("out");
    if (out_it == pa.opt.end()) return usage_error("finetune needs --out DIR");
    const std::string out_dir = out_it->second;

    std::vector<ImagePair> pairs;
    std::vector<ToyPair> toy_pairs;
    if (const auto it = pa.opt.find("toy"); it != pa.opt.end()) {
        int n = 0;
        if (int rc = parse_positive_int("toy", it->second, &n); rc != -1) return rc;
        ToyParams tp;
        tp.augment = cfg.augment_params();
        for (int i = 0; i < n; ++i) {
            toy_pairs.push_back(make_toy_pair(tp, cfg.seed * 1000003ull + i, cfg.use_augment));
            pairs.push_back(toy_pairs.back().train);
        }
    } else if (const auto dit = pa.opt.find("data"); dit != pa.opt.end()) {
        for (const PairDescriptor& d : scan_dataset(dit->second, "posed")) {
            const PairMeta meta = load_meta(d);
            pairs.push_back(load_pair(d.image_a, d.image_b, &meta, cfg.resize_limit));
        }
    } else {
        return usage_error("finetune needs --data DIR or --toy N");
    }
    if (pairs.empty()) throw InputError("no pairs to train on");

    write_snapshot_for_dir(out_dir, cfg);
    XoftrModel model(cfg);
    if (const auto wit = pa.opt.find("weights"); wit != pa.opt.end() && cfg.use_pretrain)
        load_checkpoint(wit->second, model.params(), model.fingerprint());

    Trainer trainer(model, cfg);
    std::vector<int> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        SeededStream shuffle_rng(cfg.seed ^ (uint64_t(epoch) * 0x9e3779b97f4a7c15ull));
        shuffle_rng.shuffle(order);
        double total = 0.0;
        int counted = 0;
        for (int idx : order) {
            const FinetuneStats s = trainer.finetune_step(pairs[idx]);
            if (!s.skipped) {
                total += s.total;
                ++counted;
            }
        }
        trainer.flush();
        std::printf("epoch %d/%d  mean loss %.6f over %d pairs\n", epoch, cfg.epochs,
                    counted ? total / counted : 0.0, counted);
        std::fflush(stdout);
    }

    if (!toy_pairs.empty()) {
        const ToyEval ev = evaluate_toy(model, toy_pairs, 3.0);
        std::printf("toy benchmark: %d/%d matches within 3 px (%.1f%%)\n", ev.correct, ev.total,
                    100.0 * ev.rate());
    }
    save_checkpoint((fs::path(out_dir) / "model.ckpt").string(), model.params(),
                    model.fingerprint());
    std::printf("checkpoint: %s\n", (fs::path(out_dir) / "model.ckpt").c_str());
    return 0;
}

int cmd_match(const ParsedArgs& pa, const RunConfig& cfg) {
    if (pa.pair_paths.size() != 2) return usage_error("match needs --pair IMG_A IMG_B");
    const auto wit = pa.opt.find("weights");
    if (wit == pa.opt.end()) return usage_error("match needs --weights CKPT");
    const auto out_it = pa.opt.find("out");
    if (out_it == pa.opt.end()) return usage_error("match needs --out FILE");

    XoftrModel model(cfg);
    load_checkpoint(wit->second, model.params(), model.fingerprint());
    const ImagePair pair =
        load_pair(pa.pair_paths[0], pa.pair_paths[1], nullptr, cfg.resize_limit);
    const MatchResult res = model.match_pair(pair);
    ensure_parent_dir(out_it->second);
    write_matches(out_it->second, res.matches);
    write_snapshot_for_file(out_it->second, cfg);
    std::printf("%zu matches -> %s\n", res.matches.matches.size(), out_it->second.c_str());
    return 0;
}

std::vector<double> parse_line_doubles(std::istringstream& in, size_t n, const std::string& what) {
    std::vector<double> vals(n);
    for (size_t i = 0; i < n; ++i)
        if (!(in >> vals[i]))
            throw InputError("ground-truth line for " + what + " is short: expected " +
                             std::to_string(n) + " numbers");
    return vals;
}

int cmd_eval_pose(const ParsedArgs& pa, const RunConfig& cfg) {
    const auto mit = pa.opt.find("matches");
    const auto git = pa.opt.find("gt");
    const auto oit = pa.opt.find("out");
    if (mit == pa.opt.end() || git == pa.opt.end() || oit == pa.opt.end())
        return usage_error("eval-pose needs --matches DIR --gt FILE --out FILE");

    std::ifstream gt(git->second);
    if (!gt) throw InputError("cannot read ground-truth file: " + git->second);
    std::vector<PoseErrorRecord> records;
    std::string line;
    while (std::getline(gt, line)) {
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::istringstream in(line);
        std::string pair_id;
        if (!(in >> pair_id)) continue;
        const std::vector<double> v = parse_line_doubles(in, 50, pair_id);
        Mat3 k_a, k_b;
        Mat4 pose_a, pose_b;
        for (int i = 0; i < 9; ++i) k_a(i / 3, i % 3) = v[i];
        for (int i = 0; i < 9; ++i) k_b(i / 3, i % 3) = v[9 + i];
        for (int i = 0; i < 16; ++i) pose_a(i / 4, i % 4) = v[18 + i];
        for (int i = 0; i < 16; ++i) pose_b(i / 4, i % 4) = v[34 + i];

        const std::string match_path = (fs::path(mit->second) / (pair_id + ".txt")).string();
        PoseErrorRecord rec;
        rec.pair_id = pair_id;
        try {
            const SubpixelMatches matches = read_matches(match_path);
            const RelativePose est = estimate_relative_pose(matches, k_a, k_b, 1.5, cfg.seed);
            if (est.ok) {
                const Mat4 rel = pose_a * pose_b.inverse();
                rec = pose_angular_error(est.rotation, est.translation, rel.block<3, 3>(0, 0),
                                         rel.block<3, 1>(0, 3));
                rec.pair_id = pair_id;
                rec.inlier_count = est.inliers;
            } else {
                rec.rotation_error_deg = rec.translation_error_deg = rec.pose_error_deg = 180.0;
            }
        } catch (const Error&) {
            rec.rotation_error_deg = rec.translation_error_deg = rec.pose_error_deg = 180.0;
        }
        records.push_back(rec);
    }
    if (records.empty()) throw InputError("ground-truth file lists no pairs: " + git->second);
    ensure_parent_dir(oit->second);
    write_pose_report(oit->second, records, {5.0, 10.0, 20.0});
    write_snapshot_for_file(oit->second, cfg);
    std::printf("pose report over %zu pairs -> %s\n", records.size(), oit->second.c_str());
    return 0;
}

int cmd_eval_homography(const ParsedArgs& pa, const RunConfig& cfg) {
    const auto mit = pa.opt.find("matches");
    const auto git = pa.opt.find("gt");
    const auto oit = pa.opt.find("out");
    if (mit == pa.opt.end() || git == pa.opt.end() || oit == pa.opt.end())
        return usage_error("eval-homography needs --matches DIR --gt FILE --out FILE");

    std::ifstream gt(git->second);
    if (!gt) throw InputError("cannot read ground-truth file: " + git->second);
    std::vector<std::string> ids;
    std::vector<double> errors;
    std::string line;
    while (std::getline(gt, line)) {
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::istringstream in(line);
        std::string pair_id;
        if (!(in >> pair_id)) continue;
        const std::vector<double> v = parse_line_doubles(in, 11, pair_id);
        const int width = int(v[0]), height = int(v[1]);
        Mat3 h_ref;
        for (int i = 0; i < 9; ++i) h_ref(i / 3, i % 3) = v[2 + i];

        const std::string match_path = (fs::path(mit->second) / (pair_id + ".txt")).string();
        double err = std::numeric_limits<double>::infinity();
        try {
            const SubpixelMatches matches = read_matches(match_path);
            bool ok = false;
            const Mat3 h_est = estimate_homography(matches, 3.0, cfg.seed, &ok);
            if (ok) err = corner_error(h_est, h_ref, width, height);
        } catch (const Error&) {
        }
        ids.push_back(pair_id);
        errors.push_back(err);
    }
    if (ids.empty()) throw InputError("ground-truth file lists no pairs: " + git->second);
    ensure_parent_dir(oit->second);
    write_homography_report(oit->second, ids, errors, {3.0, 5.0, 10.0});
    write_snapshot_for_file(oit->second, cfg);
    std::printf("homography report over %zu pairs -> %s\n", ids.size(), oit->second.c_str());
    return 0;
}

int cmd_augment_preview(const ParsedArgs& pa, const RunConfig& cfg) {
    const auto iit = pa.opt.find("input");
    const auto oit = pa.opt.find("out");
    if (iit == pa.opt.end() || oit == pa.opt.end())
        return usage_error("augment-preview needs --input IMG --out IMG");

    int rows = 3, cols = 3;
    if (const auto git = pa.opt.find("grid"); git != pa.opt.end()) {
        const size_t x = git->second.find('x');
        if (x == std::string::npos)
            return usage_error("flag '--grid' expects RxC, got '" + git->second + "'");
        if (int rc = parse_positive_int("grid", git->second.substr(0, x), &rows); rc != -1)
            return rc;
        if (int rc = parse_positive_int("grid", git->second.substr(x + 1), &cols); rc != -1)
            return rc;
    }

    const ImageRGB rgb = load_image_rgb(iit->second);
    const AugmentParams params = cfg.augment_params();
    std::vector<Grid> cells;
    for (int k = 0; k < rows * cols; ++k)
        cells.push_back(augment_pipeline(rgb, cfg.seed + uint64_t(k), params));
    ensure_parent_dir(oit->second);
    save_image_gray(oit->second, contact_sheet(cells, rows, cols));
    write_snapshot_for_file(oit->second, cfg);
    std::printf("%dx%d contact sheet -> %s\n", rows, cols, oit->second.c_str());
    return 0;
}

}  // namespace

int run_command(const std::vector<std::string>& args) {
    if (args.empty()) return usage_error("missing subcommand");
    const std::string& cmd = args[0];

    static const std::map<std::string, std::set<std::string>> cli_opts = {
        {"pretrain", {"out", "data", "toy", "preview-every"}},
        {"finetune", {"out", "data", "toy", "weights"}},
        {"match", {"out", "weights"}},
        {"eval-pose", {"matches", "gt", "out"}},
        {"eval-homography", {"matches", "gt", "out"}},
        {"augment-preview", {"input", "out", "grid"}},
    };
    const auto cit = cli_opts.find(cmd);
    if (cit == cli_opts.end()) return usage_error("unknown subcommand '" + cmd + "'");

    ParsedArgs pa;
    if (int rc = parse_args(args, 1, cit->second, &pa); rc != -1) return rc;

    try {
        const RunConfig cfg = resolve_config(pa.config_file, pa.overrides);
        if (cmd == "pretrain") return cmd_pretrain(pa, cfg);
        if (cmd == "finetune") return cmd_finetune(pa, cfg);
        if (cmd == "match") return cmd_match(pa, cfg);
        if (cmd == "eval-pose") return cmd_eval_pose(pa, cfg);
        if (cmd == "eval-homography") return cmd_eval_homography(pa, cfg);
        if (cmd == "augment-preview") return cmd_augment_preview(pa, cfg);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return usage_error("unknown subcommand '" + cmd + "'");
}

}  // namespace xoftr
