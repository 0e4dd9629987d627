#include "xoftr/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace xoftr {

namespace {

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(uint8_t(s[b]))) ++b;
    while (e > b && std::isspace(uint8_t(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

[[noreturn]] void bad_type(const std::string& key, const char* expected, const std::string& got) {
    throw InputError("config key '" + key + "' expects " + expected + ", got '" + got + "'");
}

int parse_int(const std::string& key, const std::string& v) {
    char* end = nullptr;
    long r = std::strtol(v.c_str(), &end, 10);
    if (v.empty() || end != v.c_str() + v.size()) bad_type(key, "an integer", v);
    return int(r);
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
    char* end = nullptr;
    unsigned long long r = std::strtoull(v.c_str(), &end, 10);
    if (v.empty() || end != v.c_str() + v.size()) bad_type(key, "an unsigned integer", v);
    return uint64_t(r);
}

double parse_double(const std::string& key, const std::string& v) {
    char* end = nullptr;
    double r = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size()) bad_type(key, "a number", v);
    return r;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    bad_type(key, "a boolean (true/false/1/0)", v);
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

AugmentParams RunConfig::augment_params() const {
    AugmentParams p;
    p.w0 = aug_w0;
    p.w_r = aug_w_r;
    p.theta_r = aug_theta_r;
    p.hue_range = aug_hue_range;
    p.sat_lo = aug_sat_lo;
    p.sat_hi = aug_sat_hi;
    p.val_lo = aug_val_lo;
    p.val_hi = aug_val_hi;
    p.blur_kernel = aug_blur_kernel;
    p.blur_sigma = aug_blur_sigma;
    p.blur_probability = aug_blur_probability;
    return p;
}

LossWeights RunConfig::loss_weights() const {
    LossWeights w;
    w.lambda_c = lambda_c;
    w.lambda_f = lambda_f;
    w.lambda_sub = lambda_sub;
    w.focal_alpha = focal_alpha;
    w.focal_gamma = focal_gamma;
    return w;
}

void RunConfig::validate() const {
    if (profile != "toy" && profile != "paper")
        throw ValidationError("profile must be 'toy' or 'paper', got '" + profile + "'");
    if (c2 <= 0 || c4 <= 0 || c8 <= 0) throw ValidationError("feature widths must be positive");
    if (c8 % 4 != 0) throw ValidationError("c8 must be divisible by 4 (sin/cos positional pairs)");
    if (c8 % heads != 0 || c4 % heads != 0 || c2 % heads != 0)
        throw ValidationError("feature widths must be divisible by the head count");
    if (coarse_layers <= 0 || heads <= 0 || backbone_blocks <= 0 || subpixel_hidden <= 0)
        throw ValidationError("model depth settings must be positive");
    if (tau <= 0.0) throw ValidationError("tau must be positive");
    if (theta_c < 0.0 || theta_c > 1.0 || theta_f < 0.0 || theta_f > 1.0)
        throw ValidationError("confidence thresholds must lie in [0,1]");
    if (learning_rate <= 0.0) throw ValidationError("learning_rate must be positive");
    if (batch_size <= 0 || epochs <= 0 || pretrain_steps <= 0 || max_fine_windows <= 0)
        throw ValidationError("schedule settings must be positive");
    if (mask_ratio < 0.0 || mask_ratio > 1.0)
        throw ValidationError("mask_ratio must lie in [0,1]");
    if (mim_placement != "resample" && mim_placement != "overlap")
        throw ValidationError("mim_placement must be 'resample' or 'overlap'");
    if (grad_clip < 0.0) throw ValidationError("grad_clip must be nonnegative");
    if (resize_limit < 0) throw ValidationError("resize_limit must be nonnegative");
    augment_params().validate();
}

RunConfig default_config(const std::string& profile) {
    RunConfig c;  // the struct defaults are the toy profile
    if (profile == "toy") return c;
    if (profile == "paper") {
        c.profile = "paper";
        c.c2 = 64;
        c.c4 = 128;
        c.c8 = 256;
        c.coarse_layers = 4;
        c.heads = 8;
        c.backbone_blocks = 2;
        c.subpixel_hidden = 128;
        c.learning_rate = 1e-3;
        c.batch_size = 1;
        c.epochs = 30;
        c.pretrain_steps = 20000;
        c.max_fine_windows = 512;
        return c;
    }
    throw InputError("unknown profile '" + profile + "' (expected 'toy' or 'paper')");
}

void apply_config_entry(RunConfig* cfg, const std::string& key, const std::string& value) {
    RunConfig& c = *cfg;
    if (key == "profile") {
        c.profile = value;
        return;
    }
    if (key == "c2") c.c2 = parse_int(key, value);
    else if (key == "c4") c.c4 = parse_int(key, value);
    else if (key == "c8") c.c8 = parse_int(key, value);
    else if (key == "coarse_layers") c.coarse_layers = parse_int(key, value);
    else if (key == "heads") c.heads = parse_int(key, value);
    else if (key == "backbone_blocks") c.backbone_blocks = parse_int(key, value);
    else if (key == "subpixel_hidden") c.subpixel_hidden = parse_int(key, value);
    else if (key == "tau") c.tau = parse_double(key, value);
    else if (key == "theta_c") c.theta_c = parse_double(key, value);
    else if (key == "theta_f") c.theta_f = parse_double(key, value);
    else if (key == "lambda_c") c.lambda_c = parse_double(key, value);
    else if (key == "lambda_f") c.lambda_f = parse_double(key, value);
    else if (key == "lambda_sub") c.lambda_sub = parse_double(key, value);
    else if (key == "focal_alpha") c.focal_alpha = parse_double(key, value);
    else if (key == "focal_gamma") c.focal_gamma = parse_double(key, value);
    else if (key == "aug_w0") c.aug_w0 = parse_double(key, value);
    else if (key == "aug_w_r") c.aug_w_r = parse_double(key, value);
    else if (key == "aug_theta_r") c.aug_theta_r = parse_double(key, value);
    else if (key == "aug_hue_range") c.aug_hue_range = parse_double(key, value);
    else if (key == "aug_sat_lo") c.aug_sat_lo = parse_double(key, value);
    else if (key == "aug_sat_hi") c.aug_sat_hi = parse_double(key, value);
    else if (key == "aug_val_lo") c.aug_val_lo = parse_double(key, value);
    else if (key == "aug_val_hi") c.aug_val_hi = parse_double(key, value);
    else if (key == "aug_blur_kernel") c.aug_blur_kernel = parse_int(key, value);
    else if (key == "aug_blur_sigma") c.aug_blur_sigma = parse_double(key, value);
    else if (key == "aug_blur_probability") c.aug_blur_probability = parse_double(key, value);
    else if (key == "learning_rate") c.learning_rate = parse_double(key, value);
    else if (key == "batch_size") c.batch_size = parse_int(key, value);
    else if (key == "epochs") c.epochs = parse_int(key, value);
    else if (key == "pretrain_steps") c.pretrain_steps = parse_int(key, value);
    else if (key == "mask_ratio") c.mask_ratio = parse_double(key, value);
    else if (key == "mim_placement") c.mim_placement = value;
    else if (key == "max_fine_windows") c.max_fine_windows = parse_int(key, value);
    else if (key == "grad_clip") c.grad_clip = parse_double(key, value);
    else if (key == "resize_limit") c.resize_limit = parse_int(key, value);
    else if (key == "seed") c.seed = parse_u64(key, value);
    else if (key == "use_pretrain") c.use_pretrain = parse_bool(key, value);
    else if (key == "use_augment") c.use_augment = parse_bool(key, value);
    else if (key == "one_to_one_only") c.one_to_one_only = parse_bool(key, value);
    else if (key == "use_sprm") c.use_sprm = parse_bool(key, value);
    else if (key == "use_theta_f") c.use_theta_f = parse_bool(key, value);
    else if (key == "use_positional_bias") c.use_positional_bias = parse_bool(key, value);
    else throw InputError("unknown config key '" + key + "'");
}

ConfigOverrides parse_config_text(const std::string& text) {
    ConfigOverrides entries;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw InputError("config line " + std::to_string(lineno) +
                             " is not 'key = value': '" + line + "'");
        entries.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return entries;
}

RunConfig resolve_config(const std::string& file_path, const ConfigOverrides& flag_overrides) {
    ConfigOverrides file_entries;
    if (!file_path.empty()) {
        std::ifstream in(file_path);
        if (!in) throw InputError("cannot read config file: " + file_path);
        std::stringstream buf;
        buf << in.rdbuf();
        file_entries = parse_config_text(buf.str());
    }

    std::string profile = "toy";
    for (const auto& [k, v] : file_entries)
        if (k == "profile") profile = v;
    for (const auto& [k, v] : flag_overrides)
        if (k == "profile") profile = v;

    RunConfig cfg = default_config(profile);
    for (const auto& [k, v] : file_entries)
        if (k != "profile") apply_config_entry(&cfg, k, v);
    for (const auto& [k, v] : flag_overrides)
        if (k != "profile") apply_config_entry(&cfg, k, v);
    cfg.validate();
    return cfg;
}

std::string serialize_config(const RunConfig& c) {
    std::ostringstream out;
    out << "profile = " << c.profile << "\n";
    out << "c2 = " << c.c2 << "\n";
    out << "c4 = " << c.c4 << "\n";
    out << "c8 = " << c.c8 << "\n";
    out << "coarse_layers = " << c.coarse_layers << "\n";
    out << "heads = " << c.heads << "\n";
    out << "backbone_blocks = " << c.backbone_blocks << "\n";
    out << "subpixel_hidden = " << c.subpixel_hidden << "\n";
    out << "tau = " << fmt_double(c.tau) << "\n";
    out << "theta_c = " << fmt_double(c.theta_c) << "\n";
    out << "theta_f = " << fmt_double(c.theta_f) << "\n";
    out << "lambda_c = " << fmt_double(c.lambda_c) << "\n";
    out << "lambda_f = " << fmt_double(c.lambda_f) << "\n";
    out << "lambda_sub = " << fmt_double(c.lambda_sub) << "\n";
    out << "focal_alpha = " << fmt_double(c.focal_alpha) << "\n";
    out << "focal_gamma = " << fmt_double(c.focal_gamma) << "\n";
    out << "aug_w0 = " << fmt_double(c.aug_w0) << "\n";
    out << "aug_w_r = " << fmt_double(c.aug_w_r) << "\n";
    out << "aug_theta_r = " << fmt_double(c.aug_theta_r) << "\n";
    out << "aug_hue_range = " << fmt_double(c.aug_hue_range) << "\n";
    out << "aug_sat_lo = " << fmt_double(c.aug_sat_lo) << "\n";
    out << "aug_sat_hi = " << fmt_double(c.aug_sat_hi) << "\n";
    out << "aug_val_lo = " << fmt_double(c.aug_val_lo) << "\n";
    out << "aug_val_hi = " << fmt_double(c.aug_val_hi) << "\n";
    out << "aug_blur_kernel = " << c.aug_blur_kernel << "\n";
    out << "aug_blur_sigma = " << fmt_double(c.aug_blur_sigma) << "\n";
    out << "aug_blur_probability = " << fmt_double(c.aug_blur_probability) << "\n";
    out << "learning_rate = " << fmt_double(c.learning_rate) << "\n";
    out << "batch_size = " << c.batch_size << "\n";
    out << "epochs = " << c.epochs << "\n";
    out << "pretrain_steps = " << c.pretrain_steps << "\n";
    out << "mask_ratio = " << fmt_double(c.mask_ratio) << "\n";
    out << "mim_placement = " << c.mim_placement << "\n";
    out << "max_fine_windows = " << c.max_fine_windows << "\n";
    out << "grad_clip = " << fmt_double(c.grad_clip) << "\n";
    out << "resize_limit = " << c.resize_limit << "\n";
    out << "seed = " << c.seed << "\n";
    out << "use_pretrain = " << (c.use_pretrain ? "true" : "false") << "\n";
    out << "use_augment = " << (c.use_augment ? "true" : "false") << "\n";
    out << "one_to_one_only = " << (c.one_to_one_only ? "true" : "false") << "\n";
    out << "use_sprm = " << (c.use_sprm ? "true" : "false") << "\n";
    out << "use_theta_f = " << (c.use_theta_f ? "true" : "false") << "\n";
    out << "use_positional_bias = " << (c.use_positional_bias ? "true" : "false") << "\n";
    return out.str();
}

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = {
        "profile", "c2", "c4", "c8", "coarse_layers", "heads", "backbone_blocks",
        "subpixel_hidden", "tau", "theta_c", "theta_f", "lambda_c", "lambda_f", "lambda_sub",
        "focal_alpha", "focal_gamma", "aug_w0", "aug_w_r", "aug_theta_r", "aug_hue_range",
        "aug_sat_lo", "aug_sat_hi", "aug_val_lo", "aug_val_hi", "aug_blur_kernel",
        "aug_blur_sigma", "aug_blur_probability", "learning_rate", "batch_size", "epochs",
        "pretrain_steps", "mask_ratio", "mim_placement", "max_fine_windows", "grad_clip",
        "resize_limit", "seed", "use_pretrain", "use_augment", "one_to_one_only", "use_sprm",
        "use_theta_f", "use_positional_bias"};
    return keys;
}

bool is_config_key(const std::string& key) {
    const auto& keys = config_keys();
    return std::find(keys.begin(), keys.end(), key) != keys.end();
}

std::string config_fingerprint(const RunConfig& c) {
    std::ostringstream out;
    out << "layout-v1 c2=" << c.c2 << " c4=" << c.c4 << " c8=" << c.c8
        << " layers=" << c.coarse_layers << " heads=" << c.heads
        << " blocks=" << c.backbone_blocks << " hidden=" << c.subpixel_hidden;
    return out.str();
}

}  // namespace xoftr
