#pragma once

#include "xoftr/augment.hpp"
#include "xoftr/common.hpp"
#include "xoftr/supervision.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace xoftr {

/// Every tunable of the pipeline in one flat structure. Two named profiles
/// bundle the width/schedule defaults: "toy" trains end-to-end on a CPU in
/// minutes, "paper" holds the full-scale defaults.
struct RunConfig {
    std::string profile = "toy";

    // model shape
    int c2 = 8, c4 = 16, c8 = 32;  // feature widths at 1/2, 1/4, 1/8 scale
    int coarse_layers = 2;         // interleaved self/cross block pairs
    int heads = 4;
    int backbone_blocks = 1;  // residual blocks per backbone stage
    int subpixel_hidden = 16;

    // matching
    double tau = 0.1;      // dual-softmax temperature, both stages
    double theta_c = 0.3;  // coarse confidence threshold
    double theta_f = 0.1;  // fine confidence threshold

    // loss
    double lambda_c = 0.5;
    double lambda_f = 0.3;
    double lambda_sub = 1e4;
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;

    // pseudo-thermal augmentation
    double aug_w0 = 2.0 * kPi / 3.0;
    double aug_w_r = kPi / 2.0;
    double aug_theta_r = kPi / 2.0;
    double aug_hue_range = 0.1;
    double aug_sat_lo = 0.7, aug_sat_hi = 1.3;
    double aug_val_lo = 0.7, aug_val_hi = 1.3;
    int aug_blur_kernel = 5;
    double aug_blur_sigma = 1.0;
    double aug_blur_probability = 0.5;

    // training schedule
    double learning_rate = 1e-3;
    int batch_size = 4;
    int epochs = 200;
    int pretrain_steps = 500;
    double mask_ratio = 0.5;           // masked-patch fraction for pre-training
    std::string mim_placement = "resample";  // or "overlap"
    int max_fine_windows = 48;         // training-time cap on fine windows per pair
    double grad_clip = 1.0;            // global-norm clip; 0 disables

    // evaluation / io
    int resize_limit = 640;  // longer image side; 0 disables resizing

    uint64_t seed = 0;

    // ablation switches
    bool use_pretrain = true;
    bool use_augment = true;
    bool one_to_one_only = false;
    bool use_sprm = true;
    bool use_theta_f = true;
    bool use_positional_bias = true;

    AugmentParams augment_params() const;
    LossWeights loss_weights() const;
    void validate() const;
};

using ConfigOverrides = std::vector<std::pair<std::string, std::string>>;

/// Width/schedule defaults for a named profile ("toy" or "paper").
RunConfig default_config(const std::string& profile);

/// Apply `key = value` text (unknown key / bad type -> error naming it).
void apply_config_entry(RunConfig* cfg, const std::string& key, const std::string& value);

/// Precedence: flag overrides > file entries > profile defaults. The profile
/// itself resolves first (from flags, else file, else "toy") and re-baselines
/// the defaults before the remaining entries apply. Empty path = no file.
RunConfig resolve_config(const std::string& file_path, const ConfigOverrides& flag_overrides);

/// Flat `key = value` text, one line per key; parses back to an equal config.
std::string serialize_config(const RunConfig& cfg);

/// Parse flat `key = value` text into override pairs (comments with '#').
ConfigOverrides parse_config_text(const std::string& text);

/// Identity of the parameter layout; checkpoints refuse to load when it
/// differs from the saving model's.
std::string config_fingerprint(const RunConfig& cfg);

/// All recognized config keys, in serialization order.
const std::vector<std::string>& config_keys();
bool is_config_key(const std::string& key);

}  // namespace xoftr
