#pragma once

#include "xoftr/augment.hpp"
#include "xoftr/data_io.hpp"
#include "xoftr/model.hpp"

#include <vector>

namespace xoftr {

/// Synthetic cross-modal benchmark settings. Pairs view a textured fronto-
/// parallel plane from two cameras, so the ground truth is simultaneously a
/// homography (for reprojection scoring) and full pose + depth geometry (for
/// the training supervision) — both describe the same scene exactly.
struct ToyParams {
    int rows = 64, cols = 64;
    double focal = 64.0;
    double plane_depth = 5.0;
    double max_rot_deg = 8.0;
    double trans_frac = 0.12;      // translation bound, fraction of plane depth
    double min_trans_frac = 0.02;  // minimum baseline, fraction of plane depth
    double min_coverage = 0.7;     // required mutual image overlap
    AugmentParams augment;
};

struct ToyPair {
    ImagePair train;  // pseudo-thermal on one side when built with augmentation
    ImagePair eval;   // always cross-modal (pseudo-thermal on the coin-picked side)
    Mat3 gt_h;        // image-A pixels -> image-B pixels
    bool thermal_on_a = false;
};

/// Deterministic blobby texture with structure at several scales.
Grid make_toy_texture(int rows, int cols, uint64_t seed);

/// One synthetic pair. `augment_train` controls only the training view; the
/// evaluation view is always cross-modal so ablations compare on equal terms.
ToyPair make_toy_pair(const ToyParams& params, uint64_t seed, bool augment_train);

struct ToyEval {
    int total = 0;    // matches produced over all pairs
    int correct = 0;  // matches within the pixel threshold under gt_h
    double rate() const { return total == 0 ? 0.0 : double(correct) / total; }
};

/// Match every eval view and score reprojection error under the ground-truth
/// homography.
ToyEval evaluate_toy(const XoftrModel& model, const std::vector<ToyPair>& pairs,
                     double px_threshold);

}  // namespace xoftr
