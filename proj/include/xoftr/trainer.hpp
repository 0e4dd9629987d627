#pragma once

#include "xoftr/model.hpp"
#include "xoftr/supervision.hpp"

namespace xoftr {

struct FinetuneStats {
    double total = 0.0, coarse = 0.0, fine = 0.0, subpixel = 0.0;
    int gt_positives = 0;  // coarse ground-truth pairs for this sample
    int windows = 0;       // fine windows decoded
    bool skipped = false;  // no usable ground truth
};

/// Adam-based training driver. Fine-tuning supervises the fine stage on
/// ground-truth coarse cells (the predicted set is empty or unreliable early
/// in training) while the coarse stage learns from the dual-softmax loss;
/// sub-pixel picks are unthresholded argmaxes so every window contributes.
/// Gradients accumulate across `batch_size` samples per optimizer step.
class Trainer {
public:
    Trainer(XoftrModel& model, const RunConfig& cfg);

    /// One fine-tuning sample (requires pair geometry). Steps the optimizer
    /// at batch boundaries.
    FinetuneStats finetune_step(const ImagePair& pair);

    /// One masked-reconstruction pre-training sample (aligned pair); steps
    /// the optimizer immediately. Returns the loss value.
    double pretrain_step(const ImagePair& pair);

    /// Apply any accumulated partial batch (call at epoch end).
    void flush();

    Adam& optimizer() { return adam_; }

private:
    void apply_batch();

    XoftrModel& model_;
    RunConfig cfg_;
    Adam adam_;
    SeededStream rng_;
    int pending_ = 0;
};

/// Ground-truth positives as a coarse match set, subsampled to `cap` windows
/// (seeded) when larger; result sorted by (i, j) for determinism.
CoarseMatchSet gt_windows_for_training(const CoarseGT& gt, int cap, SeededStream& rng);

}  // namespace xoftr
