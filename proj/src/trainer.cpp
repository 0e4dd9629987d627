#include "xoftr/trainer.hpp"

#include <algorithm>
#include <numeric>

namespace xoftr {

CoarseMatchSet gt_windows_for_training(const CoarseGT& gt, int cap, SeededStream& rng) {
    CoarseMatchSet set;
    set.rows_a = gt.rows_a;
    set.cols_a = gt.cols_a;
    set.rows_b = gt.rows_b;
    set.cols_b = gt.cols_b;
    std::vector<int> order(gt.positives.size());
    std::iota(order.begin(), order.end(), 0);
    if (int(order.size()) > cap) {
        rng.shuffle(order);
        order.resize(cap);
        std::sort(order.begin(), order.end());
    }
    for (int k : order) {
        CoarseMatch m;
        m.i = gt.positives[k].first;
        m.j = gt.positives[k].second;
        m.confidence = 1.0;
        m.source = MatchSource::Both;
        set.matches.push_back(m);
    }
    return set;
}

Trainer::Trainer(XoftrModel& model, const RunConfig& cfg)
    : model_(model),
      cfg_(cfg),
      adam_(model.params().all(), cfg.learning_rate),
      rng_(cfg.seed ^ 0xd1b54a32d192ed03ull) {
    adam_.zero_grad();
}

void Trainer::apply_batch() {
    if (pending_ == 0) return;
    if (cfg_.grad_clip > 0.0) adam_.clip_grad_norm(cfg_.grad_clip);
    adam_.step();
    adam_.zero_grad();
    pending_ = 0;
}

FinetuneStats Trainer::finetune_step(const ImagePair& pair) {
    FinetuneStats stats;
    if (!pair.has_geometry)
        throw ValidationError("fine-tuning requires pair geometry (poses, intrinsics, depth)");

    const CoarseGT gt = build_coarse_gt(pair);
    stats.gt_positives = int(gt.positives.size());
    if (gt.positives.empty()) {
        stats.skipped = true;
        return stats;
    }

    const CoarseMatchSet windows = gt_windows_for_training(gt, cfg_.max_fine_windows, rng_);
    stats.windows = int(windows.matches.size());

    TrainForward fwd = model_.forward_training(pair, windows);
    const LossWeights weights = cfg_.loss_weights();

    Tensor l_c = coarse_loss(fwd.cprobs.p0, fwd.cprobs.p1, gt, weights);

    Tensor l_f = Tensor::scalar(0.0);
    Tensor l_sub = Tensor::scalar(0.0);
    if (!fwd.fine.matches.empty()) {
        const std::vector<FineGTEntry> fine_gt = build_fine_gt(pair, windows);
        l_f = fine_loss(fwd.p_f, fine_gt, weights);
        const Mat3 e = essential_from_poses(pair.pose_a, pair.pose_b);
        l_sub = subpixel_loss(fwd.pa, fwd.pb, e, pair.k_a, pair.k_b);
    }

    Tensor loss = total_loss(l_c, l_f, l_sub, weights);
    stats.total = loss.item();
    stats.coarse = l_c.item();
    stats.fine = l_f.item();
    stats.subpixel = l_sub.item();

    // Scale so the summed gradient over a batch is the batch mean.
    mul_scalar(loss, 1.0 / cfg_.batch_size).backward();
    if (++pending_ >= cfg_.batch_size) apply_batch();
    return stats;
}

double Trainer::pretrain_step(const ImagePair& pair) {
    MimForward fwd = model_.forward_mim(pair, rng_);
    const double value = fwd.loss.item();
    fwd.loss.backward();
    if (cfg_.grad_clip > 0.0) adam_.clip_grad_norm(cfg_.grad_clip);
    adam_.step();
    adam_.zero_grad();
    pending_ = 0;
    return value;
}

void Trainer::flush() { apply_batch(); }

}  // namespace xoftr
