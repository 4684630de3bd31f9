#ifndef __MSP_TRAINER_HPP__
#define __MSP_TRAINER_HPP__

#include <map>
#include <string>
#include <vector>

#include "msp/attention.hpp"
#include "msp/augmentation.hpp"
#include "msp/core.hpp"
#include "msp/losses.hpp"
#include "msp/toy_backend.hpp"

namespace msp {

// Two-phase personalization: phase 1 optimizes the placeholder embeddings
// only at a high learning rate; phase 2 optimizes every parameter at a low
// one. Original-image steps contribute L_MD + L_M2A + L_ICA; augmented steps
// contribute only L_AUG.
struct TrainConfig {
    int phase1_steps = 700;
    int phase2_steps = 700;
    double phase1_lr = 5e-4;
    double phase2_lr = 2e-6;
    LossWeights weights;
    double aug_ratio = 0.5;  // fraction of steps drawn from augmented data
    uint64_t seed    = 0;
    double grad_clip = 1.0;
    int working_resolution = 16;
    int attention_debug_every = 0;  // 0 disables PNG dumps
    std::string attention_debug_dir;

    void validate() const;
};

TrainConfig train_config_from_json(const std::string& json_text);
std::string train_config_to_json(const TrainConfig& config);

struct TrainResult {
    std::string checkpoint_path;
    uint64_t checkpoint_hash = 0;
    std::string log_path;
    // masked reconstruction loss means over the first/last 100 original steps
    double leading_md_mean  = 0.0;
    double trailing_md_mean = 0.0;
    // largest |token-axis sum - 1| seen across every extracted stack
    double max_token_sum_dev = 0.0;
    std::map<int, double> iou_before;
    std::map<int, double> iou_after;
};

TrainResult train(SubjectRegistry& registry, const std::vector<AugmentedSample>& aug_dataset,
                  ToyBackend& backend, const TrainConfig& config, const std::string& out_dir);

// Diagnostic: g-normalize the subject's placeholder-branch attention map,
// binarize at 0.5, IoU against the resized subject mask. Averaged over a
// fixed set of timesteps with seeded noise so pre/post comparisons are fair.
double attention_iou(ToyBackend& backend, const SubjectRegistry& registry,
                     const PromptPair& pair, int subject, int working_resolution = 16,
                     uint64_t seed = 7);

// IoU of two binary maps (helper shared with tests).
double mask_iou(const Mask& a, const Mask& b);

}  // namespace msp

#endif  // __MSP_TRAINER_HPP__
