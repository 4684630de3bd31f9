#ifndef __MSP_LOSSES_HPP__
#define __MSP_LOSSES_HPP__

#include <map>
#include <vector>

#include "msp/attention.hpp"
#include "msp/core.hpp"

namespace msp {

// Everything one optimization step needs to evaluate the routed losses.
// prediction and stack_placeholder carry the gradient graph; the class
// branch is a frozen re-evaluation on the same (z_t, t).
struct StepBatch {
    Tensor z_t;
    int t = 0;
    Tensor epsilon;
    Var prediction;
    std::vector<int> subset;            // sampled subject indices, 1-based
    Tensor union_mask_latent;           // M_s at latent resolution, {0,1}
    std::map<int, Mask> masks_attn;     // subject -> mask at attention resolution
    AttentionStack stack_placeholder;
    AttentionStack stack_class;
    PromptPair pair;
};

// Mean of (eps - prediction)^2 over elements selected by M_s.
Var masked_diffusion_loss(const StepBatch& batch);

// Sum over subjects of mean squared (A_i - M_i).
Var masked_attention_loss(const StepBatch& batch);

// Sum over subjects of mean squared (A_i - g(M_i * A_class_i)); the class
// branch must be frozen.
Var ica_loss(const StepBatch& batch);

// Same form as ica_loss on an augmented sample's prompts and pseudo-label
// masks; no reconstruction term.
Var aug_loss(const StepBatch& batch_aug);

double total_loss(double md, double m2a, double ica, double aug, const LossWeights& w);
Var total_loss_var(const Var& md, const Var& m2a, const Var& ica, const Var& aug,
                   const LossWeights& w);

}  // namespace msp

#endif  // __MSP_LOSSES_HPP__
