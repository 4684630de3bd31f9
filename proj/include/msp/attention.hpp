#ifndef __MSP_ATTENTION_HPP__
#define __MSP_ATTENTION_HPP__

#include <set>
#include <string>

#include "msp/backends.hpp"
#include "msp/core.hpp"

namespace msp {

// Which tap resolutions to collect and the single working resolution all
// layers are resized to before averaging. Aggregation over layers/heads is
// the arithmetic mean; multi-token subjects are averaged over their token
// positions.
struct AttentionTapConfig {
    std::set<int> resolutions = {16};
    int working_resolution    = 16;
};

// Mean over all tapped layers, each bilinearly resized to the working
// resolution. Token-axis sums stay 1 because the resize weights are convex.
AttentionStack extract_attention(const DenoiseResult& run, const AttentionTapConfig& tap,
                                 int timestep, bool frozen);

enum class Branch { placeholder, class_branch };

// Mean map over the subject's token positions in the chosen branch.
Var subject_map(const AttentionStack& stack, const PromptPair& pair, int subject, Branch branch);

// g(M_i * A) computed from the frozen class branch; plain tensor, no
// gradient path by construction.
Tensor class_prior_map(const AttentionStack& stack_class, const PromptPair& pair, int subject,
                       const Mask& mask_resized);

// Grayscale debug dump, upscaled for inspection:
// {dir}/attn_{step}_{subject}_{branch}.png
void export_attention_png(const std::string& dir, int step, int subject,
                          const std::string& branch, const Tensor& map);

}  // namespace msp

#endif  // __MSP_ATTENTION_HPP__
