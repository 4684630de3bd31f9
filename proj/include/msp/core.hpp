#ifndef __MSP_CORE_HPP__
#define __MSP_CORE_HPP__

#include <map>
#include <string>
#include <vector>

#include "msp/autograd.hpp"
#include "msp/image.hpp"
#include "msp/rng.hpp"
#include "msp/tensor.hpp"

namespace msp {

/*================================ domain types ==============================*/

// One personalized subject: placeholder token, class noun, optional noun
// phrase from the augmentation pipeline, and its binary mask over the
// reference image.
struct SubjectAsset {
    int index = 0;  // 1-based
    std::string placeholder;
    std::string class_noun;
    std::string noun_phrase;
    Mask mask;
};

struct SubjectRegistry {
    std::vector<SubjectAsset> subjects;
    Image reference_image;

    int count() const { return static_cast<int>(subjects.size()); }
    const SubjectAsset& subject(int index) const;  // 1-based
    SubjectAsset& subject(int index);
    // throws std::invalid_argument if any invariant is broken
    void validate() const;
};

// Which text replaces placeholders on the class branch.
enum class ClassSource { class_noun, noun_phrase };

// A placeholder prompt and its class-substituted twin, word-tokenized, plus
// per-subject token positions in both branches. Outside the substituted
// spans the two token sequences are identical.
struct PromptPair {
    std::vector<std::string> placeholder_tokens;
    std::vector<std::string> class_tokens;
    struct Span {
        std::vector<int> placeholder_positions;
        std::vector<int> class_positions;
    };
    std::map<int, Span> alignment;  // subject index -> spans

    std::string placeholder_text() const;
    std::string class_text() const;
    std::vector<int> referenced_subjects() const;
};

// Lowercased whitespace tokenization; punctuation stripped, placeholder
// tokens ("<...>") kept verbatim.
std::vector<std::string> split_words(const std::string& text);

// Build a PromptPair from a template containing placeholder strings
// (e.g. "a photo of <asset0> and <asset1>").
PromptPair make_prompt_pair(const std::string& template_text, const SubjectRegistry& registry,
                            ClassSource source);

// Neutral training prompt over a subject subset, e.g. "a photo of X and Y".
PromptPair neutral_prompt_pair(const SubjectRegistry& registry, const std::vector<int>& subset,
                               ClassSource source);

// Per-token spatial cross-attention maps at one resolution, aggregated over
// layers and heads. maps is [m*m, n_tokens]; each row sums to 1.
struct AttentionStack {
    Var maps;
    int resolution = 0;
    int timestep   = 0;
    bool frozen    = false;

    int n_tokens() const { return maps.defined() ? maps.value().dim(1) : 0; }
    // the m x m slice for one token position
    Tensor token_map(int token_pos) const;
};

// The four loss-balancing coefficients. Defaults follow the reference
// training recipe.
struct LossWeights {
    double lambda_md  = 1.0;
    double lambda_m2a = 1e-2;
    double lambda_ica = 5e-3;
    double lambda_aug = 1e-4;

    void validate() const;  // all >= 0
};

/*================================ operations ================================*/

// Uniform non-empty subset of {1..n_subjects}; all 2^N - 1 subsets equally
// likely. Returned sorted ascending.
std::vector<int> union_sample(int n_subjects, RandomSource& rng);

// Pixelwise OR. All masks must share one shape.
Mask mask_union(const std::vector<Mask>& masks);

// g(x) = x / max(x); all-zero input maps to all-zero output.
Tensor normalize_map(const Tensor& x);

// Area-average downsample to m x m, thresholded at 0.5.
Mask resize_mask(const Mask& mask, int m);

}  // namespace msp

#endif  // __MSP_CORE_HPP__
