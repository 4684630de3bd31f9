#include "msp/core.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>
#include <stdexcept>

namespace msp {

/*================================ registry ==================================*/

const SubjectAsset& SubjectRegistry::subject(int index) const {
    for (const auto& s : subjects) {
        if (s.index == index) return s;
    }
    throw std::invalid_argument("SubjectRegistry: unknown subject index " + std::to_string(index));
}

SubjectAsset& SubjectRegistry::subject(int index) {
    for (auto& s : subjects) {
        if (s.index == index) return s;
    }
    throw std::invalid_argument("SubjectRegistry: unknown subject index " + std::to_string(index));
}

void SubjectRegistry::validate() const {
    if (subjects.empty()) {
        throw std::invalid_argument("SubjectRegistry: needs at least one subject");
    }
    std::set<std::string> placeholders;
    std::set<int> indices;
    for (const auto& s : subjects) {
        if (!placeholders.insert(s.placeholder).second) {
            throw std::invalid_argument("SubjectRegistry: duplicate placeholder " + s.placeholder);
        }
        indices.insert(s.index);
        if (s.mask.height != reference_image.height || s.mask.width != reference_image.width) {
            throw std::invalid_argument("SubjectRegistry: mask shape differs from reference image");
        }
        if (s.mask.count() == 0) {
            throw std::invalid_argument("SubjectRegistry: mask for " + s.placeholder + " is empty");
        }
    }
    for (int i = 1; i <= count(); ++i) {
        if (!indices.count(i)) {
            throw std::invalid_argument("SubjectRegistry: subject indices must be exactly 1..N");
        }
    }
}

/*=============================== prompt pairs ===============================*/

static std::string join_tokens(const std::vector<std::string>& toks) {
    std::string out;
    for (size_t i = 0; i < toks.size(); ++i) {
        if (i) out += ' ';
        out += toks[i];
    }
    return out;
}

std::string PromptPair::placeholder_text() const { return join_tokens(placeholder_tokens); }
std::string PromptPair::class_text() const { return join_tokens(class_tokens); }

std::vector<int> PromptPair::referenced_subjects() const {
    std::vector<int> out;
    for (const auto& [idx, span] : alignment) out.push_back(idx);
    return out;
}

// Lowercase words, punctuation stripped; placeholder tokens ("<...>") kept verbatim.
std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string w;
    while (in >> w) {
        if (w.front() == '<' && w.find('>') != std::string::npos) {
            out.push_back(w.substr(0, w.find('>') + 1));
            continue;
        }
        std::string clean;
        for (char c : w) {
            if (std::isalnum(static_cast<unsigned char>(c)) || c == '\'') {
                clean += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            }
        }
        if (!clean.empty()) out.push_back(clean);
    }
    return out;
}

PromptPair make_prompt_pair(const std::string& template_text, const SubjectRegistry& registry,
                            ClassSource source) {
    PromptPair pair;
    for (const std::string& word : split_words(template_text)) {
        const SubjectAsset* subject = nullptr;
        for (const auto& s : registry.subjects) {
            if (word == s.placeholder) {
                subject = &s;
                break;
            }
        }
        if (!subject) {
            pair.placeholder_tokens.push_back(word);
            pair.class_tokens.push_back(word);
            continue;
        }
        std::string repl = source == ClassSource::class_noun ? subject->class_noun
                                                             : subject->noun_phrase;
        if (repl.empty()) repl = subject->class_noun;
        auto& span = pair.alignment[subject->index];
        span.placeholder_positions.push_back(static_cast<int>(pair.placeholder_tokens.size()));
        pair.placeholder_tokens.push_back(subject->placeholder);
        for (const std::string& rw : split_words(repl)) {
            span.class_positions.push_back(static_cast<int>(pair.class_tokens.size()));
            pair.class_tokens.push_back(rw);
        }
    }
    return pair;
}

PromptPair neutral_prompt_pair(const SubjectRegistry& registry, const std::vector<int>& subset,
                               ClassSource source) {
    std::string text = "a photo of";
    for (size_t i = 0; i < subset.size(); ++i) {
        if (i) text += " and";
        text += " " + registry.subject(subset[i]).placeholder;
    }
    return make_prompt_pair(text, registry, source);
}

/*============================= attention stack ==============================*/

Tensor AttentionStack::token_map(int token_pos) const {
    const Tensor& m = maps.value();
    if (token_pos < 0 || token_pos >= m.dim(1)) {
        throw std::invalid_argument("AttentionStack: token position out of range");
    }
    Tensor out({resolution, resolution});
    for (int i = 0; i < resolution * resolution; ++i) out[i] = m.at(i, token_pos);
    return out;
}

void LossWeights::validate() const {
    if (lambda_md < 0 || lambda_m2a < 0 || lambda_ica < 0 || lambda_aug < 0) {
        throw std::invalid_argument("LossWeights: coefficients must be nonnegative");
    }
}

/*================================ operations ================================*/

std::vector<int> union_sample(int n_subjects, RandomSource& rng) {
    if (n_subjects < 1) {
        throw std::invalid_argument("union_sample: n_subjects must be >= 1");
    }
    if (n_subjects > 62) {
        throw std::invalid_argument("union_sample: n_subjects too large");
    }
    uint64_t n_subsets = (1ULL << n_subjects) - 1;
    uint64_t bits = static_cast<uint64_t>(rng.uniform_int(1, static_cast<int64_t>(n_subsets)));
    std::vector<int> out;
    for (int i = 0; i < n_subjects; ++i) {
        if (bits & (1ULL << i)) out.push_back(i + 1);
    }
    return out;
}

Mask mask_union(const std::vector<Mask>& masks) {
    if (masks.empty()) {
        throw std::invalid_argument("mask_union: empty mask list");
    }
    Mask out = masks[0];
    for (size_t k = 1; k < masks.size(); ++k) {
        if (!masks[k].same_shape(out)) {
            throw std::invalid_argument("mask_union: shape mismatch");
        }
        for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = out.v[i] | masks[k].v[i];
    }
    for (auto& b : out.v) b = b ? 1 : 0;
    return out;
}

Tensor normalize_map(const Tensor& x) {
    double mx = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) {
        if (x[i] < 0.0) {
            throw std::invalid_argument("normalize_map: negative entry");
        }
        mx = std::max(mx, x[i]);
    }
    Tensor out = x;
    if (mx > 0.0) {
        for (int64_t i = 0; i < out.numel(); ++i) out[i] /= mx;
    }
    return out;
}

Mask resize_mask(const Mask& mask, int m) {
    if (m < 1) {
        throw std::invalid_argument("resize_mask: m must be >= 1");
    }
    return resize_mask_rect(mask, m, m);
}

}  // namespace msp
