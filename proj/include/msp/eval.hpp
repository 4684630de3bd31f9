#ifndef __MSP_EVAL_HPP__
#define __MSP_EVAL_HPP__

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "msp/backends.hpp"
#include "msp/core.hpp"

namespace msp {
namespace eval {

enum class PromptCategory { plain, action, interaction };

std::string category_name(PromptCategory c);
PromptCategory category_from_name(const std::string& name);

struct PromptSuite {
    PromptCategory category = PromptCategory::plain;
    std::vector<std::string> prompts;  // templates with placeholder tokens

    // plain/action prompts reference >= 1 subject, interaction >= 2
    void validate() const;
};

// The stock 10-prompts-per-category suites.
std::vector<PromptSuite> default_suites();

struct SampledImage {
    Image image;
    std::string prompt;
    PromptCategory category = PromptCategory::plain;
    uint64_t seed           = 0;
};

// Deterministic per seed; throws std::invalid_argument on templates that
// reference unregistered placeholders.
std::vector<SampledImage> sample_images(Backend& backend, const std::vector<PromptSuite>& suites,
                                        const SubjectRegistry& registry, int n_per_prompt,
                                        uint64_t seed, double guidance = kDefaultGuidance);

/*================================= scorers ==================================*/

class ImagePairScorer {
public:
    virtual ~ImagePairScorer() = default;
    virtual double score(const Image& image, const Image& reference) = 0;
    virtual std::string label() const = 0;
};

class TextImageScorer {
public:
    virtual ~TextImageScorer() = default;
    virtual double score(const Image& image, const std::string& prompt) = 0;
    virtual std::string label() const = 0;
};

// Per-channel histogram intersection; 1.0 for identical images. Offline
// stand-in, not comparable to CLIP-I numbers.
class ToyImageScorer : public ImagePairScorer {
public:
    double score(const Image& image, const Image& reference) override;
    std::string label() const override { return "toy-histogram"; }
};

// Jaccard overlap between the prompt's color words and the colors detected
// in the image. Offline stand-in, not comparable to CLIP-T numbers.
class ToyTextScorer : public TextImageScorer {
public:
    double score(const Image& image, const std::string& prompt) override;
    std::string label() const override { return "toy-token-overlap"; }
};

// Token overlap weighted by how much of the image is well-formed (classifiable
// against the toy palette). Offline stand-in for a learned reward model.
class ToyRewardScorer : public TextImageScorer {
public:
    double score(const Image& image, const std::string& prompt) override;
    std::string label() const override { return "toy-reward"; }
};

struct ScorerSet {
    TextImageScorer* clip_t = nullptr;
    ImagePairScorer* clip_i = nullptr;
    TextImageScorer* ir     = nullptr;
};

/*================================== report ==================================*/

struct MetricStats {
    double mean   = 0.0;
    double stddev = 0.0;
    int count     = 0;
    std::string scorer_label;
};

struct ScoreReport {
    // (category, metric) -> stats; metric in {clip_t, clip_i, ir}
    std::map<std::string, std::map<std::string, MetricStats>> entries;
    int error_count = 0;

    std::string to_json() const;
    static ScoreReport from_json(const std::string& text);
    std::string to_csv() const;
};

ScoreReport score(const std::vector<SampledImage>& images, const SubjectRegistry& registry,
                  const ScorerSet& scorers);

/*=================================== grid ===================================*/

// Row-per-prompt grid with a caption strip above each row. Output width is
// exactly cols * tile width; mixed resolutions are resized to the first
// image's with a warning.
Image emit_grid(const std::vector<SampledImage>& images, int rows, int cols,
                const std::string& out_path);

}  // namespace eval
}  // namespace msp

#endif  // __MSP_EVAL_HPP__
