#ifndef __MSP_AUGMENTATION_HPP__
#define __MSP_AUGMENTATION_HPP__

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "msp/backends.hpp"
#include "msp/core.hpp"

namespace msp {

/*================================= clients ==================================*/

// External-model adapters. Each has a deterministic stub or toy
// implementation so the whole pipeline runs offline.

class DescriberClient {
public:
    virtual ~DescriberClient() = default;
    // free-form query about an image; responses are parsed line-per-subject
    virtual std::string query(const Image& image, const std::string& prompt) = 0;
};

class PromptGenClient {
public:
    virtual ~PromptGenClient() = default;
    virtual std::string query(const std::string& prompt) = 0;
};

class SegmenterClient {
public:
    virtual ~SegmenterClient() = default;
    virtual Mask segment(const Image& image, const std::string& phrase) = 0;
};

class InpainterClient {
public:
    virtual ~InpainterClient() = default;
    virtual Image inpaint(const Image& image, const Mask& holes) = 0;
};

// Table-driven describer: returns the configured phrase lines regardless of
// the query. Empty table -> TransportError (stands in for an unreachable
// service).
class StubDescriber : public DescriberClient {
public:
    explicit StubDescriber(std::vector<std::string> phrases) : phrases_(std::move(phrases)) {}
    std::string query(const Image& image, const std::string& prompt) override;

private:
    std::vector<std::string> phrases_;
};

// Table-driven generator. The generation query returns sentences cycled from
// the bank with the subject phrases substituted in; sentences marked
// "awkward" in the bank survive generation but are dropped by the filter
// query, exercising the two-stage protocol.
class StubPromptGen : public PromptGenClient {
public:
    StubPromptGen();  // built-in bank
    explicit StubPromptGen(std::vector<std::string> bank) : bank_(std::move(bank)) {}
    std::string query(const std::string& prompt) override;

private:
    std::vector<std::string> bank_;
};

// Nearest-palette-color segmenter for toy images: the phrase names a color
// word; pixels closest to that palette color are the mask.
class ColorSegmenter : public SegmenterClient {
public:
    explicit ColorSegmenter(double tolerance = 0.35) : tolerance_(tolerance) {}
    Mask segment(const Image& image, const std::string& phrase) override;

private:
    double tolerance_;
};

// Iterative neighbor-mean diffusion over hole pixels until convergence.
class DiffusionInpainter : public InpainterClient {
public:
    explicit DiffusionInpainter(double tol = 1e-3, int max_iters = 20000)
        : tol_(tol), max_iters_(max_iters) {}
    Image inpaint(const Image& image, const Mask& holes) override;

private:
    double tol_;
    int max_iters_;
};

/*================================ operations ================================*/

// Step 1: one noun phrase (<= 5 words) per subject, written into the
// registry. Over-length responses are re-queried up to 3 times, then
// truncated with a warning.
std::vector<std::string> describe_subjects(const Image& image, SubjectRegistry& registry,
                                           DescriberClient& describer);

// Step 2: over-generate (>= 2x n_target), filter with a second query, and
// return n_target templates with "<P0>"-style slots for the subject phrases.
std::vector<std::string> generate_prompts(const std::vector<std::string>& phrases,
                                          PromptGenClient& generator, int n_target);

// Step 3: full reverse-chain synthesis conditioned on the class-branch text.
Image generate_draft(const std::string& prompt_text, Backend& backend, uint64_t seed,
                     double guidance = kDefaultGuidance);

// Step 3: per-subject pseudo-label masks by text-prompted segmentation.
std::map<int, Mask> segment_pseudo_masks(const Image& image,
                                         const std::vector<std::pair<int, std::string>>& phrases,
                                         SegmenterClient& segmenter);

// Step 4: paste reference subjects into the draft masks (aspect preserved,
// centered in the mask's bounding box). Pixels outside draft masks are never
// modified; uncovered draft-mask pixels become holes.
struct ComposeResult {
    Image composed;
    Mask holes;
    bool rejected = false;
    std::string reject_reason;
};
ComposeResult compose_subjects(const Image& draft, const std::map<int, Mask>& draft_masks,
                               const SubjectRegistry& registry);

// Pixels outside holes are bit-identical to the input.
Image inpaint_holes(const Image& composed, const Mask& holes, InpainterClient& inpainter);

// Partial forward noising to k_steps followed by k_steps of prompt-
// conditioned reverse denoising. k_steps = 0 is the identity.
Image gsa_edit(const Image& image, const std::string& prompt_text, int k_steps, Backend& backend,
               uint64_t seed, double guidance = kDefaultGuidance);

/*================================= pipeline =================================*/

struct AugmentedSample {
    PromptPair pair;  // placeholder branch holds c_a, class branch holds the noun phrases
    Image image;
    std::map<int, Mask> pseudo_masks;
    std::string image_path;
    std::map<int, std::string> mask_paths;
    uint64_t draft_seed = 0;
    uint64_t gsa_seed   = 0;
    int gsa_steps       = 0;
    double gsa_strength = 0.7;
    int inpaint_hole_count = 0;
};

struct RejectionRecord {
    int prompt_index = 0;
    std::string prompt;
    std::string reason;
};

struct AugmentConfig {
    int n_prompts       = 30;
    double gsa_strength = 0.7;  // fraction of the scheduler's total steps
    uint64_t seed       = 0;
    double max_overlap  = 0.10;  // pairwise pseudo-mask overlap ratio
    int min_mask_area   = 30;
    double guidance     = kDefaultGuidance;
    std::string out_dir = ".";
};

struct AugmentResult {
    std::vector<AugmentedSample> samples;
    std::vector<RejectionRecord> rejections;
    std::string manifest_path;
};

// Steps 1-4 per prompt; rejected samples are logged, surviving samples and a
// manifest are written under config.out_dir. Throws PipelineError if nothing
// survives.
AugmentResult build_augmented_dataset(SubjectRegistry& registry, Backend& backend,
                                      DescriberClient& describer, PromptGenClient& generator,
                                      SegmenterClient& segmenter, InpainterClient& inpainter,
                                      const AugmentConfig& config);

void write_manifest(const std::string& path, const AugmentResult& result,
                    const SubjectRegistry& registry, const AugmentConfig& config);
// Reloads sample metadata, images and masks from a manifest.
AugmentResult load_manifest(const std::string& path);

}  // namespace msp

#endif  // __MSP_AUGMENTATION_HPP__
