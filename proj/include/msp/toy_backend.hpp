#ifndef __MSP_TOY_BACKEND_HPP__
#define __MSP_TOY_BACKEND_HPP__

#include <array>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "msp/backends.hpp"
#include "msp/core.hpp"

namespace msp {

/*================================= toy world ================================*/

// Synthetic scenes: 2-3 colored geometric shapes on a dark background, with
// exact per-shape masks and word-level captions. Deterministic per seed.
struct ToyShape {
    std::string color;
    std::string kind;      // circle / square / triangle
    std::string position;  // left / right / top / bottom
    Mask mask;
};

struct ToySample {
    Image image;
    std::vector<ToyShape> shapes;
    std::string caption;  // e.g. "a photo of red circle left and blue square right"
};

class ToyWorld {
public:
    explicit ToyWorld(int image_size = 64);

    int image_size() const { return image_size_; }
    ToySample sample(RandomSource& rng) const;

    static const std::vector<std::string>& base_vocabulary();
    static const std::vector<std::pair<std::string, std::array<double, 3>>>& palette();
    static double background_level() { return 0.07; }
    // caption token positions describing one shape
    static std::vector<int> caption_token_span(int shape_index);

private:
    int image_size_;
};

// Registry for a toy sample: subject i gets placeholder "<assetI>", class
// noun = shape kind, mask = exact shape mask.
SubjectRegistry registry_from_sample(const ToySample& sample);

/*================================ toy backend ===============================*/

struct ToyBackendConfig {
    int image_size  = 64;
    int channels    = 16;  // at the attention resolution
    int text_dim    = 32;
    int attn_dim    = 32;
    int time_dim    = 16;
    int total_steps = 100;
    int max_tokens  = 24;
    int attn_resolution() const { return image_size / 4; }
    int full_res_channels() const { return channels / 2 < 4 ? 4 : channels / 2; }
};

// CPU-scale diffusion backend: word-level text encoder, small convolutional
// denoiser with one cross-attention block at image_size/4, identity latent
// codec, linear-beta scheduler.
class ToyBackend : public Backend {
public:
    ToyBackend(ToyBackendConfig config, uint64_t init_seed);

    // Backend interface
    std::vector<int> tokenize(const std::vector<std::string>& words) const override;
    Var encode_text(const std::vector<int>& ids) override;
    DenoiseResult denoise(const Tensor& z_t, int t, const Var& cond) override;
    bool has_attention_taps() const override { return true; }
    Tensor encode_image(const Image& image) const override;
    Image decode_latent(const Tensor& latent) const override;
    std::vector<int> latent_shape() const override;
    const Scheduler& scheduler() const override { return scheduler_; }

    // training surface
    std::vector<NamedParam> parameters();
    std::vector<NamedParam> placeholder_parameters();
    const ToyBackendConfig& config() const { return config_; }

    // One trainable embedding row per placeholder, initialized from the
    // subject's class-noun embedding. Duplicates are rejected.
    void register_placeholders(const SubjectRegistry& registry);
    bool has_placeholder(const std::string& name) const;
    int base_vocab_size() const { return static_cast<int>(vocab_.size()); }
    int token_id(const std::string& word) const;  // -1 if unknown
    uint64_t base_embedding_hash() const;

    std::string config_json() const;
    void save(const std::string& path) const;
    static std::unique_ptr<ToyBackend> load(const std::string& path);

private:
    Var& param(const std::string& name);
    void init_params(uint64_t seed);

    ToyBackendConfig config_;
    Scheduler scheduler_;
    std::vector<std::string> vocab_;
    std::map<std::string, int> word_to_id_;
    std::vector<std::string> placeholder_names_;          // id = base_vocab_size() + k
    std::map<std::string, Var> params_;
    std::vector<std::string> param_order_;
};

/*================================ pretraining ===============================*/

struct PretrainResult {
    std::vector<double> loss_curve;
    double init_loss  = 0.0;
    double final_loss = 0.0;  // mean of trailing window
};

// Standard noise-prediction pretraining on the synthetic caption/image
// distribution. Throws TrainingError (after checkpointing the last finite
// step, when checkpoint_path is set) if the loss goes non-finite.
PretrainResult toy_pretrain(ToyBackend& backend, const ToyWorld& world, int steps, uint64_t seed,
                            double lr = 1e-3, const std::string& curve_csv_path = "",
                            const std::string& checkpoint_path = "");

// Shape/determinism/tap conformance checks shared by the toy backend and any
// external adapter. Throws on the first violation.
void run_backend_conformance(Backend& backend);

}  // namespace msp

#endif  // __MSP_TOY_BACKEND_HPP__
