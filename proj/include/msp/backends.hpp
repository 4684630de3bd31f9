#ifndef __MSP_BACKENDS_HPP__
#define __MSP_BACKENDS_HPP__

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "msp/autograd.hpp"
#include "msp/core.hpp"
#include "msp/image.hpp"
#include "msp/rng.hpp"

namespace msp {

/*================================ scheduler =================================*/

// Linear-beta ancestral diffusion schedule over T discrete timesteps.
// add_noise at t = 0 is the identity; noise level is monotone in t.
class Scheduler {
public:
    explicit Scheduler(int total_steps, double beta_start = 1e-3, double beta_end = 0.35);

    int total_steps() const { return total_steps_; }
    double alpha_bar(int t) const;   // t in [0, T]
    double noise_level(int t) const; // sqrt(1 - alpha_bar)

    Tensor add_noise(const Tensor& z0, const Tensor& epsilon, int t) const;
    // one ancestral reverse step z_t -> z_{t-1}
    Tensor step(const Tensor& prediction, const Tensor& z_t, int t, RandomSource& rng) const;
    // closed-form z0 from (z_t, true epsilon)
    Tensor recover_z0(const Tensor& z_t, const Tensor& epsilon, int t) const;

private:
    int total_steps_;
    std::vector<double> betas_;      // index 1..T
    std::vector<double> alpha_bars_; // index 0..T, alpha_bars_[0] = 1
};

/*================================ contracts =================================*/

struct AttentionTapRecord {
    int layer      = 0;
    int resolution = 0;
    Var probs;  // [m*m, n_tokens], post-softmax over the token axis
};

struct DenoiseResult {
    Var prediction;  // same shape as z_t
    std::vector<AttentionTapRecord> taps;
};

// Inference contract shared by the toy backend and external adapters.
// Adapters that cannot record gradients return detached constants.
class Backend {
public:
    virtual ~Backend() = default;

    // text encoder
    virtual std::vector<int> tokenize(const std::vector<std::string>& words) const = 0;
    virtual Var encode_text(const std::vector<int>& ids) = 0;  // [L, D]

    // denoiser
    virtual DenoiseResult denoise(const Tensor& z_t, int t, const Var& cond) = 0;
    virtual bool has_attention_taps() const = 0;

    // latent codec
    virtual Tensor encode_image(const Image& image) const = 0;
    virtual Image decode_latent(const Tensor& latent) const = 0;
    virtual std::vector<int> latent_shape() const = 0;

    virtual const Scheduler& scheduler() const = 0;

    // condition used as the guidance baseline
    virtual std::vector<int> null_condition_ids() const;
};

// Reverse chain from z at timestep from_t down to 0 with classifier-free
// guidance: prediction = uncond + guidance * (cond - uncond). guidance = 1
// skips the extra unconditional evaluation.
Tensor guided_reverse(Backend& backend, Tensor z, int from_t, const Var& cond, double guidance,
                      RandomSource& rng);

inline constexpr double kDefaultGuidance = 5.0;

/*================================ checkpoints ===============================*/

struct NamedParam {
    std::string name;
    Var var;
};

// Self-describing container: JSON header (names, shapes, config blob, hash)
// followed by raw little-endian double blobs in header order.
void save_checkpoint(const std::string& path, const std::vector<NamedParam>& params,
                     const std::string& config_json);
struct CheckpointData {
    std::string config_json;
    std::vector<std::pair<std::string, Tensor>> tensors;
};
CheckpointData load_checkpoint(const std::string& path);
uint64_t file_hash(const std::string& path);

}  // namespace msp

#endif  // __MSP_BACKENDS_HPP__
