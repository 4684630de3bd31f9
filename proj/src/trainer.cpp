#include "msp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "msp/errors.hpp"
#include "msp/optim.hpp"

namespace msp {

void TrainConfig::validate() const {
    if (phase1_steps < 0 || phase2_steps < 0) {
        throw std::invalid_argument("TrainConfig: step counts must be >= 0");
    }
    if (phase1_lr <= 0.0 || phase2_lr <= 0.0) {
        throw std::invalid_argument("TrainConfig: learning rates must be > 0");
    }
    if (aug_ratio < 0.0 || aug_ratio > 1.0) {
        throw std::invalid_argument("TrainConfig: aug_ratio must be in [0,1]");
    }
    weights.validate();
}

TrainConfig train_config_from_json(const std::string& json_text) {
    auto j = nlohmann::json::parse(json_text);
    TrainConfig c;
    c.phase1_steps = j.value("phase1_steps", c.phase1_steps);
    c.phase2_steps = j.value("phase2_steps", c.phase2_steps);
    c.phase1_lr    = j.value("phase1_lr", c.phase1_lr);
    c.phase2_lr    = j.value("phase2_lr", c.phase2_lr);
    c.aug_ratio    = j.value("aug_ratio", c.aug_ratio);
    c.seed         = j.value("seed", c.seed);
    c.grad_clip    = j.value("grad_clip", c.grad_clip);
    c.working_resolution    = j.value("working_resolution", c.working_resolution);
    c.attention_debug_every = j.value("attention_debug_every", c.attention_debug_every);
    c.attention_debug_dir   = j.value("attention_debug_dir", c.attention_debug_dir);
    if (j.contains("weights")) {
        const auto& w        = j.at("weights");
        c.weights.lambda_md  = w.value("lambda_md", c.weights.lambda_md);
        c.weights.lambda_m2a = w.value("lambda_m2a", c.weights.lambda_m2a);
        c.weights.lambda_ica = w.value("lambda_ica", c.weights.lambda_ica);
        c.weights.lambda_aug = w.value("lambda_aug", c.weights.lambda_aug);
    }
    c.validate();
    return c;
}

std::string train_config_to_json(const TrainConfig& c) {
    nlohmann::ordered_json j;
    j["phase1_steps"] = c.phase1_steps;
    j["phase2_steps"] = c.phase2_steps;
    j["phase1_lr"]    = c.phase1_lr;
    j["phase2_lr"]    = c.phase2_lr;
    j["aug_ratio"]    = c.aug_ratio;
    j["seed"]         = c.seed;
    j["grad_clip"]    = c.grad_clip;
    j["working_resolution"]    = c.working_resolution;
    j["attention_debug_every"] = c.attention_debug_every;
    j["attention_debug_dir"]   = c.attention_debug_dir;
    j["weights"]      = {{"lambda_md", c.weights.lambda_md},
                         {"lambda_m2a", c.weights.lambda_m2a},
                         {"lambda_ica", c.weights.lambda_ica},
                         {"lambda_aug", c.weights.lambda_aug}};
    return j.dump(2);
}

double mask_iou(const Mask& a, const Mask& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("mask_iou: shape mismatch");
    }
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.v.size(); ++i) {
        inter += (a.v[i] & b.v[i]);
        uni += (a.v[i] | b.v[i]);
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double attention_iou(ToyBackend& backend, const SubjectRegistry& registry,
                     const PromptPair& pair, int subject, int working_resolution,
                     uint64_t seed) {
    NoGradGuard ng;
    AttentionTapConfig tap;
    tap.resolutions        = {backend.config().attn_resolution()};
    tap.working_resolution = working_resolution;
    const Scheduler& sched = backend.scheduler();
    Tensor z0 = backend.encode_image(registry.reference_image);
    Var cond  = backend.encode_text(backend.tokenize(pair.placeholder_tokens));

    std::vector<int> timesteps = {sched.total_steps() / 5, sched.total_steps() / 2,
                                  4 * sched.total_steps() / 5};
    Tensor mean_map({working_resolution, working_resolution});
    for (size_t k = 0; k < timesteps.size(); ++k) {
        int t = std::max(1, timesteps[k]);
        RandomSource rng(mix_seed(seed, "iou-noise", k));
        Tensor eps(z0.shape());
        for (int64_t i = 0; i < eps.numel(); ++i) eps[i] = rng.gaussian();
        Tensor z_t = sched.add_noise(z0, eps, t);
        DenoiseResult dr = backend.denoise(z_t, t, cond);
        AttentionStack stack = extract_attention(dr, tap, t, /*frozen=*/true);
        Tensor map = subject_map(stack, pair, subject, Branch::placeholder).value();
        for (int64_t i = 0; i < mean_map.numel(); ++i) {
            mean_map[i] += map[i] / static_cast<double>(timesteps.size());
        }
    }
    Tensor norm = normalize_map(mean_map);
    Mask binary(working_resolution, working_resolution);
    for (int64_t i = 0; i < norm.numel(); ++i) binary.v[static_cast<size_t>(i)] = norm[i] >= 0.5;
    Mask target = resize_mask(registry.subject(subject).mask, working_resolution);
    return mask_iou(binary, target);
}

namespace {

struct StackSumTracker {
    double max_dev = 0.0;
    void observe(const AttentionStack& stack) {
        const Tensor& m = stack.maps.value();
        for (int i = 0; i < m.dim(0); ++i) {
            double s = 0.0;
            for (int j = 0; j < m.dim(1); ++j) s += m.at(i, j);
            max_dev = std::max(max_dev, std::abs(s - 1.0));
        }
    }
};

std::string subset_string(const std::vector<int>& subset) {
    std::string out;
    for (size_t i = 0; i < subset.size(); ++i) {
        if (i) out += '+';
        out += std::to_string(subset[i]);
    }
    return out;
}

}  // namespace

TrainResult train(SubjectRegistry& registry, const std::vector<AugmentedSample>& aug_dataset,
                  ToyBackend& backend, const TrainConfig& config, const std::string& out_dir) {
    config.validate();
    registry.validate();
    std::filesystem::create_directories(out_dir);
    if (!config.attention_debug_dir.empty()) {
        std::filesystem::create_directories(config.attention_debug_dir);
    }

    bool any_registered = false;
    for (const auto& s : registry.subjects) {
        if (backend.has_placeholder(s.placeholder)) any_registered = true;
    }
    if (!any_registered) {
        backend.register_placeholders(registry);
    }

    AttentionTapConfig tap;
    tap.resolutions        = {backend.config().attn_resolution()};
    tap.working_resolution = config.working_resolution;
    const Scheduler& sched = backend.scheduler();
    const int m            = config.working_resolution;
    const int n_subjects   = registry.count();

    TrainResult result;
    {
        std::vector<int> all;
        for (int i = 1; i <= n_subjects; ++i) all.push_back(i);
        PromptPair pair = neutral_prompt_pair(registry, all, ClassSource::class_noun);
        for (int i = 1; i <= n_subjects; ++i) {
            result.iou_before[i] = attention_iou(backend, registry, pair, i, m);
        }
    }

    // per-subject masks at both resolutions (reference image side)
    Tensor ref_latent = backend.encode_image(registry.reference_image);
    std::map<int, Mask> ref_masks_attn;
    std::map<int, Mask> ref_masks_latent;
    for (const auto& s : registry.subjects) {
        ref_masks_attn[s.index]   = resize_mask(s.mask, m);
        ref_masks_latent[s.index] = resize_mask(s.mask, ref_latent.dim(1));
    }

    result.log_path = out_dir + "/train_log.csv";
    std::ofstream log(result.log_path);
    log << "step,t,subset,L_MD,L_M2A,L_ICA,L_AUG,L_total\n";

    RandomSource subset_rng(mix_seed(config.seed, "train-subset"));
    RandomSource noise_rng(mix_seed(config.seed, "train-noise"));
    StackSumTracker sums;
    std::vector<double> md_history;
    auto all_params = backend.parameters();

    int global_step  = 0;
    int aug_counter  = 0;
    double aug_accum = 0.0;
    bool use_aug     = !aug_dataset.empty() && config.weights.lambda_aug > 0.0 &&
                       config.aug_ratio > 0.0;

    for (int phase = 1; phase <= 2; ++phase) {
        int steps = phase == 1 ? config.phase1_steps : config.phase2_steps;
        if (steps == 0) continue;
        Adam opt(phase == 1 ? config.phase1_lr : config.phase2_lr);
        auto params = phase == 1 ? backend.placeholder_parameters() : backend.parameters();

        for (int step = 0; step < steps; ++step) {
            ++global_step;
            bool augmented = false;
            if (use_aug) {
                double next = aug_accum + config.aug_ratio;
                augmented   = std::floor(next) > std::floor(aug_accum);
                aug_accum   = next;
            }

            StepBatch batch;
            double md_v = 0.0, m2a_v = 0.0, ica_v = 0.0, aug_v = 0.0;
            Var total;
            try {
                if (!augmented) {
                    batch.subset = union_sample(n_subjects, subset_rng);
                    batch.pair   = neutral_prompt_pair(registry, batch.subset,
                                                       ClassSource::class_noun);
                    batch.t = static_cast<int>(noise_rng.uniform_int(1, sched.total_steps()));
                    batch.epsilon = Tensor(ref_latent.shape());
                    for (int64_t i = 0; i < batch.epsilon.numel(); ++i) {
                        batch.epsilon[i] = noise_rng.gaussian();
                    }
                    batch.z_t = sched.add_noise(ref_latent, batch.epsilon, batch.t);

                    std::vector<Mask> selected;
                    for (int s : batch.subset) {
                        selected.push_back(ref_masks_latent.at(s));
                        batch.masks_attn[s] = ref_masks_attn.at(s);
                    }
                    batch.union_mask_latent = mask_to_tensor(mask_union(selected));

                    Var cond = backend.encode_text(backend.tokenize(batch.pair.placeholder_tokens));
                    DenoiseResult dr = backend.denoise(batch.z_t, batch.t, cond);
                    batch.prediction = dr.prediction;
                    batch.stack_placeholder = extract_attention(dr, tap, batch.t, /*frozen=*/false);
                    {
                        NoGradGuard ng;
                        Var cond_c = backend.encode_text(backend.tokenize(batch.pair.class_tokens));
                        DenoiseResult dr_c = backend.denoise(batch.z_t, batch.t, cond_c);
                        batch.stack_class = extract_attention(dr_c, tap, batch.t, /*frozen=*/true);
                    }
                    sums.observe(batch.stack_placeholder);
                    sums.observe(batch.stack_class);

                    Var md  = masked_diffusion_loss(batch);
                    Var m2a = masked_attention_loss(batch);
                    Var ica = ica_loss(batch);
                    md_v    = md.item();
                    m2a_v   = m2a.item();
                    ica_v   = ica.item();
                    total   = total_loss_var(md, m2a, ica, Var(), config.weights);
                    md_history.push_back(md_v);
                } else {
                    const AugmentedSample& sample = aug_dataset[aug_counter++ % aug_dataset.size()];
                    batch.pair = sample.pair;
                    std::vector<int> refs = sample.pair.referenced_subjects();
                    std::vector<int> pick = union_sample(static_cast<int>(refs.size()), subset_rng);
                    for (int k : pick) batch.subset.push_back(refs[k - 1]);

                    Tensor z0 = backend.encode_image(sample.image);
                    batch.t   = static_cast<int>(noise_rng.uniform_int(1, sched.total_steps()));
                    batch.epsilon = Tensor(z0.shape());
                    for (int64_t i = 0; i < batch.epsilon.numel(); ++i) {
                        batch.epsilon[i] = noise_rng.gaussian();
                    }
                    batch.z_t = sched.add_noise(z0, batch.epsilon, batch.t);
                    for (int s : batch.subset) {
                        batch.masks_attn[s] = resize_mask(sample.pseudo_masks.at(s), m);
                    }
                    batch.union_mask_latent = Tensor({z0.dim(1), z0.dim(2)}, 1.0);

                    Var cond = backend.encode_text(backend.tokenize(batch.pair.placeholder_tokens));
                    DenoiseResult dr = backend.denoise(batch.z_t, batch.t, cond);
                    batch.prediction = dr.prediction;
                    batch.stack_placeholder = extract_attention(dr, tap, batch.t, /*frozen=*/false);
                    {
                        NoGradGuard ng;
                        Var cond_c = backend.encode_text(backend.tokenize(batch.pair.class_tokens));
                        DenoiseResult dr_c = backend.denoise(batch.z_t, batch.t, cond_c);
                        batch.stack_class = extract_attention(dr_c, tap, batch.t, /*frozen=*/true);
                    }
                    sums.observe(batch.stack_placeholder);
                    sums.observe(batch.stack_class);

                    Var aug = aug_loss(batch);
                    aug_v   = aug.item();
                    total   = total_loss_var(Var(), Var(), Var(), aug, config.weights);
                }
            } catch (const NumericError&) {
                total = Var::constant(Tensor::scalar(
                    std::numeric_limits<double>::quiet_NaN()));
            }

            double total_v = total.item();
            if (!std::isfinite(total_v)) {
                std::ostringstream dump;
                dump << "train: non-finite loss at step " << global_step << " (phase " << phase
                     << ", t=" << batch.t << ", subset=" << subset_string(batch.subset)
                     << ", md=" << md_v << ", m2a=" << m2a_v << ", ica=" << ica_v
                     << ", aug=" << aug_v << ")";
                throw TrainingError(dump.str());
            }

            backward(total);
            clip_grad_norm(params, config.grad_clip);
            opt.step(params);
            zero_grads(all_params);  // clear spills outside the active group too

            log << global_step << ',' << batch.t << ',' << subset_string(batch.subset) << ','
                << md_v << ',' << m2a_v << ',' << ica_v << ',' << aug_v << ',' << total_v
                << '\n';

            if (config.attention_debug_every > 0 &&
                global_step % config.attention_debug_every == 0) {
                for (int s : batch.subset) {
                    NoGradGuard ng;
                    Tensor pm =
                        subject_map(batch.stack_placeholder, batch.pair, s, Branch::placeholder)
                            .value();
                    export_attention_png(config.attention_debug_dir, global_step, s,
                                         "placeholder", pm);
                    Tensor cm =
                        subject_map(batch.stack_class, batch.pair, s, Branch::class_branch)
                            .value();
                    export_attention_png(config.attention_debug_dir, global_step, s, "class", cm);
                }
            }
        }

        if (phase == 1) {
            backend.save(out_dir + "/phase1.ckpt");
        }
    }

    result.checkpoint_path = out_dir + "/personalized.ckpt";
    backend.save(result.checkpoint_path);
    result.checkpoint_hash = file_hash(result.checkpoint_path);
    result.max_token_sum_dev = sums.max_dev;

    {
        std::vector<int> all;
        for (int i = 1; i <= n_subjects; ++i) all.push_back(i);
        PromptPair pair = neutral_prompt_pair(registry, all, ClassSource::class_noun);
        for (int i = 1; i <= n_subjects; ++i) {
            result.iou_after[i] = attention_iou(backend, registry, pair, i, m);
        }
    }

    int window = static_cast<int>(std::min<size_t>(100, md_history.size() / 2));
    if (window > 0) {
        double lead = 0.0, trail = 0.0;
        for (int i = 0; i < window; ++i) {
            lead += md_history[i];
            trail += md_history[md_history.size() - 1 - i];
        }
        result.leading_md_mean  = lead / window;
        result.trailing_md_mean = trail / window;
    }
    return result;
}

}  // namespace msp
