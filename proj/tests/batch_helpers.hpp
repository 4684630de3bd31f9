#ifndef MSP_TESTS_BATCH_HELPERS_HPP
#define MSP_TESTS_BATCH_HELPERS_HPP

#include <map>
#include <vector>

#include "msp/losses.hpp"
#include "msp/rng.hpp"

// Random loss-test instances plus independent scalar-loop oracles. The
// oracles deliberately use plain nested loops and no library reductions.

namespace oracle {

struct Instance {
    msp::StepBatch batch;
    // raw per-branch attention tensors, kept for the oracles
    msp::Tensor probs_placeholder;  // [m*m, n_tokens]
    msp::Tensor probs_class;
    int m        = 0;
    int n_tokens = 0;
};

inline msp::Tensor random_probs(int m, int n_tokens, msp::RandomSource& rng) {
    msp::Tensor t({m * m, n_tokens});
    for (int i = 0; i < m * m; ++i) {
        double sum = 0.0;
        for (int j = 0; j < n_tokens; ++j) {
            t.at(i, j) = 0.01 + rng.uniform();
            sum += t.at(i, j);
        }
        for (int j = 0; j < n_tokens; ++j) t.at(i, j) /= sum;
    }
    return t;
}

inline msp::Mask random_mask(int h, int w, msp::RandomSource& rng, bool ensure_nonempty = true) {
    msp::Mask m(h, w);
    for (auto& v : m.v) v = rng.uniform() < 0.5;
    if (ensure_nonempty && m.count() == 0) m.v[0] = 1;
    return m;
}

// one subject per placeholder token; subject i at token position i-1 in the
// placeholder branch and token position i-1 (single) in the class branch
inline Instance random_instance(int m, int latent, int n_subjects, uint64_t seed) {
    msp::RandomSource rng(seed);
    Instance inst;
    inst.m        = m;
    inst.n_tokens = n_subjects + 2;  // a couple of filler tokens

    inst.probs_placeholder = random_probs(m, inst.n_tokens, rng);
    inst.probs_class       = random_probs(m, inst.n_tokens, rng);

    msp::StepBatch& b = inst.batch;
    b.t   = static_cast<int>(rng.uniform_int(1, 99));
    b.z_t = msp::Tensor({3, latent, latent});
    b.epsilon = msp::Tensor({3, latent, latent});
    msp::Tensor pred({3, latent, latent});
    for (int64_t i = 0; i < pred.numel(); ++i) {
        b.z_t[i]     = rng.gaussian();
        b.epsilon[i] = rng.gaussian();
        pred[i]      = rng.gaussian();
    }
    b.prediction = msp::Var::constant(pred);

    msp::Mask union_mask(latent, latent, 0);
    for (int i = 1; i <= n_subjects; ++i) {
        b.subset.push_back(i);
        b.masks_attn[i] = random_mask(m, m, rng);
        msp::Mask ml    = random_mask(latent, latent, rng);
        for (size_t k = 0; k < union_mask.v.size(); ++k) union_mask.v[k] |= ml.v[k];
        b.pair.alignment[i] = {{i - 1}, {i - 1}};
    }
    for (int j = 0; j < inst.n_tokens; ++j) {
        b.pair.placeholder_tokens.push_back("tok" + std::to_string(j));
        b.pair.class_tokens.push_back("tok" + std::to_string(j));
    }
    b.union_mask_latent = msp::mask_to_tensor(union_mask);

    b.stack_placeholder.maps       = msp::Var::constant(inst.probs_placeholder);
    b.stack_placeholder.resolution = m;
    b.stack_placeholder.timestep   = b.t;
    b.stack_placeholder.frozen     = false;
    b.stack_class.maps             = msp::Var::constant(inst.probs_class);
    b.stack_class.resolution       = m;
    b.stack_class.timestep         = b.t;
    b.stack_class.frozen           = true;
    return inst;
}

/*============================= scalar oracles ===============================*/

inline double masked_diffusion_oracle(const Instance& inst) {
    const msp::StepBatch& b = inst.batch;
    int channels = b.epsilon.dim(0), h = b.epsilon.dim(1), w = b.epsilon.dim(2);
    double acc = 0.0;
    double count = 0.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (b.union_mask_latent.at(y, x) == 0.0) continue;
            count += channels;
            for (int c = 0; c < channels; ++c) {
                double d = b.epsilon.at(c, y, x) - b.prediction.value().at(c, y, x);
                acc += d * d;
            }
        }
    }
    return acc / (count > 0 ? count : 1.0);
}

// mean over the subject's token positions at one spatial location
inline double subject_value(const msp::Tensor& probs, const std::vector<int>& cols, int loc) {
    double acc = 0.0;
    for (int j : cols) acc += probs.at(loc, j);
    return acc / static_cast<double>(cols.size());
}

inline double masked_attention_oracle(const Instance& inst) {
    const msp::StepBatch& b = inst.batch;
    double total = 0.0;
    for (int subject : b.subset) {
        const auto& cols = b.pair.alignment.at(subject).placeholder_positions;
        const msp::Mask& mask = b.masks_attn.at(subject);
        double acc = 0.0;
        for (int y = 0; y < inst.m; ++y) {
            for (int x = 0; x < inst.m; ++x) {
                double a = subject_value(inst.probs_placeholder, cols, y * inst.m + x);
                double d = a - (mask.at(y, x) ? 1.0 : 0.0);
                acc += d * d;
            }
        }
        total += acc / (inst.m * inst.m);
    }
    return total;
}

inline double ica_oracle(const Instance& inst) {
    const msp::StepBatch& b = inst.batch;
    double total = 0.0;
    for (int subject : b.subset) {
        const auto& span      = b.pair.alignment.at(subject);
        const msp::Mask& mask = b.masks_attn.at(subject);
        // g(M * A_class)
        std::vector<double> target(static_cast<size_t>(inst.m) * inst.m, 0.0);
        double mx = 0.0;
        for (int y = 0; y < inst.m; ++y) {
            for (int x = 0; x < inst.m; ++x) {
                double v = mask.at(y, x)
                               ? subject_value(inst.probs_class, span.class_positions,
                                               y * inst.m + x)
                               : 0.0;
                target[static_cast<size_t>(y) * inst.m + x] = v;
                if (v > mx) mx = v;
            }
        }
        if (mx > 0.0) {
            for (auto& v : target) v /= mx;
        }
        double acc = 0.0;
        for (int y = 0; y < inst.m; ++y) {
            for (int x = 0; x < inst.m; ++x) {
                double a = subject_value(inst.probs_placeholder, span.placeholder_positions,
                                         y * inst.m + x);
                double d = a - target[static_cast<size_t>(y) * inst.m + x];
                acc += d * d;
            }
        }
        total += acc / (inst.m * inst.m);
    }
    return total;
}

}  // namespace oracle

#endif  // MSP_TESTS_BATCH_HELPERS_HPP
