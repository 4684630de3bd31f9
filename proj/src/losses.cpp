#include "msp/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "msp/errors.hpp"

namespace msp {

Var masked_diffusion_loss(const StepBatch& batch) {
    if (batch.subset.empty()) {
        throw std::invalid_argument("masked_diffusion_loss: empty subject subset");
    }
    const Tensor& pred = batch.prediction.value();
    if (!pred.same_shape(batch.epsilon) || !pred.same_shape(batch.z_t)) {
        throw std::invalid_argument("masked_diffusion_loss: prediction/epsilon shape mismatch");
    }
    const Tensor& mask = batch.union_mask_latent;
    if (pred.dim(1) != mask.dim(0) || pred.dim(2) != mask.dim(1)) {
        throw std::invalid_argument("masked_diffusion_loss: mask resolution mismatch");
    }
    int channels = pred.dim(0);
    double ones  = mask.sum();
    double denom = std::max(1.0, ones * channels);

    Var diff   = sub(batch.prediction, Var::constant(batch.epsilon));
    Var masked = mul_mask_hw(diff, mask);
    return scale(sum_all(square(masked)), 1.0 / denom);
}

static Var attention_match_loss(const StepBatch& batch,
                                const std::map<int, Tensor>& targets) {
    Var acc;
    for (int subject : batch.subset) {
        auto mit = targets.find(subject);
        if (mit == targets.end()) {
            throw std::invalid_argument("attention loss: missing target for subject " +
                                        std::to_string(subject));
        }
        const Tensor& target = mit->second;
        if (target.dim(0) != batch.stack_placeholder.resolution ||
            target.dim(1) != batch.stack_placeholder.resolution) {
            throw std::invalid_argument("attention loss: target resolution mismatch");
        }
        Var a    = subject_map(batch.stack_placeholder, batch.pair, subject, Branch::placeholder);
        Var term = mean_all(square(sub(a, Var::constant(target))));
        acc      = acc.defined() ? add(acc, term) : term;
    }
    return acc;
}

Var masked_attention_loss(const StepBatch& batch) {
    if (batch.subset.empty()) {
        throw std::invalid_argument("masked_attention_loss: empty subject subset");
    }
    std::map<int, Tensor> targets;
    for (int subject : batch.subset) {
        auto it = batch.masks_attn.find(subject);
        if (it == batch.masks_attn.end()) {
            throw std::invalid_argument("masked_attention_loss: missing mask for subject " +
                                        std::to_string(subject));
        }
        targets[subject] = mask_to_tensor(it->second);
    }
    return attention_match_loss(batch, targets);
}

static Var class_regularized_loss(const StepBatch& batch, const char* name) {
    if (batch.subset.empty()) {
        throw std::invalid_argument(std::string(name) + ": empty subject subset");
    }
    if (!batch.stack_class.frozen) {
        throw ContractViolation(std::string(name) + ": class branch is not frozen");
    }
    std::map<int, Tensor> targets;
    for (int subject : batch.subset) {
        auto it = batch.masks_attn.find(subject);
        if (it == batch.masks_attn.end()) {
            throw std::invalid_argument(std::string(name) + ": missing mask for subject " +
                                        std::to_string(subject));
        }
        targets[subject] = class_prior_map(batch.stack_class, batch.pair, subject, it->second);
    }
    return attention_match_loss(batch, targets);
}

Var ica_loss(const StepBatch& batch) {
    return class_regularized_loss(batch, "ica_loss");
}

Var aug_loss(const StepBatch& batch_aug) {
    return class_regularized_loss(batch_aug, "aug_loss");
}

double total_loss(double md, double m2a, double ica, double aug, const LossWeights& w) {
    w.validate();
    if (!std::isfinite(md) || !std::isfinite(m2a) || !std::isfinite(ica) || !std::isfinite(aug)) {
        throw NumericError("total_loss: non-finite input");
    }
    return w.lambda_md * md + w.lambda_m2a * m2a + w.lambda_ica * ica + w.lambda_aug * aug;
}

Var total_loss_var(const Var& md, const Var& m2a, const Var& ica, const Var& aug,
                   const LossWeights& w) {
    w.validate();
    Var acc;
    auto accumulate = [&acc](const Var& term, double lambda) {
        if (!term.defined() || lambda == 0.0) return;
        Var scaled = scale(term, lambda);
        acc        = acc.defined() ? add(acc, scaled) : scaled;
    };
    accumulate(md, w.lambda_md);
    accumulate(m2a, w.lambda_m2a);
    accumulate(ica, w.lambda_ica);
    accumulate(aug, w.lambda_aug);
    if (!acc.defined()) acc = Var::constant(Tensor::scalar(0.0));
    if (!std::isfinite(acc.item())) {
        throw NumericError("total_loss_var: non-finite value");
    }
    return acc;
}

}  // namespace msp
