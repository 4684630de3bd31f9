#include "msp/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace msp {

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (lr <= 0.0) {
        throw std::invalid_argument("Adam: lr must be > 0");
    }
}

void Adam::step(std::vector<NamedParam>& params) {
    for (auto& p : params) {
        Tensor& value = p.var.value_mut();
        p.var.node()->ensure_grad();
        Tensor& grad = p.var.grad();
        Slot& slot   = state_[p.name];
        if (slot.m.numel() != value.numel()) {
            slot.m = Tensor(value.shape());
            slot.v = Tensor(value.shape());
            slot.t = 0;
        }
        slot.t += 1;
        double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(slot.t));
        double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(slot.t));
        for (int64_t i = 0; i < value.numel(); ++i) {
            double g  = grad[i];
            slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * g;
            slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * g * g;
            double mh = slot.m[i] / bc1;
            double vh = slot.v[i] / bc2;
            value[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
        }
    }
}

void Adam::reset() {
    state_.clear();
}

double clip_grad_norm(std::vector<NamedParam>& params, double max_norm) {
    double sq = 0.0;
    for (auto& p : params) {
        p.var.node()->ensure_grad();
        const Tensor& g = p.var.grad();
        for (int64_t i = 0; i < g.numel(); ++i) sq += g[i] * g[i];
    }
    double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        double s = max_norm / norm;
        for (auto& p : params) {
            Tensor& g = p.var.grad();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] *= s;
        }
    }
    return norm;
}

void zero_grads(std::vector<NamedParam>& params) {
    for (auto& p : params) p.var.zero_grad();
}

}  // namespace msp
