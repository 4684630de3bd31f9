#ifndef __MSP_OPTIM_HPP__
#define __MSP_OPTIM_HPP__

#include <map>
#include <string>
#include <vector>

#include "msp/backends.hpp"

namespace msp {

// Adaptive-moment optimizer over named parameters. State is keyed by name so
// one instance can serve changing parameter groups across phases.
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

    void step(std::vector<NamedParam>& params);
    void reset();

private:
    struct Slot {
        Tensor m, v;
        int64_t t = 0;
    };
    double lr_, beta1_, beta2_, eps_;
    std::map<std::string, Slot> state_;
};

// Scales gradients so their global L2 norm is at most max_norm. Returns the
// pre-clip norm.
double clip_grad_norm(std::vector<NamedParam>& params, double max_norm);

void zero_grads(std::vector<NamedParam>& params);

}  // namespace msp

#endif  // __MSP_OPTIM_HPP__
