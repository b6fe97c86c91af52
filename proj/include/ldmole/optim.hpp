#pragma once

#include <unordered_map>
#include <vector>

#include "ldmole/mole.hpp"

namespace ldmole {

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Decoupled-weight-decay Adam with bias correction. Frozen parameters are
// skipped entirely (no decay, no moments).
class AdamW {
public:
    explicit AdamW(AdamWOptions opts = {}) : opts_(opts) {}

    void step(std::vector<ParamRef> params, std::vector<ParamRef> grads, double lr);

    long steps_taken() const { return t_; }

private:
    struct Moments {
        Vec m, v;
    };
    AdamWOptions opts_;
    long t_ = 0;
    std::unordered_map<std::string, Moments> state_;
};

// Scales gradients in place so their global L2 norm is at most max_norm;
// returns the pre-clip norm.
double clip_global_norm(std::vector<ParamRef> grads, double max_norm);

}  // namespace ldmole
