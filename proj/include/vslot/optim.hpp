#pragma once

#include "vslot/nn.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace vslot::nn {

class Adam {
public:
    explicit Adam(ParamList params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(double lr);
    std::int64_t steps() const { return t_; }

private:
    ParamList params_;
    double beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::vector<Matrix> m_, v_;
};

class Sgd {
public:
    explicit Sgd(ParamList params, double momentum = 0.0);
    void step(double lr);

private:
    ParamList params_;
    double momentum_;
    std::vector<Matrix> velocity_;
};

/// Linear warm-up over `warmup` steps, then exponential decay by
/// `decay_rate` every `decay_steps` steps.
double warmup_exponential_lr(int step, double base, int warmup, double decay_rate, int decay_steps);

/// Half-cosine from `base` at step 0 down to 0 at `total`.
double cosine_lr(int step, double base, int total);

}  // namespace vslot::nn
