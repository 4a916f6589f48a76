#pragma once

#include <vector>

#include "semcom/nn.hpp"

namespace semcom {

struct AdamWOptions {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// First/second moment buffers aligned with a fixed parameter list.
struct AdamWState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    long step = 0;
};

// One decoupled-weight-decay Adam update. Consumes and zeroes the gradients
// stored on the parameter tensors; a missing gradient counts as zero.
// Throws ValueError naming the parameter if its gradient is non-finite.
void adamw_step(const ParamList& params, AdamWState& state, const AdamWOptions& opt);

} // namespace semcom
