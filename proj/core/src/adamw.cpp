#include "semcom/adamw.hpp"

#include <cmath>

namespace semcom {

void adamw_step(const ParamList& params, AdamWState& state, const AdamWOptions& opt) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].tensor->data.size(), 0.0);
            state.v[i].assign(params[i].tensor->data.size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) {
        throw ValueError("adamw_step: state does not match parameter list");
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i].tensor;
        if (state.m[i].size() != p.data.size()) {
            throw ValueError("adamw_step: state shape mismatch for " + params[i].name);
        }
        p.ensure_grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < p.data.size(); ++j) {
            const double g = p.grad[j];
            if (!std::isfinite(g)) {
                throw ValueError("adamw_step: non-finite gradient for " + params[i].name);
            }
            m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * g;
            v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p.data[j] -= opt.lr * (mhat / (std::sqrt(vhat) + opt.eps) + opt.weight_decay * p.data[j]);
        }
        p.zero_grad();
    }
}

} // namespace semcom
