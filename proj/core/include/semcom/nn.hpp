#pragma once

#include <string>
#include <vector>

#include "semcom/rng.hpp"
#include "semcom/tape.hpp"
#include "semcom/tensor.hpp"

namespace semcom {

struct NamedParam {
    std::string name;
    Tensor* tensor;
};
using ParamList = std::vector<NamedParam>;

struct Conv2dLayer {
    Tensor w, b;
    int stride = 1;
    int padding = 1;

    Conv2dLayer() = default;
    Conv2dLayer(int in_ch, int out_ch, int ksize, int stride, int padding);

    void init(RandomStream& rng);
    void zero_init();
    Var operator()(Tape& tp, Var x) const {
        return conv2d(x, tp.param(w), tp.param(b), stride, padding);
    }
    void collect(ParamList& out, const std::string& prefix);
};

struct LinearLayer {
    Tensor w, b;

    LinearLayer() = default;
    LinearLayer(int in_dim, int out_dim);

    void init(RandomStream& rng);
    void zero_init();
    Var operator()(Tape& tp, Var x) const { return linear(x, tp.param(w), tp.param(b)); }
    void collect(ParamList& out, const std::string& prefix);
};

struct GroupNormLayer {
    Tensor gamma, beta;
    int groups = 1;
    double eps = 1e-5;

    GroupNormLayer() = default;
    GroupNormLayer(int channels, int groups);

    Var operator()(Tape& tp, Var x) const {
        return group_norm(x, tp.param(gamma), tp.param(beta), groups, eps);
    }
    void collect(ParamList& out, const std::string& prefix);
};

} // namespace semcom
