#include "semcom/nn.hpp"

#include <cmath>

namespace semcom {

namespace {

void uniform_fill(Tensor& t, RandomStream& rng, double bound) {
    for (auto& v : t.data) v = rng.uniform(-bound, bound);
}

} // namespace

Conv2dLayer::Conv2dLayer(int in_ch, int out_ch, int ksize, int stride, int padding)
    : w({out_ch, in_ch, ksize, ksize}), b({out_ch}), stride(stride), padding(padding) {}

void Conv2dLayer::init(RandomStream& rng) {
    const int fan_in = w.dim(1) * w.dim(2) * w.dim(3);
    uniform_fill(w, rng, std::sqrt(1.0 / fan_in));
    for (auto& v : b.data) v = 0.0;
}

void Conv2dLayer::zero_init() {
    for (auto& v : w.data) v = 0.0;
    for (auto& v : b.data) v = 0.0;
}

void Conv2dLayer::collect(ParamList& out, const std::string& prefix) {
    out.push_back({prefix + ".w", &w});
    out.push_back({prefix + ".b", &b});
}

LinearLayer::LinearLayer(int in_dim, int out_dim) : w({out_dim, in_dim}), b({out_dim}) {}

void LinearLayer::init(RandomStream& rng) {
    uniform_fill(w, rng, std::sqrt(1.0 / w.dim(1)));
    for (auto& v : b.data) v = 0.0;
}

void LinearLayer::zero_init() {
    for (auto& v : w.data) v = 0.0;
    for (auto& v : b.data) v = 0.0;
}

void LinearLayer::collect(ParamList& out, const std::string& prefix) {
    out.push_back({prefix + ".w", &w});
    out.push_back({prefix + ".b", &b});
}

GroupNormLayer::GroupNormLayer(int channels, int groups)
    : gamma(Tensor::full({channels}, 1.0)), beta({channels}), groups(groups) {}

void GroupNormLayer::collect(ParamList& out, const std::string& prefix) {
    out.push_back({prefix + ".gamma", &gamma});
    out.push_back({prefix + ".beta", &beta});
}

} // namespace semcom
