#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace semcom {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
long long shape_numel(const Shape& s);

class ShapeError : public std::runtime_error {
public:
    ShapeError(const std::string& op, const Shape& a, const Shape& b);
    ShapeError(const std::string& op, const std::string& detail);
};

class ValueError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dense row-major tensor of 64-bit reals. grad is scratch state filled in by
// Tape::backward and consumed by the optimizer; it is mutable so that a
// frozen (const) model can still be traced through a tape.
struct Tensor {
    Shape shape;
    std::vector<double> data;
    mutable std::vector<double> grad;

    Tensor() = default;
    explicit Tensor(Shape s);
    Tensor(Shape s, std::vector<double> values);

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, double v);
    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    int size() const { return static_cast<int>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    void ensure_grad() const {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
    void zero_grad() const { grad.assign(data.size(), 0.0); }
    bool all_finite() const;
};

bool same_shape(const Shape& a, const Shape& b);
double mean_square(const Tensor& t);

} // namespace semcom
