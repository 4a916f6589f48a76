#include "semcom/tensor.hpp"

#include <cmath>
#include <sstream>

namespace semcom {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

long long shape_numel(const Shape& s) {
    long long n = 1;
    for (int d : s) {
        if (d < 0) throw ValueError("negative extent in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

ShapeError::ShapeError(const std::string& op, const Shape& a, const Shape& b)
    : std::runtime_error(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b)) {}

ShapeError::ShapeError(const std::string& op, const std::string& detail)
    : std::runtime_error(op + ": " + detail) {}

Tensor::Tensor(Shape s) : shape(std::move(s)), data(static_cast<std::size_t>(shape_numel(shape)), 0.0) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (static_cast<long long>(data.size()) != shape_numel(shape)) {
        throw ShapeError("Tensor", "data length " + std::to_string(data.size()) +
                                       " does not match shape " + shape_str(shape));
    }
}

Tensor Tensor::full(Shape s, double v) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = v;
    return t;
}

bool Tensor::all_finite() const {
    for (double x : data) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

double mean_square(const Tensor& t) {
    if (t.data.empty()) return 0.0;
    double s = 0.0;
    for (double x : t.data) s += x * x;
    return s / static_cast<double>(t.data.size());
}

} // namespace semcom
