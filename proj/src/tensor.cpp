#include "qlip/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace qlip {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) {
        if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

Tensor::Tensor(Shape s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw std::invalid_argument("tensor data size does not match shape " + shape_str(shape));
}

double& Tensor::at2(int64_t r, int64_t c) {
    return data[static_cast<size_t>(r * shape[1] + c)];
}

double Tensor::at2(int64_t r, int64_t c) const {
    return data[static_cast<size_t>(r * shape[1] + c)];
}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() {
    grad.assign(data.size(), 0.0);
}

Tensor Tensor::zeros(Shape s) { return Tensor(std::move(s)); }

Tensor Tensor::full(Shape s, double v) {
    Tensor t(std::move(s));
    t.data.assign(t.data.size(), v);
    return t;
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

bool all_finite(const Tensor& t) {
    for (double v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace qlip
