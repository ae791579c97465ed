#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace qlip {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major tensor of doubles. `grad` stays empty unless the tensor is
// used as a trainable leaf; once allocated it always matches `data` in size.
struct Tensor {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;

    Tensor() = default;
    explicit Tensor(Shape s);
    Tensor(Shape s, std::vector<double> d);

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t rank() const { return static_cast<int64_t>(shape.size()); }
    bool is_scalar() const { return data.size() == 1; }

    double& at(int64_t i) { return data[static_cast<size_t>(i)]; }
    double at(int64_t i) const { return data[static_cast<size_t>(i)]; }

    // rank-2 access, row major
    double& at2(int64_t r, int64_t c);
    double at2(int64_t r, int64_t c) const;

    void ensure_grad();
    void zero_grad();

    static Tensor zeros(Shape s);
    static Tensor full(Shape s, double v);
    static Tensor scalar(double v);
};

bool same_shape(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);

}  // namespace qlip
