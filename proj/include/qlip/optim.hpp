#pragma once

#include <functional>
#include <string>
#include <vector>

#include "qlip/tensor.hpp"

namespace qlip {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. Parameters are registered once; step() consumes
// whatever gradients have accumulated in each tensor's grad buffer and throws
// if any of them is not finite, naming the offending parameter.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    void add_param(std::string name, Tensor* t);
    void step();
    void zero_grad();
    int64_t step_count() const { return t_; }

private:
    struct Slot {
        std::string name;
        Tensor* tensor;
        std::vector<double> m, v;
    };
    AdamConfig cfg_;
    std::vector<Slot> slots_;
    int64_t t_ = 0;
};

// Central-difference gradient of a scalar function, the reference oracle for
// every backward() result. Evaluates f at the base point twice up front and
// throws if the two values disagree, which catches non-deterministic f.
std::vector<double> finite_difference_gradient(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& theta, double h = 1e-5);

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
double max_relative_error(const std::vector<double>& a, const std::vector<double>& b,
                          double floor = 1e-8);

}  // namespace qlip
