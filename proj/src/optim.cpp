#include "qlip/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "qlip/errors.hpp"

namespace qlip {

void Adam::add_param(std::string name, Tensor* t) {
    if (t == nullptr) throw std::invalid_argument("adam: null parameter '" + name + "'");
    t->ensure_grad();
    Slot s;
    s.name = std::move(name);
    s.tensor = t;
    s.m.assign(t->data.size(), 0.0);
    s.v.assign(t->data.size(), 0.0);
    slots_.push_back(std::move(s));
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (Slot& s : slots_) {
        Tensor& p = *s.tensor;
        p.ensure_grad();
        for (size_t i = 0; i < p.data.size(); ++i) {
            const double g = p.grad[i];
            if (!std::isfinite(g))
                throw NumericError("adam: non-finite gradient in parameter '" + s.name +
                                   "' at index " + std::to_string(i));
            s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g;
            s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = s.m[i] / bc1;
            const double vhat = s.v[i] / bc2;
            p.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void Adam::zero_grad() {
    for (Slot& s : slots_) s.tensor->zero_grad();
}

std::vector<double> finite_difference_gradient(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& theta, double h) {
    if (h <= 0.0) throw std::invalid_argument("finite differences: step must be positive");
    const double base1 = f(theta);
    const double base2 = f(theta);
    if (!(base1 == base2))
        throw std::runtime_error(
            "finite differences: objective is not deterministic (two evaluations at the "
            "same point disagree)");
    std::vector<double> grad(theta.size(), 0.0);
    std::vector<double> probe = theta;
    for (size_t i = 0; i < theta.size(); ++i) {
        probe[i] = theta[i] + h;
        const double hi = f(probe);
        probe[i] = theta[i] - h;
        const double lo = f(probe);
        probe[i] = theta[i];
        grad[i] = (hi - lo) / (2.0 * h);
    }
    return grad;
}

double max_relative_error(const std::vector<double>& a, const std::vector<double>& b,
                          double floor) {
    if (a.size() != b.size())
        throw std::invalid_argument("max_relative_error: length mismatch");
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::fabs(a[i]), std::fabs(b[i]), floor});
        worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
    }
    return worst;
}

}  // namespace qlip
