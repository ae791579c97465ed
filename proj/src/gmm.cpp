#include "qlip/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "qlip/errors.hpp"
#include "qlip/rng.hpp"

namespace qlip {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kVarFloor = 1e-9;
constexpr double kWeightFloor = 1e-8;

double component_log_density(const double* mean, const double* var, const Tensor& x, int dim) {
    double acc = 0.0;
    for (int j = 0; j < dim; ++j) {
        const double d = x.at(j) - mean[j];
        acc += -0.5 * (kLog2Pi + std::log(var[j])) - 0.5 * d * d / var[j];
    }
    return acc;
}

double logsumexp(const std::vector<double>& v) {
    double peak = -std::numeric_limits<double>::infinity();
    for (double x : v) peak = std::max(peak, x);
    double acc = 0.0;
    for (double x : v) acc += std::exp(x - peak);
    return peak + std::log(acc);
}

}  // namespace

double GmmModel::log_density(const Tensor& x) const {
    if (x.numel() != dim)
        throw std::invalid_argument("gmm: point has " + std::to_string(x.numel()) +
                                    " entries, model has dim " + std::to_string(dim));
    std::vector<double> terms(static_cast<size_t>(components));
    for (int c = 0; c < components; ++c)
        terms[static_cast<size_t>(c)] =
            std::log(weight[static_cast<size_t>(c)]) +
            component_log_density(&mean[static_cast<size_t>(c) * dim],
                                  &var[static_cast<size_t>(c) * dim], x, dim);
    return logsumexp(terms);
}

GmmModel GmmModel::fit(const std::vector<Tensor>& data, int components, uint64_t seed,
                       int max_iters) {
    if (components < 1) throw std::invalid_argument("gmm: need at least one component");
    if (static_cast<int>(data.size()) < 2 * components)
        throw std::invalid_argument("gmm: need at least " + std::to_string(2 * components) +
                                    " points for " + std::to_string(components) + " components");
    const int dim = static_cast<int>(data.front().numel());
    const auto n = data.size();

    // per-dimension data moments, reused by init and jitter
    std::vector<double> gmean(static_cast<size_t>(dim), 0.0), gvar(static_cast<size_t>(dim), 0.0);
    for (const Tensor& x : data)
        for (int j = 0; j < dim; ++j) gmean[static_cast<size_t>(j)] += x.at(j);
    for (double& v : gmean) v /= static_cast<double>(n);
    for (const Tensor& x : data)
        for (int j = 0; j < dim; ++j) {
            const double d = x.at(j) - gmean[static_cast<size_t>(j)];
            gvar[static_cast<size_t>(j)] += d * d;
        }
    for (double& v : gvar) v = std::max(v / static_cast<double>(n), kVarFloor);

    RngStream rng(seed, "gmm.init");
    for (int attempt = 0; attempt < 4; ++attempt) {
        GmmModel m;
        m.components = components;
        m.dim = dim;
        m.weight.assign(static_cast<size_t>(components), 1.0 / components);
        m.mean.resize(static_cast<size_t>(components) * dim);
        m.var.resize(static_cast<size_t>(components) * dim);
        for (int c = 0; c < components; ++c) {
            const auto pick = static_cast<size_t>(
                rng.uniform_int(0, static_cast<int64_t>(n) - 1));
            for (int j = 0; j < dim; ++j) {
                const double jitter =
                    attempt == 0 ? 0.0
                                 : 0.1 * std::sqrt(gvar[static_cast<size_t>(j)]) * rng.normal();
                m.mean[static_cast<size_t>(c) * dim + j] = data[pick].at(j) + jitter;
                m.var[static_cast<size_t>(c) * dim + j] = gvar[static_cast<size_t>(j)];
            }
        }

        bool degenerate = false;
        double prev_ll = -std::numeric_limits<double>::infinity();
        std::vector<double> resp(n * static_cast<size_t>(components));
        for (int iter = 0; iter < max_iters && !degenerate; ++iter) {
            // E step
            double ll = 0.0;
            std::vector<double> terms(static_cast<size_t>(components));
            for (size_t i = 0; i < n; ++i) {
                for (int c = 0; c < components; ++c)
                    terms[static_cast<size_t>(c)] =
                        std::log(m.weight[static_cast<size_t>(c)]) +
                        component_log_density(&m.mean[static_cast<size_t>(c) * dim],
                                              &m.var[static_cast<size_t>(c) * dim], data[i], dim);
                const double norm = logsumexp(terms);
                ll += norm;
                for (int c = 0; c < components; ++c)
                    resp[i * static_cast<size_t>(components) + static_cast<size_t>(c)] =
                        std::exp(terms[static_cast<size_t>(c)] - norm);
            }
            // M step
            for (int c = 0; c < components; ++c) {
                double total = 0.0;
                for (size_t i = 0; i < n; ++i)
                    total += resp[i * static_cast<size_t>(components) + static_cast<size_t>(c)];
                if (total / static_cast<double>(n) < kWeightFloor) {
                    degenerate = true;
                    break;
                }
                m.weight[static_cast<size_t>(c)] = total / static_cast<double>(n);
                double* mu = &m.mean[static_cast<size_t>(c) * dim];
                double* va = &m.var[static_cast<size_t>(c) * dim];
                for (int j = 0; j < dim; ++j) mu[j] = 0.0;
                for (size_t i = 0; i < n; ++i) {
                    const double r =
                        resp[i * static_cast<size_t>(components) + static_cast<size_t>(c)];
                    for (int j = 0; j < dim; ++j) mu[j] += r * data[i].at(j);
                }
                for (int j = 0; j < dim; ++j) mu[j] /= total;
                for (int j = 0; j < dim; ++j) va[j] = 0.0;
                for (size_t i = 0; i < n; ++i) {
                    const double r =
                        resp[i * static_cast<size_t>(components) + static_cast<size_t>(c)];
                    for (int j = 0; j < dim; ++j) {
                        const double dv = data[i].at(j) - mu[j];
                        va[j] += r * dv * dv;
                    }
                }
                for (int j = 0; j < dim; ++j) {
                    va[j] /= total;
                    if (va[j] < kVarFloor) {
                        degenerate = true;
                        va[j] = kVarFloor;
                    }
                }
            }
            if (degenerate) break;
            if (ll - prev_ll < 1e-9 && iter > 0) break;
            prev_ll = ll;
        }
        if (!degenerate) return m;
    }
    throw NumericError("gmm: a component kept collapsing after 3 jittered restarts");
}

void GmmModel::save(Checkpoint& ck, const std::string& prefix) const {
    ck.put_i32(prefix + "meta", {2}, {components, dim});
    ck.put_tensor(prefix + "weight", Tensor({components}, weight));
    ck.put_tensor(prefix + "mean", Tensor({components, dim}, mean));
    ck.put_tensor(prefix + "var", Tensor({components, dim}, var));
}

GmmModel GmmModel::load(const Checkpoint& ck, const std::string& prefix) {
    const auto meta = ck.i32(prefix + "meta");
    if (meta.size() != 2) throw std::runtime_error("gmm: malformed meta record");
    GmmModel m;
    m.components = meta[0];
    m.dim = meta[1];
    m.weight = ck.tensor(prefix + "weight").data;
    m.mean = ck.tensor(prefix + "mean").data;
    m.var = ck.tensor(prefix + "var").data;
    return m;
}

}  // namespace qlip
