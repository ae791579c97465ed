#include "qlip/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "qlip/errors.hpp"

namespace qlip {

CostModel CostModel::for_denoiser(const DenoiserConfig& cfg, int weight_bits) {
    CostModel cost;
    cost.weight_bits = weight_bits;
    const double in_features = cfg.data_dim + cfg.time_dim + cfg.cond_dim;
    cost.unquant_macs = in_features * cfg.width + cfg.width * cfg.data_dim;
    cost.quant_macs.assign(static_cast<size_t>(cfg.quant_layers),
                           static_cast<double>(cfg.width) * cfg.width);
    return cost;
}

double compute_fab(const std::vector<BitPlan>& plans) {
    if (plans.empty()) throw std::invalid_argument("compute_fab: no plans");
    const int layers = plans.front().layers;
    const int steps = plans.front().steps;
    double total = 0.0;
    for (const auto& p : plans) {
        if (p.layers != layers || p.steps != steps)
            throw std::invalid_argument("compute_fab: plans differ in shape");
        total = std::accumulate(p.bits.begin(), p.bits.end(), total);
    }
    return total / (static_cast<double>(plans.size()) * layers * steps);
}

double compute_bitops(const CostModel& cost, const BitPlan& plan) {
    if (static_cast<size_t>(plan.layers) != cost.quant_macs.size())
        throw std::invalid_argument("compute_bitops: plan has " + std::to_string(plan.layers) +
                                    " layers, cost model has " +
                                    std::to_string(cost.quant_macs.size()));
    const double w_factor = cost.weight_bits / 32.0;
    double total = 0.0;
    for (int t = 1; t <= plan.steps; ++t) {
        for (int k = 0; k < plan.layers; ++k)
            total += cost.quant_macs[static_cast<size_t>(k)] * w_factor * (plan.at(k, t) / 32.0);
        total += cost.unquant_macs;
    }
    return total;
}

namespace {

double sq_distance(const Tensor& a, const Tensor& b) {
    double d2 = 0.0;
    for (int64_t j = 0; j < a.numel(); ++j) {
        const double d = a.at(j) - b.at(j);
        d2 += d * d;
    }
    return d2;
}

double median_distance(const std::vector<const Tensor*>& pts) {
    std::vector<double> dists;
    dists.reserve(pts.size() * (pts.size() - 1) / 2);
    for (size_t i = 0; i < pts.size(); ++i)
        for (size_t j = i + 1; j < pts.size(); ++j)
            dists.push_back(std::sqrt(sq_distance(*pts[i], *pts[j])));
    if (dists.empty()) throw std::invalid_argument("bandwidth: need at least two points");
    std::sort(dists.begin(), dists.end());
    const size_t n = dists.size();
    return n % 2 == 1 ? dists[n / 2] : 0.5 * (dists[n / 2 - 1] + dists[n / 2]);
}

}  // namespace

double median_heuristic_bandwidth(const std::vector<Tensor>& points) {
    std::vector<const Tensor*> pts;
    const size_t cap = std::min<size_t>(points.size(), 1024);
    pts.reserve(cap);
    for (size_t i = 0; i < cap; ++i) pts.push_back(&points[i]);
    const double med = median_distance(pts);
    if (!(med > 0.0)) throw NumericError("bandwidth: median pairwise distance is zero");
    return med;
}

double mmd_distance(const std::vector<Tensor>& generated, const std::vector<Tensor>& reference,
                    double bandwidth) {
    const auto m = generated.size();
    const auto n = reference.size();
    if (m < 2 || n < 2)
        throw std::invalid_argument("mmd_distance: unbiased estimator needs >= 2 points per set");
    if (bandwidth <= 0.0) {
        std::vector<const Tensor*> pool;
        for (size_t i = 0; i < std::min<size_t>(m, 512); ++i) pool.push_back(&generated[i]);
        for (size_t i = 0; i < std::min<size_t>(n, 512); ++i) pool.push_back(&reference[i]);
        bandwidth = median_distance(pool);
        if (!(bandwidth > 0.0))
            throw NumericError("mmd_distance: median-heuristic bandwidth is zero");
    }
    const double gamma = 1.0 / (2.0 * bandwidth * bandwidth);

    double kxx = 0.0;
    for (size_t i = 0; i < m; ++i)
        for (size_t j = i + 1; j < m; ++j)
            kxx += std::exp(-gamma * sq_distance(generated[i], generated[j]));
    kxx = 2.0 * kxx / (static_cast<double>(m) * (m - 1));

    double kyy = 0.0;
    for (size_t i = 0; i < n; ++i)
        for (size_t j = i + 1; j < n; ++j)
            kyy += std::exp(-gamma * sq_distance(reference[i], reference[j]));
    kyy = 2.0 * kyy / (static_cast<double>(n) * (n - 1));

    double kxy = 0.0;
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j)
            kxy += std::exp(-gamma * sq_distance(generated[i], reference[j]));
    kxy = kxy / (static_cast<double>(m) * n);

    return std::max(0.0, kxx + kyy - 2.0 * kxy);
}

namespace {

// average ranks, 1-based; ties share the mean of their positions
std::vector<double> average_ranks(const std::vector<double>& v) {
    const auto n = v.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double shared = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
        i = j + 1;
    }
    return ranks;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const auto n = a.size();
    double ma = 0.0, mb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0)
        throw NumericError("rank_correlation: zero-variance input");
    return sab / std::sqrt(saa * sbb);
}

}  // namespace

std::pair<double, double> rank_correlation(const std::vector<double>& pred,
                                           const std::vector<double>& truth) {
    if (pred.size() != truth.size())
        throw std::invalid_argument("rank_correlation: length mismatch");
    if (pred.size() < 3)
        throw std::invalid_argument("rank_correlation: need at least 3 points");
    const double srocc = pearson(average_ranks(pred), average_ranks(truth));
    const double plcc = pearson(pred, truth);
    return {srocc, plcc};
}

}  // namespace qlip
