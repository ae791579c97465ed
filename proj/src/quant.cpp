#include "qlip/quant.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace qlip {

void BitMenu::validate() const {
    auto ok = [](int b) { return (b >= 2 && b <= 16) || b == 32; };
    if (!ok(low) || !ok(med) || !ok(high) || !ok(weight_bits))
        throw std::invalid_argument("bit menu: widths must lie in [2,16] or be 32");
    if (!(low <= med && med <= high))
        throw std::invalid_argument("bit menu: entries must be ordered low <= med <= high");
}

size_t BitPlan::idx(int k, int step) const {
    if (k < 0 || k >= layers || step < 1 || step > steps)
        throw std::out_of_range("bit plan: layer " + std::to_string(k) + ", step " +
                                std::to_string(step) + " outside " + std::to_string(layers) +
                                "x" + std::to_string(steps));
    return static_cast<size_t>(k) * static_cast<size_t>(steps) + static_cast<size_t>(step - 1);
}

void BitPlan::save_csv(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("bit plan: cannot open '" + path + "' for writing");
    for (int k = 0; k < layers; ++k) {
        for (int t = 1; t <= steps; ++t) os << (t > 1 ? "," : "") << at(k, t);
        os << "\n";
    }
    if (!os) throw std::runtime_error("bit plan: write failed for '" + path + "'");
}

BitPlan BitPlan::load_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("bit plan: cannot open '" + path + "'");
    std::vector<std::vector<int>> rows;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<int> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stoi(cell));
        if (!rows.empty() && row.size() != rows.front().size())
            throw std::runtime_error("bit plan: ragged rows in '" + path + "'");
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw std::runtime_error("bit plan: '" + path + "' is empty");
    BitPlan plan(static_cast<int>(rows.size()), static_cast<int>(rows.front().size()));
    for (int k = 0; k < plan.layers; ++k)
        for (int t = 1; t <= plan.steps; ++t) plan.at(k, t) = rows[static_cast<size_t>(k)][static_cast<size_t>(t - 1)];
    return plan;
}

namespace {

// linear-interpolation percentile on a sorted vector, p in [0, 100]
double percentile_sorted(const std::vector<double>& sorted, double p) {
    const auto n = sorted.size();
    if (n == 1) return sorted[0];
    const double pos = (p / 100.0) * static_cast<double>(n - 1);
    const auto lo = static_cast<size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, n - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

double percentile(std::vector<double> values, double p) {
    if (values.empty()) throw std::invalid_argument("percentile: no values");
    if (p < 0.0 || p > 100.0)
        throw std::invalid_argument("percentile: p must lie in [0, 100]");
    std::sort(values.begin(), values.end());
    return percentile_sorted(values, p);
}

std::pair<double, double> calibrate_range(std::vector<double> samples) {
    if (samples.empty())
        throw std::invalid_argument("calibrate_range: no samples");
    for (double v : samples)
        if (!std::isfinite(v))
            throw std::invalid_argument("calibrate_range: non-finite sample");
    std::sort(samples.begin(), samples.end());
    double lo = percentile_sorted(samples, 0.5);
    double hi = percentile_sorted(samples, 99.5);
    if (lo == hi) {
        lo -= 1e-6;
        hi += 1e-6;
    }
    return {lo, hi};
}

QuantizerSpec make_quantizer(std::pair<double, double> range, int bits) {
    QuantizerSpec spec;
    spec.bits = bits;
    if (bits == 32) return spec;
    if (bits < 2 || bits > 16)
        throw std::invalid_argument("make_quantizer: bits must lie in [2,16] or be 32");
    auto [lo, hi] = range;
    if (!(lo < hi))
        throw std::invalid_argument("make_quantizer: clip range is empty");
    const double levels = std::ldexp(1.0, bits) - 1.0;  // 2^bits - 1
    spec.scale = (hi - lo) / levels;
    const double zp = std::round(-lo / spec.scale);
    spec.zero_point = static_cast<int64_t>(std::clamp(zp, 0.0, levels));
    spec.clip_min = lo;
    spec.clip_max = hi;
    return spec;
}

double fake_quantize(double x, const QuantizerSpec& spec) {
    if (spec.is_identity()) return x;
    const double levels = std::ldexp(1.0, spec.bits) - 1.0;
    const double q = std::round(x / spec.scale) + static_cast<double>(spec.zero_point);
    const double qc = std::clamp(q, 0.0, levels);
    return (qc - static_cast<double>(spec.zero_point)) * spec.scale;
}

Tensor fake_quantize(const Tensor& x, const QuantizerSpec& spec) {
    if (spec.is_identity()) return x;
    Tensor y(x.shape);
    for (int64_t i = 0; i < x.numel(); ++i) y.at(i) = fake_quantize(x.at(i), spec);
    return y;
}

RangeTable::RangeTable(int layers, int groups, int group_size)
    : layers_(layers), groups_(groups), group_size_(group_size) {
    if (layers < 1 || groups < 1 || group_size < 1)
        throw std::invalid_argument("range table: layers, groups, group size must be positive");
    ranges_.assign(static_cast<size_t>(layers) * static_cast<size_t>(groups), {0.0, 0.0});
    filled_.assign(ranges_.size(), 0);
}

size_t RangeTable::idx(int k, int g) const {
    if (k < 0 || k >= layers_ || g < 0 || g >= groups_)
        throw std::out_of_range("range table: layer " + std::to_string(k) + ", group " +
                                std::to_string(g) + " outside " + std::to_string(layers_) + "x" +
                                std::to_string(groups_));
    return static_cast<size_t>(k) * static_cast<size_t>(groups_) + static_cast<size_t>(g);
}

int RangeTable::group_of_step(int step) const {
    if (step < 1) throw std::out_of_range("range table: reverse step must be >= 1");
    const int g = (step - 1) / group_size_;
    if (g >= groups_)
        throw std::out_of_range("range table: step " + std::to_string(step) +
                                " beyond the calibrated horizon");
    return g;
}

void RangeTable::set_range(int k, int g, std::pair<double, double> range) {
    ranges_[idx(k, g)] = range;
    filled_[idx(k, g)] = 1;
}

std::pair<double, double> RangeTable::range(int k, int g) const {
    const size_t i = idx(k, g);
    if (!filled_[i])
        throw std::runtime_error("range table: no calibration for layer " + std::to_string(k) +
                                 ", group " + std::to_string(g));
    return ranges_[i];
}

QuantizerSpec RangeTable::spec_for(int k, int g, int bits) const {
    return make_quantizer(range(k, g), bits);
}

void RangeTable::save(Checkpoint& ck) const {
    ck.put_i32("quant/meta", {3}, {layers_, groups_, group_size_});
    for (int k = 0; k < layers_; ++k)
        for (int g = 0; g < groups_; ++g) {
            const auto r = range(k, g);
            const std::string base =
                "quant/" + std::to_string(k) + "/" + std::to_string(g) + "/";
            ck.put_scalar(base + "clip_min", r.first);
            ck.put_scalar(base + "clip_max", r.second);
        }
}

RangeTable RangeTable::load(const Checkpoint& ck) {
    const auto meta = ck.i32("quant/meta");
    if (meta.size() != 3) throw std::runtime_error("range table: malformed meta record");
    RangeTable rt(meta[0], meta[1], meta[2]);
    for (int k = 0; k < rt.layers_; ++k)
        for (int g = 0; g < rt.groups_; ++g) {
            const std::string base =
                "quant/" + std::to_string(k) + "/" + std::to_string(g) + "/";
            rt.set_range(k, g, {ck.scalar(base + "clip_min"), ck.scalar(base + "clip_max")});
        }
    return rt;
}

CalibrationSet::CalibrationSet(int layers, int groups, int group_size)
    : layers_(layers), groups_(groups), group_size_(group_size),
      pools_(static_cast<size_t>(layers) * static_cast<size_t>(groups)) {
    if (layers < 1 || groups < 1 || group_size < 1)
        throw std::invalid_argument("calibration set: layers, groups, group size must be positive");
}

size_t CalibrationSet::idx(int k, int g) const {
    if (k < 0 || k >= layers_ || g < 0 || g >= groups_)
        throw std::out_of_range("calibration set: layer " + std::to_string(k) + ", group " +
                                std::to_string(g) + " out of range");
    return static_cast<size_t>(k) * static_cast<size_t>(groups_) + static_cast<size_t>(g);
}

void CalibrationSet::add(int k, int g, const double* values, int64_t n) {
    auto& pool = pools_[idx(k, g)];
    pool.insert(pool.end(), values, values + n);
}

int64_t CalibrationSet::count(int k, int g) const {
    return static_cast<int64_t>(pools_[idx(k, g)].size());
}

RangeTable CalibrationSet::finalize() const {
    RangeTable rt(layers_, groups_, group_size_);
    for (int k = 0; k < layers_; ++k)
        for (int g = 0; g < groups_; ++g) {
            const auto& pool = pools_[idx(k, g)];
            if (pool.empty())
                throw std::runtime_error("calibration set: no samples for layer " +
                                         std::to_string(k) + ", group " + std::to_string(g));
            rt.set_range(k, g, calibrate_range(pool));
        }
    return rt;
}

Var ste_mixture_quantize(Tape& tape, Var a, std::array<Var, 3> probs,
                         const std::array<QuantizerSpec, 3>& specs, int selected) {
    if (selected < 0 || selected > 2)
        throw std::invalid_argument("ste_mixture_quantize: selected index out of range");
    QuantizeRecord rec;
    double psum = 0.0;
    for (int b = 0; b < 3; ++b) {
        const Tensor& pv = tape.value(probs[static_cast<size_t>(b)]);
        if (!pv.is_scalar())
            throw std::invalid_argument("ste_mixture_quantize: probabilities must be scalars");
        rec.probs[static_cast<size_t>(b)] = pv.at(0);
        psum += pv.at(0);
    }
    if (std::fabs(psum - 1.0) > 1e-9)
        throw std::invalid_argument("ste_mixture_quantize: probabilities sum to " +
                                    std::to_string(psum) + ", expected 1");
    const Tensor& av = tape.value(a);
    for (int b = 0; b < 3; ++b) {
        rec.quantized[static_cast<size_t>(b)] = fake_quantize(av, specs[static_cast<size_t>(b)]);
        rec.identity[static_cast<size_t>(b)] = specs[static_cast<size_t>(b)].is_identity();
    }
    // the clip range is shared across menu entries; take it from any non-identity spec
    rec.in_range.assign(av.data.size(), 1);
    for (const QuantizerSpec& s : specs) {
        if (s.is_identity()) continue;
        for (size_t i = 0; i < av.data.size(); ++i)
            rec.in_range[i] =
                (av.data[i] >= s.clip_min && av.data[i] <= s.clip_max) ? 1 : 0;
        break;
    }
    rec.selected = selected;
    return tape.quantize(a, probs[0], probs[1], probs[2], std::move(rec));
}

}  // namespace qlip
