#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "qlip/checkpoint.hpp"
#include "qlip/tape.hpp"
#include "qlip/tensor.hpp"

namespace qlip {

// Uniform affine quantizer. bits == 32 marks the exact identity map; no
// rounding, clipping, or scaling is applied on that path.
struct QuantizerSpec {
    int bits = 32;
    double scale = 1.0;
    int64_t zero_point = 0;
    double clip_min = 0.0;
    double clip_max = 0.0;

    bool is_identity() const { return bits == 32; }
};

// Three-entry activation bit menu plus the fixed weight width.
struct BitMenu {
    int low = 6;
    int med = 8;
    int high = 10;
    int weight_bits = 4;

    std::array<int, 3> bits() const { return {low, med, high}; }
    void validate() const;
};

// Per-sample allocation: bits.at(k, step) for quantizable layer k and reverse
// step `step` in [1, steps]. Stored row major, one row per layer.
struct BitPlan {
    int layers = 0;
    int steps = 0;
    std::vector<int> bits;

    BitPlan() = default;
    BitPlan(int k, int t, int fill = 32)
        : layers(k), steps(t), bits(static_cast<size_t>(k) * static_cast<size_t>(t), fill) {}

    int& at(int k, int step) { return bits[idx(k, step)]; }
    int at(int k, int step) const { return bits[idx(k, step)]; }

    void save_csv(const std::string& path) const;
    static BitPlan load_csv(const std::string& path);

private:
    size_t idx(int k, int step) const;
};

// Linear-interpolation percentile, p in [0, 100]. Sorts its own copy.
double percentile(std::vector<double> values, double p);

// Clip range from pooled activation samples: percentiles 0.5 and 99.5, with a
// degenerate range widened by 1e-6 on both sides.
std::pair<double, double> calibrate_range(std::vector<double> samples);

QuantizerSpec make_quantizer(std::pair<double, double> range, int bits);

double fake_quantize(double x, const QuantizerSpec& spec);
Tensor fake_quantize(const Tensor& x, const QuantizerSpec& spec);

// Calibrated clip ranges per (quantizable layer, timestep group). Ranges are
// shared by every bit width in the menu; specs are derived on demand.
class RangeTable {
public:
    RangeTable() = default;
    RangeTable(int layers, int groups, int group_size);

    int layers() const { return layers_; }
    int groups() const { return groups_; }
    int group_size() const { return group_size_; }
    int group_of_step(int step) const;  // reverse step, 1-based

    void set_range(int k, int g, std::pair<double, double> range);
    std::pair<double, double> range(int k, int g) const;
    QuantizerSpec spec_for(int k, int g, int bits) const;

    void save(Checkpoint& ck) const;
    static RangeTable load(const Checkpoint& ck);

private:
    int layers_ = 0, groups_ = 0, group_size_ = 0;
    std::vector<std::pair<double, double>> ranges_;
    std::vector<uint8_t> filled_;
    size_t idx(int k, int g) const;
};

// Pools raw activation values per (layer, group) until finalize() computes
// the percentile ranges.
class CalibrationSet {
public:
    CalibrationSet(int layers, int groups, int group_size);
    void add(int k, int g, const double* values, int64_t n);
    int64_t count(int k, int g) const;
    RangeTable finalize() const;

private:
    int layers_, groups_, group_size_;
    std::vector<std::vector<double>> pools_;
    size_t idx(int k, int g) const;
};

// Straight-through mixture hook. Forward emits the quantization selected by
// `selected`; backward follows the probability-weighted mixture of the three
// per-bit quantizations (probabilities get exact gradients, the input gets
// the clip-range pass-through). Probability values must sum to 1 within 1e-9.
Var ste_mixture_quantize(Tape& tape, Var a, std::array<Var, 3> probs,
                         const std::array<QuantizerSpec, 3>& specs, int selected);

}  // namespace qlip
