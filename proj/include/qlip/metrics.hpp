#pragma once

#include <utility>
#include <vector>

#include "qlip/diffusion.hpp"
#include "qlip/quant.hpp"
#include "qlip/tensor.hpp"

namespace qlip {

// MAC counts for one denoiser evaluation, split into the quantizable hidden
// layers (aligned with bit-plan rows) and the always-full-precision ends.
struct CostModel {
    std::vector<double> quant_macs;  // one entry per bit-plan row
    double unquant_macs = 0.0;       // charged at 32/32 every step
    int weight_bits = 32;

    static CostModel for_denoiser(const DenoiserConfig& cfg, int weight_bits);
};

// Unweighted mean activation bit-width over every (layer, step, sample) entry.
double compute_fab(const std::vector<BitPlan>& plans);

// Sum over steps of MACs * (b_w/32) * (b_a/32), unquantized MACs at 32/32.
double compute_bitops(const CostModel& cost, const BitPlan& plan);

// Median pairwise Euclidean distance over at most the first 1024 points.
double median_heuristic_bandwidth(const std::vector<Tensor>& points);

// Unbiased RBF-kernel MMD^2 estimate, floored at 0. bandwidth <= 0 selects
// the median heuristic over both sets (at most 512 points from each).
double mmd_distance(const std::vector<Tensor>& generated, const std::vector<Tensor>& reference,
                    double bandwidth = 0.0);

// (SROCC, PLCC); Spearman uses average ranks for ties.
std::pair<double, double> rank_correlation(const std::vector<double>& pred,
                                           const std::vector<double>& truth);

}  // namespace qlip
