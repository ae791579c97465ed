#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "qlip/checkpoint.hpp"
#include "qlip/diffusion.hpp"
#include "qlip/quant.hpp"
#include "qlip/t2q.hpp"
#include "qlip/tape.hpp"
#include "qlip/tensor.hpp"

namespace qlip {

// Which probability factors participate. q_only keeps the quality gate alone
// (two reachable bit widths); q_plus_h pins p_m at 1; q_plus_m pins p_h at 1.
enum class Q2BVariant { full, q_only, q_plus_h, q_plus_m };

Q2BVariant parse_q2b_variant(const std::string& s);
std::string q2b_variant_name(Q2BVariant v);

struct Q2BSettings {
    int layers = 6;         // hooked denoiser layers
    int steps = 100;        // reverse-process length
    int group_size = 20;    // steps sharing one (u_m, u_h) column
    int forced_high = 10;   // reverse steps with p_q pinned to 1
    double lambda_bit = 1.0;
    BitMenu menu;
    Q2BVariant variant = Q2BVariant::full;

    int groups() const { return (steps + group_size - 1) / group_size; }
    int group_of_step(int t) const;  // reverse step, 1-based
    void validate() const;
};

// Trainable allocation parameters: per-layer quality slope/offset plus
// per-(group, layer) medium/high logits.
struct Q2BParams {
    Q2BSettings settings;
    Tensor s, o;      // [K]
    Tensor u_m, u_h;  // [G, K]

    static Q2BParams init(const Q2BSettings& settings);
    int64_t trainable_count() const;  // 2K + 2K*groups

    void save(Checkpoint& ck) const;
    static Q2BParams load(const Checkpoint& ck);
};

struct BitProbabilities {
    std::vector<double> p_low, p_med, p_high;  // [K]
};

// Probabilities for one reverse step. Quality outside [0,1] is clamped and
// warned about once per process.
BitProbabilities q2b_probs(double q, int t, const Q2BParams& params);

// Argmax per layer with ties resolved toward the lowest bit width.
std::vector<int> select_menu_indices(const BitProbabilities& probs);
std::vector<int> select_bits(const BitProbabilities& probs, const BitMenu& menu);

// Full allocation for one prompt quality across every reverse step.
BitPlan plan_for_quality(double q, const Q2BParams& params);

// Elementwise maximum across the batch.
BitPlan merge_bit_plans(const std::vector<BitPlan>& plans);

// mse + lambda * (b_high * sum_k p_high + b_med * sum_k p_med)
double qlip_loss_value(double mse, const BitProbabilities& probs, const BitMenu& menu,
                       double lambda_bit);
double qlip_loss(const Tensor& eps_full, const Tensor& eps_quant, const BitProbabilities& probs,
                 const BitMenu& menu, double lambda_bit);

// Tape-side probabilities ----------------------------------------------------

struct Q2BParamVars {
    Var s, o, u_m, u_h;
};

Q2BParamVars bind_q2b(Tape& tape, Q2BParams& params);

// Per-layer scalar triples feeding the straight-through hooks. Matches the
// plain q2b_probs values except for the plain path's [0,1] safety clamp.
std::vector<std::array<Var, 3>> q2b_probs_tape(Tape& tape, const Q2BParamVars& vars,
                                               const Q2BSettings& settings, double q, int t);

// Training --------------------------------------------------------------------

struct Q2BTrainConfig {
    int iterations = 5000;
    double lr = 1e-3;
};

struct Q2BTrainResult {
    double tail_loss = 0.0;  // means over the last tenth of the iterations
    double tail_mse = 0.0;
    double tail_bits = 0.0;
};

// One prompt+data pair per iteration: q from the frozen T2Q, a random reverse
// step, the same noised input through the full and the mixture-quantized
// model, Adam on {s, o, u_m, u_h} only. A non-finite loss restores the last
// finite parameters and aborts.
Q2BTrainResult train_q2b(Q2BParams& params, const std::vector<TrainPair>& calibration,
                         const T2QModel& t2q, const Denoiser& denoiser, const QuantWeights& qw,
                         const RangeTable& ranges, const DiffusionSchedule& sched,
                         const Q2BTrainConfig& cfg, uint64_t seed);

}  // namespace qlip
