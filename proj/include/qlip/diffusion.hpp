#pragma once

#include <array>
#include <functional>
#include <vector>

#include "qlip/checkpoint.hpp"
#include "qlip/quant.hpp"
#include "qlip/tape.hpp"
#include "qlip/tensor.hpp"

namespace qlip {

// Linear-beta schedule. Index t runs over [1, steps] with t = steps the most
// noisy point of the forward process; the reverse pass walks t downward.
struct DiffusionSchedule {
    int steps = 0;
    std::vector<double> beta;       // beta[t-1]
    std::vector<double> alpha;      // 1 - beta
    std::vector<double> alpha_bar;  // running product of alpha
    std::vector<double> sigma;      // sqrt(beta)

    static DiffusionSchedule linear(int steps, double beta_start, double beta_end);

    double beta_at(int t) const { return beta[check(t)]; }
    double alpha_at(int t) const { return alpha[check(t)]; }
    double alpha_bar_at(int t) const { return alpha_bar[check(t)]; }
    double sigma_at(int t) const { return sigma[check(t)]; }

    void save(Checkpoint& ck) const;
    static DiffusionSchedule load(const Checkpoint& ck);

private:
    size_t check(int t) const;
};

Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps, const DiffusionSchedule& sched);

// One ancestral step: posterior mean plus sigma_t * noise. The noise term is
// dropped at t == 1, the last step of the reverse pass.
Tensor reverse_step(const Tensor& xt, int t, const Tensor& eps_pred, const Tensor& noise,
                    const DiffusionSchedule& sched);

struct DenoiserConfig {
    int data_dim = 8;
    int width = 64;
    int quant_layers = 6;  // hidden layers whose input activations carry hooks
    int time_dim = 16;
    int cond_dim = 64;

    int input_dim() const { return data_dim + time_dim + cond_dim; }
    void validate() const;
};

// Conditional epsilon predictor: an input layer, `quant_layers` hidden layers
// whose incoming activations are the quantization sites, and an output layer.
// Input and output layers always run at full precision.
struct Denoiser {
    DenoiserConfig cfg;
    Tensor w_in, b_in;
    std::vector<Tensor> w_mid, b_mid;
    Tensor w_out, b_out;

    static Denoiser init(const DenoiserConfig& cfg, uint64_t seed);

    Tensor time_embedding(int t) const;  // interleaved sin/cos bands
    std::vector<std::pair<std::string, Tensor*>> trainable();

    void save(Checkpoint& ck) const;
    static Denoiser load(const Checkpoint& ck);
};

// Weights of the hooked layers after load-time symmetric quantization.
// weight_bits == 32 reproduces the original weights bit for bit.
struct QuantWeights {
    int weight_bits = 32;
    std::vector<Tensor> w_mid;

    static QuantWeights build(const Denoiser& d, int weight_bits);
};

using ActObserver = std::function<void(int layer, const double* values, int64_t n)>;

// Plain forward pass. Pass quant == nullptr for the full-precision path; with
// quant set, hooked activations are fake-quantized at bits[k] using the clip
// range of (layer k, group) and hooked layers use the quantized weights.
// The observer, when set, sees each hooked activation before quantization.
struct QuantArgs {
    const QuantWeights* weights;
    const RangeTable* ranges;
    int group;
    const int* bits;  // per hooked layer
};
Tensor denoise_forward(const Denoiser& d, const Tensor& x, int t, const Tensor& z,
                       const QuantArgs* quant = nullptr, const ActObserver* observer = nullptr);

// Tape-side forward passes -------------------------------------------------

struct DenoiserVars {
    Var w_in, b_in;
    std::vector<Var> w_mid, b_mid;
    Var w_out, b_out;
};

// Binds every weight as a trainable leaf (pretraining).
DenoiserVars bind_denoiser(Tape& tape, Denoiser& d);
Var denoiser_tape_forward(Tape& tape, const Denoiser& d, const DenoiserVars& vars, Var x, int t,
                          const Tensor& z);

// Per-hook capture of the quantized tape forward, consumed by gradient tests.
struct HookTrace {
    std::vector<Tensor> input;                     // activation entering each hook
    std::vector<std::array<Tensor, 3>> quantized;  // per-bit quantizations of it
    std::vector<std::vector<uint8_t>> in_range;
    std::vector<std::array<double, 3>> probs;
    std::vector<int> selected;
};

// Quantized forward on the tape: model weights are constants, each hooked
// activation passes through a straight-through mixture node fed by that
// layer's probability scalars. selected[k] indexes the menu (0 low, 1 med,
// 2 high).
Var quantized_tape_forward(Tape& tape, const Denoiser& d, const QuantWeights& qw,
                           const RangeTable& rt, const BitMenu& menu, int group,
                           const std::vector<std::array<Var, 3>>& layer_probs,
                           const std::vector<int>& selected, Var x, int t, const Tensor& z,
                           HookTrace* trace = nullptr);

// Sampling -------------------------------------------------------------------

struct SamplerOutput {
    Tensor x0;
    BitPlan plan;
};

using StepObserver = std::function<void(int layer, int step, const double* values, int64_t n)>;

// Ancestral sampling along the reverse pass. plan.at(k, step) gives the
// activation bits for hooked layer k at reverse step `step` (step 1 carries
// the most noise). Draws depend only on (seed, sample_index), never on call
// order. quant == nullptr runs the full-precision model; the plan is then
// recorded as given.
SamplerOutput ancestral_sample(const Denoiser& d, const DiffusionSchedule& sched,
                               const QuantWeights* qw, const RangeTable* rt, const BitPlan& plan,
                               const Tensor& z, uint64_t seed, uint64_t sample_index,
                               const StepObserver* observer = nullptr);

// Pretraining ----------------------------------------------------------------

struct TrainPair {
    Tensor x0, z;
};

struct PretrainConfig {
    int iterations = 20000;
    int batch = 8;
    double lr = 1e-3;
};

// Standard noise-prediction training of the toy denoiser. Returns the
// running-average loss over the last tenth of the iterations.
double pretrain_denoiser(Denoiser& d, const std::vector<TrainPair>& data,
                         const DiffusionSchedule& sched, const PretrainConfig& cfg,
                         uint64_t seed);

}  // namespace qlip
