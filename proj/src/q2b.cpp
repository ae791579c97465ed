#include "qlip/q2b.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "qlip/errors.hpp"
#include "qlip/optim.hpp"
#include "qlip/rng.hpp"

namespace qlip {

Q2BVariant parse_q2b_variant(const std::string& s) {
    if (s == "full") return Q2BVariant::full;
    if (s == "q_only") return Q2BVariant::q_only;
    if (s == "q_plus_h") return Q2BVariant::q_plus_h;
    if (s == "q_plus_m") return Q2BVariant::q_plus_m;
    throw std::runtime_error("q2b variant must be one of full, q_only, q_plus_h, q_plus_m; got '" +
                             s + "'");
}

std::string q2b_variant_name(Q2BVariant v) {
    switch (v) {
        case Q2BVariant::full: return "full";
        case Q2BVariant::q_only: return "q_only";
        case Q2BVariant::q_plus_h: return "q_plus_h";
        case Q2BVariant::q_plus_m: return "q_plus_m";
    }
    throw std::runtime_error("q2b: unreachable variant value");
}

int Q2BSettings::group_of_step(int t) const {
    if (t < 1 || t > steps)
        throw std::invalid_argument("q2b: step " + std::to_string(t) + " outside [1, " +
                                    std::to_string(steps) + "]");
    return (t - 1) / group_size;
}

void Q2BSettings::validate() const {
    if (layers < 1) throw std::runtime_error("q2b: layers must be >= 1");
    if (steps < 1) throw std::runtime_error("q2b: steps must be >= 1");
    if (group_size < 1 || group_size > steps)
        throw std::runtime_error("q2b: group size must lie in [1, steps]");
    if (forced_high < 0 || forced_high > steps)
        throw std::runtime_error("q2b: forced-high window must lie in [0, steps]");
    if (lambda_bit < 0.0) throw std::runtime_error("q2b: lambda_bit must be >= 0");
    menu.validate();
}

Q2BParams Q2BParams::init(const Q2BSettings& settings) {
    settings.validate();
    Q2BParams p;
    p.settings = settings;
    const int K = settings.layers;
    const int G = settings.groups();
    p.s = Tensor::full({K}, 4.0);
    p.o = Tensor::zeros({K});
    p.u_m = Tensor::zeros({G, K});
    p.u_h = Tensor::zeros({G, K});
    return p;
}

int64_t Q2BParams::trainable_count() const {
    return s.numel() + o.numel() + u_m.numel() + u_h.numel();
}

void Q2BParams::save(Checkpoint& ck) const {
    ck.put_i32("q2b/meta", {9},
               {settings.layers, settings.steps, settings.group_size, settings.forced_high,
                static_cast<int32_t>(settings.variant), settings.menu.low, settings.menu.med,
                settings.menu.high, settings.menu.weight_bits});
    ck.put_scalar("q2b/lambda_bit", settings.lambda_bit);
    ck.put_tensor("q2b/s", s);
    ck.put_tensor("q2b/o", o);
    ck.put_tensor("q2b/u_m", u_m);
    ck.put_tensor("q2b/u_h", u_h);
}

Q2BParams Q2BParams::load(const Checkpoint& ck) {
    const auto meta = ck.i32("q2b/meta");
    if (meta.size() != 9) throw std::runtime_error("q2b: malformed meta record");
    Q2BSettings st;
    st.layers = meta[0];
    st.steps = meta[1];
    st.group_size = meta[2];
    st.forced_high = meta[3];
    st.variant = static_cast<Q2BVariant>(meta[4]);
    st.menu.low = meta[5];
    st.menu.med = meta[6];
    st.menu.high = meta[7];
    st.menu.weight_bits = meta[8];
    st.lambda_bit = ck.scalar("q2b/lambda_bit");
    st.validate();
    Q2BParams p;
    p.settings = st;
    p.s = ck.tensor("q2b/s");
    p.o = ck.tensor("q2b/o");
    p.u_m = ck.tensor("q2b/u_m");
    p.u_h = ck.tensor("q2b/u_h");
    return p;
}

namespace {

std::atomic<bool> g_clamp_warned{false};

double clamp_quality(double q) {
    if (q < 0.0 || q > 1.0) {
        if (!g_clamp_warned.exchange(true))
            std::fprintf(stderr, "q2b: quality %g outside [0, 1]; clamping\n", q);
        q = std::clamp(q, 0.0, 1.0);
    }
    return q;
}

double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double unit_clamp(double p) { return std::clamp(p, 0.0, 1.0); }

}  // namespace

BitProbabilities q2b_probs(double q, int t, const Q2BParams& params) {
    const Q2BSettings& st = params.settings;
    q = clamp_quality(q);
    const int g = st.group_of_step(t);
    const bool forced = t <= st.forced_high;
    const int K = st.layers;
    BitProbabilities out;
    out.p_low.resize(static_cast<size_t>(K));
    out.p_med.resize(static_cast<size_t>(K));
    out.p_high.resize(static_cast<size_t>(K));
    for (int k = 0; k < K; ++k) {
        const double p_q =
            forced ? 1.0 : sigmoid_scalar((q - 0.5) * params.s.at(k) + params.o.at(k));
        const double p_m =
            st.variant == Q2BVariant::q_plus_h ? 1.0 : sigmoid_scalar(params.u_m.at2(g, k));
        const double p_h =
            st.variant == Q2BVariant::q_plus_m ? 1.0 : sigmoid_scalar(params.u_h.at2(g, k));
        double lo, md, hi;
        if (st.variant == Q2BVariant::q_only) {
            lo = 1.0 - p_q;
            md = 0.0;
            hi = p_q;
        } else {
            lo = (1.0 - p_q) * (1.0 - p_m);
            md = (1.0 - p_q) * p_m + p_q * (1.0 - p_h);
            hi = p_q * p_h;
        }
        out.p_low[static_cast<size_t>(k)] = unit_clamp(lo);
        out.p_med[static_cast<size_t>(k)] = unit_clamp(md);
        out.p_high[static_cast<size_t>(k)] = unit_clamp(hi);
    }
    return out;
}

std::vector<int> select_menu_indices(const BitProbabilities& probs) {
    const auto K = probs.p_low.size();
    if (probs.p_med.size() != K || probs.p_high.size() != K)
        throw std::invalid_argument("select_bits: ragged probability rows");
    std::vector<int> out(K);
    for (size_t k = 0; k < K; ++k) {
        const double p[3] = {probs.p_low[k], probs.p_med[k], probs.p_high[k]};
        int best = 0;
        for (int b = 1; b < 3; ++b)
            if (p[b] > p[best]) best = b;  // ties keep the lower bit
        out[k] = best;
    }
    return out;
}

std::vector<int> select_bits(const BitProbabilities& probs, const BitMenu& menu) {
    std::vector<int> out = select_menu_indices(probs);
    const auto bits = menu.bits();
    for (int& b : out) b = bits[static_cast<size_t>(b)];
    return out;
}

BitPlan plan_for_quality(double q, const Q2BParams& params) {
    const Q2BSettings& st = params.settings;
    BitPlan plan(st.layers, st.steps);
    for (int t = 1; t <= st.steps; ++t) {
        const auto bits = select_bits(q2b_probs(q, t, params), st.menu);
        for (int k = 0; k < st.layers; ++k) plan.at(k, t) = bits[static_cast<size_t>(k)];
    }
    return plan;
}

BitPlan merge_bit_plans(const std::vector<BitPlan>& plans) {
    if (plans.empty()) throw std::invalid_argument("merge_bit_plans: no plans");
    BitPlan merged = plans.front();
    for (size_t i = 1; i < plans.size(); ++i) {
        const BitPlan& p = plans[i];
        if (p.layers != merged.layers || p.steps != merged.steps)
            throw std::invalid_argument("merge_bit_plans: plans differ in shape");
        for (size_t j = 0; j < merged.bits.size(); ++j)
            merged.bits[j] = std::max(merged.bits[j], p.bits[j]);
    }
    return merged;
}

double qlip_loss_value(double mse, const BitProbabilities& probs, const BitMenu& menu,
                       double lambda_bit) {
    double sum_med = 0.0, sum_high = 0.0;
    for (double p : probs.p_med) sum_med += p;
    for (double p : probs.p_high) sum_high += p;
    return mse + lambda_bit * (menu.high * sum_high + menu.med * sum_med);
}

double qlip_loss(const Tensor& eps_full, const Tensor& eps_quant, const BitProbabilities& probs,
                 const BitMenu& menu, double lambda_bit) {
    if (!same_shape(eps_full, eps_quant))
        throw std::invalid_argument("qlip_loss: noise predictions have shapes " +
                                    shape_str(eps_full.shape) + " and " +
                                    shape_str(eps_quant.shape));
    double mse = 0.0;
    for (int64_t i = 0; i < eps_full.numel(); ++i) {
        const double d = eps_full.at(i) - eps_quant.at(i);
        mse += d * d;
    }
    mse /= static_cast<double>(eps_full.numel());
    return qlip_loss_value(mse, probs, menu, lambda_bit);
}

Q2BParamVars bind_q2b(Tape& tape, Q2BParams& params) {
    Q2BParamVars v;
    v.s = tape.param(params.s);
    v.o = tape.param(params.o);
    v.u_m = tape.param(params.u_m);
    v.u_h = tape.param(params.u_h);
    return v;
}

std::vector<std::array<Var, 3>> q2b_probs_tape(Tape& tape, const Q2BParamVars& vars,
                                               const Q2BSettings& settings, double q, int t) {
    q = clamp_quality(q);
    const int g = settings.group_of_step(t);
    const bool forced = t <= settings.forced_high;
    const int K = settings.layers;
    Var one = tape.constant(Tensor({1}, {1.0}));
    Var zero = tape.constant(Tensor({1}, {0.0}));
    std::vector<std::array<Var, 3>> out;
    out.reserve(static_cast<size_t>(K));
    for (int k = 0; k < K; ++k) {
        Var p_q;
        if (forced) {
            p_q = one;
        } else {
            Var s_k = tape.slice(vars.s, k, 1);
            Var o_k = tape.slice(vars.o, k, 1);
            p_q = tape.sigmoid(tape.add(tape.affine(s_k, q - 0.5, 0.0), o_k));
        }
        if (settings.variant == Q2BVariant::q_only) {
            out.push_back({tape.affine(p_q, -1.0, 1.0), zero, p_q});
            continue;
        }
        Var p_m = settings.variant == Q2BVariant::q_plus_h
                      ? one
                      : tape.sigmoid(tape.slice(vars.u_m, g * K + k, 1));
        Var p_h = settings.variant == Q2BVariant::q_plus_m
                      ? one
                      : tape.sigmoid(tape.slice(vars.u_h, g * K + k, 1));
        Var not_q = tape.affine(p_q, -1.0, 1.0);
        Var lo = tape.mul(not_q, tape.affine(p_m, -1.0, 1.0));
        Var md = tape.add(tape.mul(not_q, p_m), tape.mul(p_q, tape.affine(p_h, -1.0, 1.0)));
        Var hi = tape.mul(p_q, p_h);
        out.push_back({lo, md, hi});
    }
    return out;
}

Q2BTrainResult train_q2b(Q2BParams& params, const std::vector<TrainPair>& calibration,
                         const T2QModel& t2q, const Denoiser& denoiser, const QuantWeights& qw,
                         const RangeTable& ranges, const DiffusionSchedule& sched,
                         const Q2BTrainConfig& cfg, uint64_t seed) {
    if (calibration.empty()) throw std::runtime_error("train_q2b: empty calibration set");
    if (cfg.iterations < 1) throw std::runtime_error("train_q2b: iterations must be >= 1");
    const Q2BSettings& st = params.settings;
    st.validate();
    if (st.steps != sched.steps)
        throw std::runtime_error("train_q2b: settings expect " + std::to_string(st.steps) +
                                 " steps, schedule has " + std::to_string(sched.steps));

    Adam opt(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
    opt.add_param("q2b.s", &params.s);
    opt.add_param("q2b.o", &params.o);
    opt.add_param("q2b.u_m", &params.u_m);
    opt.add_param("q2b.u_h", &params.u_h);

    RngStream pick(seed, "q2b.pick");
    RngStream step_draw(seed, "q2b.step");
    RngStream noise(seed, "q2b.noise");

    struct Snapshot {
        std::vector<double> s, o, u_m, u_h;
    };
    Snapshot good{params.s.data, params.o.data, params.u_m.data, params.u_h.data};

    const int tail_start = cfg.iterations - std::max(1, cfg.iterations / 10);
    Q2BTrainResult result;
    int tail_count = 0;

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        const auto i = static_cast<size_t>(
            pick.uniform_int(0, static_cast<int64_t>(calibration.size()) - 1));
        const TrainPair& pair = calibration[i];
        const double q = t2q.predict(pair.z);
        const int r = static_cast<int>(step_draw.uniform_int(1, st.steps));  // reverse step
        const int t_sched = st.steps - r + 1;
        Tensor eps(pair.x0.shape);
        for (auto& v : eps.data) v = noise.normal();
        const Tensor x_t = forward_noise(pair.x0, t_sched, eps, sched);

        const Tensor eps_full = denoise_forward(denoiser, x_t, t_sched, pair.z);

        Tape tape;
        Q2BParamVars vars = bind_q2b(tape, params);
        const auto probs = q2b_probs_tape(tape, vars, st, q, r);
        const auto selected = select_menu_indices(q2b_probs(q, r, params));
        Var x_var = tape.input(x_t);
        Var eps_quant = quantized_tape_forward(tape, denoiser, qw, ranges, st.menu,
                                               st.group_of_step(r), probs, selected, x_var,
                                               t_sched, pair.z);
        Var mse = tape.mean(tape.sq_err(eps_quant, tape.constant(eps_full)));

        std::vector<Var> med_terms, high_terms;
        med_terms.reserve(probs.size());
        high_terms.reserve(probs.size());
        for (const auto& triple : probs) {
            med_terms.push_back(triple[1]);
            high_terms.push_back(triple[2]);
        }
        Var bit_cost = tape.add(
            tape.affine(tape.sum(tape.concat(high_terms)), st.lambda_bit * st.menu.high, 0.0),
            tape.affine(tape.sum(tape.concat(med_terms)), st.lambda_bit * st.menu.med, 0.0));
        Var loss = tape.add(mse, bit_cost);

        const double loss_v = tape.value(loss).at(0);
        if (!std::isfinite(loss_v)) {
            params.s.data = good.s;
            params.o.data = good.o;
            params.u_m.data = good.u_m;
            params.u_h.data = good.u_h;
            throw NumericError("q2b training diverged at iteration " + std::to_string(iter) +
                               "; parameters restored to the last finite state");
        }

        opt.zero_grad();
        tape.backward(loss);
        try {
            opt.step();
        } catch (const std::exception&) {
            params.s.data = good.s;
            params.o.data = good.o;
            params.u_m.data = good.u_m;
            params.u_h.data = good.u_h;
            throw;
        }

        good = {params.s.data, params.o.data, params.u_m.data, params.u_h.data};

        if (iter >= tail_start) {
            result.tail_loss += loss_v;
            result.tail_mse += tape.value(mse).at(0);
            result.tail_bits += tape.value(bit_cost).at(0);
            ++tail_count;
        }
    }
    result.tail_loss /= tail_count;
    result.tail_mse /= tail_count;
    result.tail_bits /= tail_count;
    return result;
}

}  // namespace qlip
