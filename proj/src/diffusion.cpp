#include "qlip/diffusion.hpp"

#include <cmath>
#include <stdexcept>

#include "qlip/linalg.hpp"
#include "qlip/optim.hpp"
#include "qlip/rng.hpp"

namespace qlip {

DiffusionSchedule DiffusionSchedule::linear(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw std::invalid_argument("schedule: steps must be >= 1");
    if (!(beta_start > 0.0 && beta_end > 0.0 && beta_start < 1.0 && beta_end < 1.0))
        throw std::invalid_argument("schedule: betas must lie in (0, 1)");
    DiffusionSchedule s;
    s.steps = steps;
    s.beta.resize(static_cast<size_t>(steps));
    s.alpha.resize(static_cast<size_t>(steps));
    s.alpha_bar.resize(static_cast<size_t>(steps));
    s.sigma.resize(static_cast<size_t>(steps));
    double prod = 1.0;
    for (int t = 1; t <= steps; ++t) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / (steps - 1);
        const double b = beta_start + frac * (beta_end - beta_start);
        s.beta[static_cast<size_t>(t - 1)] = b;
        s.alpha[static_cast<size_t>(t - 1)] = 1.0 - b;
        prod *= 1.0 - b;
        s.alpha_bar[static_cast<size_t>(t - 1)] = prod;
        s.sigma[static_cast<size_t>(t - 1)] = std::sqrt(b);
    }
    return s;
}

size_t DiffusionSchedule::check(int t) const {
    if (t < 1 || t > steps)
        throw std::out_of_range("schedule: timestep " + std::to_string(t) + " outside [1, " +
                                std::to_string(steps) + "]");
    return static_cast<size_t>(t - 1);
}

void DiffusionSchedule::save(Checkpoint& ck) const {
    ck.put_i32("schedule/steps", {1}, {steps});
    ck.put_tensor("schedule/beta", Tensor({steps}, beta));
}

DiffusionSchedule DiffusionSchedule::load(const Checkpoint& ck) {
    const auto steps = ck.i32("schedule/steps").at(0);
    const Tensor beta = ck.tensor("schedule/beta");
    if (beta.numel() != steps) throw std::runtime_error("schedule: beta record length mismatch");
    DiffusionSchedule s;
    s.steps = steps;
    s.beta = beta.data;
    s.alpha.resize(beta.data.size());
    s.alpha_bar.resize(beta.data.size());
    s.sigma.resize(beta.data.size());
    double prod = 1.0;
    for (size_t i = 0; i < beta.data.size(); ++i) {
        s.alpha[i] = 1.0 - s.beta[i];
        prod *= s.alpha[i];
        s.alpha_bar[i] = prod;
        s.sigma[i] = std::sqrt(s.beta[i]);
    }
    return s;
}

Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps, const DiffusionSchedule& sched) {
    if (!same_shape(x0, eps))
        throw std::invalid_argument("forward_noise: sample and noise shapes differ");
    const double ab = sched.alpha_bar_at(t);
    const double c0 = std::sqrt(ab);
    const double c1 = std::sqrt(1.0 - ab);
    Tensor xt(x0.shape);
    for (int64_t i = 0; i < x0.numel(); ++i) xt.at(i) = c0 * x0.at(i) + c1 * eps.at(i);
    return xt;
}

Tensor reverse_step(const Tensor& xt, int t, const Tensor& eps_pred, const Tensor& noise,
                    const DiffusionSchedule& sched) {
    if (!same_shape(xt, eps_pred))
        throw std::invalid_argument("reverse_step: state and prediction shapes differ");
    const double beta = sched.beta_at(t);
    const double alpha = sched.alpha_at(t);
    const double ab = sched.alpha_bar_at(t);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
    const double coef = beta / std::sqrt(1.0 - ab);
    const double sig = t == 1 ? 0.0 : sched.sigma_at(t);
    if (sig != 0.0 && !same_shape(xt, noise))
        throw std::invalid_argument("reverse_step: state and noise shapes differ");
    Tensor out(xt.shape);
    for (int64_t i = 0; i < xt.numel(); ++i) {
        const double mu = inv_sqrt_alpha * (xt.at(i) - coef * eps_pred.at(i));
        out.at(i) = sig == 0.0 ? mu : mu + sig * noise.at(i);
    }
    return out;
}

void DenoiserConfig::validate() const {
    if (data_dim < 1 || width < 1 || quant_layers < 1 || time_dim < 2 || cond_dim < 1)
        throw std::invalid_argument("denoiser config: dimensions must be positive (time_dim >= 2)");
    if (time_dim % 2 != 0)
        throw std::invalid_argument("denoiser config: time_dim must be even");
}

Denoiser Denoiser::init(const DenoiserConfig& cfg, uint64_t seed) {
    cfg.validate();
    Denoiser d;
    d.cfg = cfg;
    auto he_fill = [&](Tensor& w, int64_t fan_in, const std::string& tag) {
        RngStream rng(seed, "denoiser.init." + tag);
        const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (double& v : w.data) v = sd * rng.normal();
    };
    d.w_in = Tensor({cfg.input_dim(), cfg.width});
    d.b_in = Tensor({cfg.width});
    he_fill(d.w_in, cfg.input_dim(), "w_in");
    for (int k = 0; k < cfg.quant_layers; ++k) {
        Tensor w({cfg.width, cfg.width});
        he_fill(w, cfg.width, "w_mid." + std::to_string(k));
        d.w_mid.push_back(std::move(w));
        d.b_mid.emplace_back(Shape{cfg.width});
    }
    d.w_out = Tensor({cfg.width, cfg.data_dim});
    {
        // small output init keeps early predictions near zero
        RngStream rng(seed, "denoiser.init.w_out");
        const double sd = 0.1 * std::sqrt(1.0 / static_cast<double>(cfg.width));
        for (double& v : d.w_out.data) v = sd * rng.normal();
    }
    d.b_out = Tensor({cfg.data_dim});
    return d;
}

Tensor Denoiser::time_embedding(int t) const {
    const int half = cfg.time_dim / 2;
    Tensor emb({cfg.time_dim});
    for (int i = 0; i < half; ++i) {
        const double freq =
            std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        emb.at(2 * i) = std::sin(static_cast<double>(t) * freq);
        emb.at(2 * i + 1) = std::cos(static_cast<double>(t) * freq);
    }
    return emb;
}

std::vector<std::pair<std::string, Tensor*>> Denoiser::trainable() {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.emplace_back("w_in", &w_in);
    out.emplace_back("b_in", &b_in);
    for (size_t k = 0; k < w_mid.size(); ++k) {
        out.emplace_back("w_mid." + std::to_string(k), &w_mid[k]);
        out.emplace_back("b_mid." + std::to_string(k), &b_mid[k]);
    }
    out.emplace_back("w_out", &w_out);
    out.emplace_back("b_out", &b_out);
    return out;
}

void Denoiser::save(Checkpoint& ck) const {
    ck.put_i32("model/meta", {5},
               {cfg.data_dim, cfg.width, cfg.quant_layers, cfg.time_dim, cfg.cond_dim});
    ck.put_tensor("model/w_in", w_in);
    ck.put_tensor("model/b_in", b_in);
    for (size_t k = 0; k < w_mid.size(); ++k) {
        ck.put_tensor("model/w_mid." + std::to_string(k), w_mid[k]);
        ck.put_tensor("model/b_mid." + std::to_string(k), b_mid[k]);
    }
    ck.put_tensor("model/w_out", w_out);
    ck.put_tensor("model/b_out", b_out);
}

Denoiser Denoiser::load(const Checkpoint& ck) {
    const auto meta = ck.i32("model/meta");
    if (meta.size() != 5) throw std::runtime_error("denoiser: malformed meta record");
    Denoiser d;
    d.cfg = {meta[0], meta[1], meta[2], meta[3], meta[4]};
    d.cfg.validate();
    d.w_in = ck.tensor("model/w_in");
    d.b_in = ck.tensor("model/b_in");
    for (int k = 0; k < d.cfg.quant_layers; ++k) {
        d.w_mid.push_back(ck.tensor("model/w_mid." + std::to_string(k)));
        d.b_mid.push_back(ck.tensor("model/b_mid." + std::to_string(k)));
    }
    d.w_out = ck.tensor("model/w_out");
    d.b_out = ck.tensor("model/b_out");
    return d;
}

QuantWeights QuantWeights::build(const Denoiser& d, int weight_bits) {
    QuantWeights qw;
    qw.weight_bits = weight_bits;
    for (const Tensor& w : d.w_mid) {
        if (weight_bits == 32) {
            qw.w_mid.push_back(w);
            continue;
        }
        double peak = 0.0;
        for (double v : w.data) peak = std::max(peak, std::fabs(v));
        if (peak == 0.0) peak = 1e-6;
        const auto spec = make_quantizer({-peak, peak}, weight_bits);
        qw.w_mid.push_back(fake_quantize(w, spec));
    }
    return qw;
}

namespace {

void affine_relu(const Tensor& w, const Tensor& b, const double* x, double* out, bool relu_after) {
    const int64_t in = w.shape[0], width = w.shape[1];
    matvec(w.data.data(), x, out, in, width);
    for (int64_t j = 0; j < width; ++j) {
        out[j] += b.at(j);
        if (relu_after && out[j] < 0.0) out[j] = 0.0;
    }
}

}  // namespace

Tensor denoise_forward(const Denoiser& d, const Tensor& x, int t, const Tensor& z,
                       const QuantArgs* quant, const ActObserver* observer) {
    const auto& cfg = d.cfg;
    if (x.numel() != cfg.data_dim)
        throw std::invalid_argument("denoise_forward: state has " + std::to_string(x.numel()) +
                                    " entries, expected " + std::to_string(cfg.data_dim));
    if (z.numel() != cfg.cond_dim)
        throw std::invalid_argument("denoise_forward: condition has " + std::to_string(z.numel()) +
                                    " entries, expected " + std::to_string(cfg.cond_dim));
    const Tensor emb = d.time_embedding(t);

    std::vector<double> h(static_cast<size_t>(cfg.input_dim()));
    size_t off = 0;
    for (int64_t i = 0; i < x.numel(); ++i) h[off++] = x.at(i);
    for (int64_t i = 0; i < emb.numel(); ++i) h[off++] = emb.at(i);
    for (int64_t i = 0; i < z.numel(); ++i) h[off++] = z.at(i);

    std::vector<double> act(static_cast<size_t>(cfg.width));
    affine_relu(d.w_in, d.b_in, h.data(), act.data(), true);

    std::vector<double> next(static_cast<size_t>(cfg.width));
    for (int k = 0; k < cfg.quant_layers; ++k) {
        if (observer != nullptr && *observer)
            (*observer)(k, act.data(), static_cast<int64_t>(act.size()));
        const Tensor* w = &d.w_mid[static_cast<size_t>(k)];
        if (quant != nullptr) {
            const auto spec = quant->ranges->spec_for(k, quant->group, quant->bits[k]);
            if (!spec.is_identity())
                for (double& v : act) v = fake_quantize(v, spec);
            w = &quant->weights->w_mid[static_cast<size_t>(k)];
        }
        affine_relu(*w, d.b_mid[static_cast<size_t>(k)], act.data(), next.data(), true);
        std::swap(act, next);
    }

    Tensor out({cfg.data_dim});
    affine_relu(d.w_out, d.b_out, act.data(), out.data.data(), false);
    return out;
}

DenoiserVars bind_denoiser(Tape& tape, Denoiser& d) {
    DenoiserVars v;
    v.w_in = tape.param(d.w_in);
    v.b_in = tape.param(d.b_in);
    for (size_t k = 0; k < d.w_mid.size(); ++k) {
        v.w_mid.push_back(tape.param(d.w_mid[k]));
        v.b_mid.push_back(tape.param(d.b_mid[k]));
    }
    v.w_out = tape.param(d.w_out);
    v.b_out = tape.param(d.b_out);
    return v;
}

Var denoiser_tape_forward(Tape& tape, const Denoiser& d, const DenoiserVars& vars, Var x, int t,
                          const Tensor& z) {
    const Var emb = tape.constant(d.time_embedding(t));
    const Var zc = tape.constant(z);
    Var h = tape.concat({x, emb, zc});
    h = tape.relu(tape.add(tape.matmul(h, vars.w_in), vars.b_in));
    for (size_t k = 0; k < vars.w_mid.size(); ++k)
        h = tape.relu(tape.add(tape.matmul(h, vars.w_mid[k]), vars.b_mid[k]));
    return tape.add(tape.matmul(h, vars.w_out), vars.b_out);
}

Var quantized_tape_forward(Tape& tape, const Denoiser& d, const QuantWeights& qw,
                           const RangeTable& rt, const BitMenu& menu, int group,
                           const std::vector<std::array<Var, 3>>& layer_probs,
                           const std::vector<int>& selected, Var x, int t, const Tensor& z,
                           HookTrace* trace) {
    const int K = d.cfg.quant_layers;
    if (static_cast<int>(layer_probs.size()) != K || static_cast<int>(selected.size()) != K)
        throw std::invalid_argument(
            "quantized_tape_forward: need probabilities and a selection for every hooked layer");
    const Var emb = tape.constant(d.time_embedding(t));
    const Var zc = tape.constant(z);
    Var h = tape.concat({x, emb, zc});
    h = tape.relu(tape.add(tape.matmul(h, tape.constant(d.w_in)), tape.constant(d.b_in)));
    const auto menu_bits = menu.bits();
    for (int k = 0; k < K; ++k) {
        std::array<QuantizerSpec, 3> specs;
        for (int b = 0; b < 3; ++b)
            specs[static_cast<size_t>(b)] =
                rt.spec_for(k, group, menu_bits[static_cast<size_t>(b)]);
        const Var hooked = ste_mixture_quantize(tape, h, layer_probs[static_cast<size_t>(k)],
                                                specs, selected[static_cast<size_t>(k)]);
        if (trace != nullptr) {
            const QuantizeRecord* rec = tape.quantize_record(hooked);
            trace->input.push_back(tape.value(h));
            trace->quantized.push_back(rec->quantized);
            trace->in_range.push_back(rec->in_range);
            trace->probs.push_back(rec->probs);
            trace->selected.push_back(rec->selected);
        }
        h = tape.relu(tape.add(tape.matmul(hooked, tape.constant(qw.w_mid[static_cast<size_t>(k)])),
                               tape.constant(d.b_mid[static_cast<size_t>(k)])));
    }
    return tape.add(tape.matmul(h, tape.constant(d.w_out)), tape.constant(d.b_out));
}

SamplerOutput ancestral_sample(const Denoiser& d, const DiffusionSchedule& sched,
                               const QuantWeights* qw, const RangeTable* rt, const BitPlan& plan,
                               const Tensor& z, uint64_t seed, uint64_t sample_index,
                               const StepObserver* observer) {
    const int K = d.cfg.quant_layers;
    const int T = sched.steps;
    if (plan.layers != K || plan.steps != T)
        throw std::invalid_argument("sample: plan is " + std::to_string(plan.layers) + "x" +
                                    std::to_string(plan.steps) + ", model needs " +
                                    std::to_string(K) + "x" + std::to_string(T));
    const bool quantized = qw != nullptr;
    if (quantized && rt == nullptr)
        throw std::invalid_argument("sample: quantized run needs calibrated ranges");

    RngStream rng(seed, "sample." + std::to_string(sample_index));
    Tensor x({d.cfg.data_dim});
    for (double& v : x.data) v = rng.normal();

    std::vector<int> bits(static_cast<size_t>(K), 32);
    for (int step = 1; step <= T; ++step) {
        const int t = T - step + 1;  // schedule index; step counts from max noise
        Tensor eps_pred({d.cfg.data_dim});
        ActObserver act_obs;
        const ActObserver* act_obs_ptr = nullptr;
        if (observer != nullptr && *observer) {
            act_obs = [&](int layer, const double* values, int64_t n) {
                (*observer)(layer, step, values, n);
            };
            act_obs_ptr = &act_obs;
        }
        if (quantized) {
            for (int k = 0; k < K; ++k) bits[static_cast<size_t>(k)] = plan.at(k, step);
            QuantArgs qa{qw, rt, rt->group_of_step(step), bits.data()};
            eps_pred = denoise_forward(d, x, t, z, &qa, act_obs_ptr);
        } else {
            eps_pred = denoise_forward(d, x, t, z, nullptr, act_obs_ptr);
        }
        Tensor noise({d.cfg.data_dim});
        if (t > 1)
            for (double& v : noise.data) v = rng.normal();
        x = reverse_step(x, t, eps_pred, noise, sched);
    }
    return {std::move(x), plan};
}

double pretrain_denoiser(Denoiser& d, const std::vector<TrainPair>& data,
                         const DiffusionSchedule& sched, const PretrainConfig& cfg,
                         uint64_t seed) {
    if (data.empty()) throw std::invalid_argument("pretrain: empty dataset");
    if (cfg.iterations < 1 || cfg.batch < 1)
        throw std::invalid_argument("pretrain: iterations and batch must be positive");
    Adam opt(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
    for (auto& [name, tensor] : d.trainable()) opt.add_param(name, tensor);

    RngStream pick(seed, "pretrain.pick");
    RngStream noise(seed, "pretrain.noise");
    const int tail_start = cfg.iterations - std::max(1, cfg.iterations / 10);
    double tail_sum = 0.0;
    int64_t tail_n = 0;

    for (int it = 0; it < cfg.iterations; ++it) {
        opt.zero_grad();
        Tape tape;
        const DenoiserVars vars = bind_denoiser(tape, d);
        Var loss = tape.constant(0.0);
        for (int b = 0; b < cfg.batch; ++b) {
            const auto& pair = data[static_cast<size_t>(
                pick.uniform_int(0, static_cast<int64_t>(data.size()) - 1))];
            const int t = static_cast<int>(pick.uniform_int(1, sched.steps));
            Tensor eps({d.cfg.data_dim});
            for (double& v : eps.data) v = noise.normal();
            const Tensor xt = forward_noise(pair.x0, t, eps, sched);
            const Var pred = denoiser_tape_forward(tape, d, vars, tape.constant(xt), t, pair.z);
            loss = tape.add(loss, tape.mean(tape.sq_err(pred, tape.constant(eps))));
        }
        loss = tape.affine(loss, 1.0 / static_cast<double>(cfg.batch), 0.0);
        tape.backward(loss);
        opt.step();
        if (it >= tail_start) {
            tail_sum += tape.value(loss).at(0);
            ++tail_n;
        }
    }
    return tail_sum / static_cast<double>(tail_n);
}

}  // namespace qlip
