#include "qlip/t2q.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "qlip/errors.hpp"
#include "qlip/linalg.hpp"
#include "qlip/metrics.hpp"
#include "qlip/optim.hpp"
#include "qlip/rng.hpp"

namespace qlip {

T2QModel T2QModel::init(int embed_dim, int hidden, uint64_t seed) {
    if (embed_dim < 1 || hidden < 1) throw std::runtime_error("t2q: dims must be >= 1");
    T2QModel m;
    m.embed_dim = embed_dim;
    m.hidden = hidden;
    m.w1 = Tensor::zeros({embed_dim, embed_dim});
    m.w2 = Tensor::zeros({embed_dim, hidden});
    m.b2 = Tensor::zeros({hidden});
    m.w3 = Tensor::zeros({hidden, 1});
    m.b3 = Tensor::zeros({1});
    RngStream r1(seed, "t2q.init.w1");
    const double s1 = std::sqrt(2.0 / embed_dim);
    for (auto& v : m.w1.data) v = s1 * r1.normal();
    RngStream r2(seed, "t2q.init.w2");
    for (auto& v : m.w2.data) v = s1 * r2.normal();
    RngStream r3(seed, "t2q.init.w3");
    const double s3 = std::sqrt(1.0 / hidden);
    for (auto& v : m.w3.data) v = s3 * r3.normal();
    return m;
}

double T2QModel::predict(const Tensor& z) const {
    if (z.numel() != embed_dim)
        throw std::runtime_error("t2q: embedding has " + std::to_string(z.numel()) +
                                 " entries, model expects " + std::to_string(embed_dim));
    std::vector<double> h1(static_cast<size_t>(embed_dim));
    matvec(w1.data.data(), z.data.data(), h1.data(), embed_dim, embed_dim);
    for (auto& v : h1) v = std::max(0.0, v);
    std::vector<double> h2(static_cast<size_t>(hidden));
    matvec(w2.data.data(), h1.data(), h2.data(), embed_dim, hidden);
    for (int i = 0; i < hidden; ++i) h2[static_cast<size_t>(i)] =
        std::max(0.0, h2[static_cast<size_t>(i)] + b2.at(i));
    double y = b3.at(0);
    for (int i = 0; i < hidden; ++i) y += h2[static_cast<size_t>(i)] * w3.at(i);
    return 1.0 / (1.0 + std::exp(-y));
}

void T2QModel::save(Checkpoint& ck) const {
    ck.put_i32("t2q/meta", {2}, {embed_dim, hidden});
    ck.put_tensor("t2q/w1", w1);
    ck.put_tensor("t2q/w2", w2);
    ck.put_tensor("t2q/b2", b2);
    ck.put_tensor("t2q/w3", w3);
    ck.put_tensor("t2q/b3", b3);
}

T2QModel T2QModel::load(const Checkpoint& ck) {
    const auto meta = ck.i32("t2q/meta");
    if (meta.size() != 2) throw std::runtime_error("t2q: malformed meta record");
    T2QModel m;
    m.embed_dim = meta[0];
    m.hidden = meta[1];
    m.w1 = ck.tensor("t2q/w1");
    m.w2 = ck.tensor("t2q/w2");
    m.b2 = ck.tensor("t2q/b2");
    m.w3 = ck.tensor("t2q/w3");
    m.b3 = ck.tensor("t2q/b3");
    return m;
}

T2QVars bind_t2q(Tape& tape, T2QModel& m) {
    T2QVars v;
    v.w1 = tape.constant(m.w1);
    v.w2 = tape.param(m.w2);
    v.b2 = tape.param(m.b2);
    v.w3 = tape.param(m.w3);
    v.b3 = tape.param(m.b3);
    return v;
}

Var t2q_tape_forward(Tape& tape, const T2QVars& vars, Var z) {
    Var h1 = tape.relu(tape.matmul(z, vars.w1));
    Var h2 = tape.relu(tape.add(tape.matmul(h1, vars.w2), vars.b2));
    Var y = tape.add(tape.matmul(h2, vars.w3), vars.b3);
    return tape.sigmoid(y);
}

namespace {

double mse_over(const T2QModel& m, const std::vector<T2QPair>& data,
                const std::vector<size_t>& idx) {
    if (idx.empty()) return std::numeric_limits<double>::quiet_NaN();
    double acc = 0.0;
    for (size_t i : idx) {
        const double d = m.predict(data[i].z) - data[i].q;
        acc += d * d;
    }
    return acc / static_cast<double>(idx.size());
}

}  // namespace

T2QFit train_t2q(T2QModel& m, const std::vector<T2QPair>& data, const T2QTrainConfig& cfg,
                 uint64_t seed) {
    if (data.empty()) throw std::runtime_error("train_t2q: empty dataset");
    if (cfg.epochs < 0 || cfg.batch < 1 || cfg.holdout < 0.0 || cfg.holdout >= 1.0)
        throw std::runtime_error("train_t2q: invalid training configuration");
    for (const auto& p : data)
        if (p.q < 0.0 || p.q > 1.0)
            throw std::runtime_error("train_t2q: label " + std::to_string(p.q) +
                                     " outside [0, 1]");

    const auto n = data.size();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    RngStream split(seed, "t2q.split");
    for (size_t i = n - 1; i > 0; --i) {
        const auto j = static_cast<size_t>(split.uniform_int(0, static_cast<int64_t>(i)));
        std::swap(order[i], order[j]);
    }
    const auto val_count = static_cast<size_t>(std::llround(cfg.holdout * static_cast<double>(n)));
    std::vector<size_t> val_idx(order.begin(), order.begin() + static_cast<int64_t>(val_count));
    std::vector<size_t> train_idx(order.begin() + static_cast<int64_t>(val_count), order.end());
    if (train_idx.empty()) throw std::runtime_error("train_t2q: holdout leaves no training data");

    Adam opt(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
    opt.add_param("t2q.w2", &m.w2);
    opt.add_param("t2q.b2", &m.b2);
    opt.add_param("t2q.w3", &m.w3);
    opt.add_param("t2q.b3", &m.b3);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        RngStream shuf(seed, "t2q.epoch." + std::to_string(epoch));
        std::vector<size_t> perm = train_idx;
        for (size_t i = perm.size() - 1; i > 0; --i) {
            const auto j = static_cast<size_t>(shuf.uniform_int(0, static_cast<int64_t>(i)));
            std::swap(perm[i], perm[j]);
        }
        for (size_t start = 0; start < perm.size(); start += static_cast<size_t>(cfg.batch)) {
            const size_t stop = std::min(perm.size(), start + static_cast<size_t>(cfg.batch));
            Tape tape;
            T2QVars vars = bind_t2q(tape, m);
            std::vector<Var> errs;
            errs.reserve(stop - start);
            for (size_t i = start; i < stop; ++i) {
                Var z = tape.input(data[perm[i]].z);
                Var y = t2q_tape_forward(tape, vars, z);
                Var label = tape.constant(Tensor({1}, {data[perm[i]].q}));
                errs.push_back(tape.sq_err(y, label));
            }
            Var loss = tape.mean(errs.size() == 1 ? errs[0] : tape.concat(errs));
            opt.zero_grad();
            tape.backward(loss);
            opt.step();
        }
    }

    T2QFit fit;
    fit.train_count = static_cast<int>(train_idx.size());
    fit.val_count = static_cast<int>(val_idx.size());
    fit.train_loss = mse_over(m, data, train_idx);
    fit.val_loss = mse_over(m, data, val_idx);
    if (val_idx.size() >= 3) {
        std::vector<double> pred, truth;
        pred.reserve(val_idx.size());
        truth.reserve(val_idx.size());
        for (size_t i : val_idx) {
            pred.push_back(m.predict(data[i].z));
            truth.push_back(data[i].q);
        }
        try {
            const auto [srocc, plcc] = rank_correlation(pred, truth);
            fit.srocc = srocc;
            fit.plcc = plcc;
            fit.correlations_valid = true;
        } catch (const NumericError&) {
            // constant predictions or labels on the split: leave flag unset
        }
    }
    return fit;
}

}  // namespace qlip
