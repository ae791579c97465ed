#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "doctest.h"
#include "qlip/errors.hpp"
#include "qlip/optim.hpp"
#include "qlip/quant.hpp"
#include "qlip/rng.hpp"
#include "qlip/tape.hpp"
#include "qlip/tensor.hpp"

using namespace qlip;

namespace {

using GraphBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

// Compares backward() against a central finite difference of the same graph.
void check_gradients(const GraphBuilder& build, const std::vector<Tensor>& params,
                     double tol = 1e-5) {
    std::vector<double> theta;
    for (const auto& p : params) theta.insert(theta.end(), p.data.begin(), p.data.end());

    const auto eval = [&](const std::vector<double>& th) {
        std::vector<Tensor> locals = params;
        size_t off = 0;
        for (auto& p : locals) {
            std::copy(th.begin() + static_cast<long>(off),
                      th.begin() + static_cast<long>(off + p.data.size()), p.data.begin());
            off += p.data.size();
        }
        Tape tape;
        std::vector<Var> vars;
        vars.reserve(locals.size());
        for (auto& p : locals) vars.push_back(tape.param(p));
        return tape.value(build(tape, vars)).at(0);
    };
    const std::vector<double> fd = finite_difference_gradient(eval, theta);

    std::vector<Tensor> locals = params;
    Tape tape;
    std::vector<Var> vars;
    for (auto& p : locals) vars.push_back(tape.param(p));
    tape.backward(build(tape, vars));
    std::vector<double> analytic;
    for (const auto& p : locals) analytic.insert(analytic.end(), p.grad.begin(), p.grad.end());

    REQUIRE(analytic.size() == fd.size());
    CHECK(max_relative_error(analytic, fd) < tol);
}

Tensor random_tensor(Shape shape, uint64_t seed, const char* stream, double lo = -1.5,
                     double hi = 1.5) {
    Tensor t(std::move(shape));
    RngStream rng(seed, stream);
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("gradients: dense sigmoid head over a matmul") {
    for (uint64_t seed : {1ull, 2ull, 3ull, 4ull}) {
        const Tensor x = random_tensor({3}, seed, "x");
        const Tensor w = random_tensor({3, 4}, seed, "w");
        const Tensor b = random_tensor({4}, seed, "b");
        check_gradients(
            [](Tape& t, const std::vector<Var>& v) {
                return t.mean(t.sigmoid(t.add(t.matmul(v[0], v[1]), v[2])));
            },
            {x, w, b});
    }
}

TEST_CASE("gradients: relu away from its kink") {
    Tensor x({4}, {0.8, -0.7, 1.2, -2.0});  // no activation near zero
    const Tensor w = random_tensor({4}, 9, "w");
    check_gradients(
        [](Tape& t, const std::vector<Var>& v) { return t.sum(t.mul(t.relu(v[0]), v[1])); },
        {x, w});
}

TEST_CASE("gradients: rank-2 matmul chain") {
    for (uint64_t seed : {11ull, 12ull}) {
        const Tensor a = random_tensor({2, 3}, seed, "a");
        const Tensor b = random_tensor({3, 2}, seed, "b");
        check_gradients(
            [](Tape& t, const std::vector<Var>& v) { return t.mean(t.matmul(v[0], v[1])); },
            {a, b});
    }
}

TEST_CASE("gradients: sub, mul, affine, sq_err, sum") {
    for (uint64_t seed : {21ull, 22ull, 23ull}) {
        const Tensor a = random_tensor({5}, seed, "a");
        const Tensor b = random_tensor({5}, seed, "b");
        const Tensor c = random_tensor({5}, seed, "c");
        check_gradients(
            [](Tape& t, const std::vector<Var>& v) {
                const Var d = t.mul(t.sub(v[0], v[1]), t.affine(v[2], 0.5, 0.25));
                return t.sum(t.sq_err(d, v[1]));
            },
            {a, b, c});
    }
}

TEST_CASE("gradients: scalar broadcasting on both sides") {
    const Tensor a = random_tensor({6}, 31, "a");
    const Tensor s = Tensor::scalar(0.75);
    check_gradients(
        [](Tape& t, const std::vector<Var>& v) {
            const Var left = t.mul(v[1], v[0]);   // scalar * vector
            const Var right = t.add(v[0], v[1]);  // vector + scalar
            return t.mean(t.mul(t.sub(left, v[1]), right));
        },
        {a, s});
}

TEST_CASE("gradients: concat and slice") {
    const Tensor a = random_tensor({2}, 41, "a");
    const Tensor b = random_tensor({3}, 41, "b");
    const Tensor c = random_tensor({8}, 41, "c");
    check_gradients(
        [](Tape& t, const std::vector<Var>& v) {
            const Var joined = t.concat({v[0], v[1]});
            const Var window = t.slice(v[2], 1, 5);
            return t.mean(t.sq_err(joined, window));
        },
        {a, b, c});
}

TEST_CASE("a parameter used twice accumulates both contributions") {
    Tensor a({3}, {0.5, -1.0, 2.0});
    Tape tape;
    const Var v = tape.param(a);
    tape.backward(tape.sum(tape.add(tape.mul(v, v), v)));  // d/da (a^2 + a) = 2a + 1
    CHECK(a.grad[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(a.grad[1] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(a.grad[2] == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("sigmoid forward value is exact") {
    Tape tape;
    const Var v = tape.sigmoid(tape.constant(Tensor::scalar(2.0)));
    CHECK(tape.value(v).at(0) == doctest::Approx(0.8807970779778823).epsilon(1e-15));
}

TEST_CASE("input leaves expose their adjoint without owning storage") {
    const Tensor x({2}, {3.0, -1.0});
    Tape tape;
    const Var v = tape.input(x);
    tape.backward(tape.sum(tape.mul(v, v)));
    const auto& g = tape.grad(v);
    REQUIRE(g.size() == 2);
    CHECK(g[0] == doctest::Approx(6.0));
    CHECK(g[1] == doctest::Approx(-2.0));
    CHECK(x.grad.empty());  // input() never touches the tensor
}

TEST_CASE("straight-through quantize node: exact backward rule") {
    // menu: two real quantizers plus a 32-bit identity entry
    const auto lo_spec = make_quantizer({-1.0, 1.0}, 3);
    const auto hi_spec = make_quantizer({-1.0, 1.0}, 5);
    QuantizerSpec id_spec;  // bits 32

    const Tensor a({4}, {-1.4, -0.3, 0.6, 1.7});  // two entries outside the clip range
    const Tensor w({4}, {2.0, -1.0, 0.5, 3.0});
    const std::array<double, 3> p = {0.2, 0.5, 0.3};

    for (int selected = 0; selected < 3; ++selected) {
        Tensor pt({3}, {p[0], p[1], p[2]});
        Tensor at = a;
        Tape tape;
        const Var av = tape.param(at);
        const Var pv = tape.param(pt);
        const std::array<Var, 3> probs = {tape.slice(pv, 0, 1), tape.slice(pv, 1, 1),
                                          tape.slice(pv, 2, 1)};
        const std::array<QuantizerSpec, 3> specs = {lo_spec, hi_spec, id_spec};
        const Var hook = ste_mixture_quantize(tape, av, probs, specs, selected);
        tape.backward(tape.sum(tape.mul(hook, tape.constant(w))));

        // forward emits the hard selection
        const Tensor& out = tape.value(hook);
        for (int i = 0; i < 4; ++i)
            CHECK(out.at(i) == fake_quantize(a.at(i), specs[static_cast<size_t>(selected)]));

        // input: sum_b p_b * (identity ? dy : dy * in_range)
        for (int i = 0; i < 4; ++i) {
            const bool in = a.at(i) >= -1.0 && a.at(i) <= 1.0;
            const double expect = w.at(i) * (p[0] * (in ? 1.0 : 0.0) +
                                             p[1] * (in ? 1.0 : 0.0) + p[2] * 1.0);
            CHECK(at.grad[static_cast<size_t>(i)] == doctest::Approx(expect).epsilon(1e-12));
        }
        // probabilities: exact inner product dy . Q_b(a)
        for (int b = 0; b < 3; ++b) {
            double expect = 0.0;
            for (int i = 0; i < 4; ++i)
                expect += w.at(i) * fake_quantize(a.at(i), specs[static_cast<size_t>(b)]);
            CHECK(pt.grad[static_cast<size_t>(b)] == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("adam's first step moves every coordinate by roughly the learning rate") {
    Tensor p({3}, {1.0, 2.0, 3.0});
    Adam opt(AdamConfig{0.01, 0.9, 0.999, 1e-8});
    opt.add_param("p", &p);
    p.ensure_grad();
    p.grad = {0.5, -2.0, 1e-3};
    opt.step();
    CHECK(p.at(0) == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
    CHECK(p.at(1) == doctest::Approx(2.0 + 0.01).epsilon(1e-6));
    // tiny gradients still move by ~lr thanks to bias correction
    CHECK(p.at(2) == doctest::Approx(3.0 - 0.01).epsilon(1e-4));
}

TEST_CASE("adam rejects non-finite gradients by name") {
    Tensor p({1}, {1.0});
    Adam opt;
    opt.add_param("theta", &p);
    p.ensure_grad();
    p.grad[0] = std::numeric_limits<double>::quiet_NaN();
    try {
        opt.step();
        FAIL("expected a NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("theta") != std::string::npos);
    }
}
