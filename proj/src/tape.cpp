#include "qlip/tape.hpp"

#include <cmath>
#include <stdexcept>

#include "qlip/linalg.hpp"

namespace qlip {

namespace {

double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

int32_t Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int32_t>(nodes_.size() - 1);
}

void Tape::check(Var v) const {
    if (!v.valid() || v.id >= static_cast<int32_t>(nodes_.size()))
        throw std::invalid_argument("tape: handle does not belong to this tape");
}

Tape::Node& Tape::node(Var v) {
    check(v);
    return nodes_[static_cast<size_t>(v.id)];
}

const Tape::Node& Tape::node(Var v) const {
    check(v);
    return nodes_[static_cast<size_t>(v.id)];
}

Var Tape::param(Tensor& t) {
    Node n;
    n.op = Op::leaf;
    n.value = t;
    n.bound = &t;
    return {push(std::move(n))};
}

Var Tape::input(const Tensor& t) {
    Node n;
    n.op = Op::leaf;
    n.value = t;
    return {push(std::move(n))};
}

Var Tape::constant(const Tensor& t) {
    Node n;
    n.op = Op::constant;
    n.value = t;
    return {push(std::move(n))};
}

Var Tape::constant(double v) { return constant(Tensor::scalar(v)); }

Var Tape::matmul(Var a, Var b) {
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    if (tb.rank() != 2) throw std::invalid_argument("matmul: right operand must be rank 2");
    const int64_t k = tb.shape[0], ncols = tb.shape[1];
    Node n;
    n.op = Op::matmul;
    n.parents = {a.id, b.id};
    if (ta.rank() == 1) {
        if (ta.shape[0] != k) throw std::invalid_argument("matmul: inner dimensions disagree");
        n.value = Tensor({ncols});
        matvec(tb.data.data(), ta.data.data(), n.value.data.data(), k, ncols);
    } else if (ta.rank() == 2) {
        if (ta.shape[1] != k) throw std::invalid_argument("matmul: inner dimensions disagree");
        const int64_t m = ta.shape[0];
        n.value = Tensor({m, ncols});
        for (int64_t r = 0; r < m; ++r)
            matvec(tb.data.data(), ta.data.data() + r * k, n.value.data.data() + r * ncols, k,
                   ncols);
    } else {
        throw std::invalid_argument("matmul: left operand must be rank 1 or 2");
    }
    return {push(std::move(n))};
}

static void binary_shape_check(const Tensor& a, const Tensor& b, const char* what) {
    if (!same_shape(a, b) && !a.is_scalar() && !b.is_scalar())
        throw std::invalid_argument(std::string(what) + ": shapes " + shape_str(a.shape) +
                                    " and " + shape_str(b.shape) + " do not match");
}

Var Tape::add(Var a, Var b) {
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    binary_shape_check(ta, tb, "add");
    Node n;
    n.op = Op::add;
    n.parents = {a.id, b.id};
    n.value = ta.is_scalar() && !tb.is_scalar() ? Tensor(tb.shape) : Tensor(ta.shape);
    for (int64_t i = 0; i < n.value.numel(); ++i)
        n.value.at(i) = (ta.is_scalar() ? ta.at(0) : ta.at(i)) +
                        (tb.is_scalar() ? tb.at(0) : tb.at(i));
    return {push(std::move(n))};
}

Var Tape::sub(Var a, Var b) {
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    binary_shape_check(ta, tb, "sub");
    Node n;
    n.op = Op::sub;
    n.parents = {a.id, b.id};
    n.value = ta.is_scalar() && !tb.is_scalar() ? Tensor(tb.shape) : Tensor(ta.shape);
    for (int64_t i = 0; i < n.value.numel(); ++i)
        n.value.at(i) = (ta.is_scalar() ? ta.at(0) : ta.at(i)) -
                        (tb.is_scalar() ? tb.at(0) : tb.at(i));
    return {push(std::move(n))};
}

Var Tape::mul(Var a, Var b) {
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    binary_shape_check(ta, tb, "mul");
    Node n;
    n.op = Op::mul;
    n.parents = {a.id, b.id};
    n.value = ta.is_scalar() && !tb.is_scalar() ? Tensor(tb.shape) : Tensor(ta.shape);
    for (int64_t i = 0; i < n.value.numel(); ++i)
        n.value.at(i) = (ta.is_scalar() ? ta.at(0) : ta.at(i)) *
                        (tb.is_scalar() ? tb.at(0) : tb.at(i));
    return {push(std::move(n))};
}

Var Tape::relu(Var a) {
    const Tensor& ta = node(a).value;
    Node n;
    n.op = Op::relu;
    n.parents = {a.id};
    n.value = Tensor(ta.shape);
    for (int64_t i = 0; i < ta.numel(); ++i) n.value.at(i) = ta.at(i) > 0.0 ? ta.at(i) : 0.0;
    return {push(std::move(n))};
}

Var Tape::sigmoid(Var a) {
    const Tensor& ta = node(a).value;
    Node n;
    n.op = Op::sigmoid;
    n.parents = {a.id};
    n.value = Tensor(ta.shape);
    for (int64_t i = 0; i < ta.numel(); ++i) n.value.at(i) = sigmoid_scalar(ta.at(i));
    return {push(std::move(n))};
}

Var Tape::concat(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat: no inputs");
    int64_t total = 0;
    for (Var x : xs) {
        const Tensor& t = node(x).value;
        if (t.rank() != 1) throw std::invalid_argument("concat: inputs must be rank 1");
        total += t.numel();
    }
    Node n;
    n.op = Op::concat;
    for (Var x : xs) n.parents.push_back(x.id);
    n.value = Tensor({total});
    int64_t off = 0;
    for (Var x : xs) {
        const Tensor& t = node(x).value;
        for (int64_t i = 0; i < t.numel(); ++i) n.value.at(off + i) = t.at(i);
        off += t.numel();
    }
    return {push(std::move(n))};
}

Var Tape::slice(Var a, int64_t start, int64_t len, Shape out_shape) {
    const Tensor& ta = node(a).value;
    if (start < 0 || len < 0 || start + len > ta.numel())
        throw std::invalid_argument("slice: window out of bounds");
    if (out_shape.empty()) out_shape = {len};
    if (shape_numel(out_shape) != len)
        throw std::invalid_argument("slice: output shape does not hold the window");
    Node n;
    n.op = Op::slice;
    n.parents = {a.id};
    n.start = start;
    n.value = Tensor(out_shape);
    for (int64_t i = 0; i < len; ++i) n.value.at(i) = ta.at(start + i);
    return {push(std::move(n))};
}

Var Tape::sum(Var a) {
    const Tensor& ta = node(a).value;
    Node n;
    n.op = Op::sum;
    n.parents = {a.id};
    double acc = 0.0;
    for (int64_t i = 0; i < ta.numel(); ++i) acc += ta.at(i);
    n.value = Tensor::scalar(acc);
    return {push(std::move(n))};
}

Var Tape::mean(Var a) {
    const Tensor& ta = node(a).value;
    if (ta.numel() == 0) throw std::invalid_argument("mean: empty input");
    Node n;
    n.op = Op::mean;
    n.parents = {a.id};
    double acc = 0.0;
    for (int64_t i = 0; i < ta.numel(); ++i) acc += ta.at(i);
    n.value = Tensor::scalar(acc / static_cast<double>(ta.numel()));
    return {push(std::move(n))};
}

Var Tape::sq_err(Var a, Var b) {
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    if (!same_shape(ta, tb))
        throw std::invalid_argument("sq_err: shapes " + shape_str(ta.shape) + " and " +
                                    shape_str(tb.shape) + " do not match");
    Node n;
    n.op = Op::sq_err;
    n.parents = {a.id, b.id};
    n.value = Tensor(ta.shape);
    for (int64_t i = 0; i < ta.numel(); ++i) {
        const double d = ta.at(i) - tb.at(i);
        n.value.at(i) = d * d;
    }
    return {push(std::move(n))};
}

Var Tape::affine(Var a, double scale, double shift) {
    const Tensor& ta = node(a).value;
    Node n;
    n.op = Op::affine;
    n.parents = {a.id};
    n.c0 = scale;
    n.c1 = shift;
    n.value = Tensor(ta.shape);
    for (int64_t i = 0; i < ta.numel(); ++i) n.value.at(i) = scale * ta.at(i) + shift;
    return {push(std::move(n))};
}

Var Tape::quantize(Var a, Var p_low, Var p_med, Var p_high, QuantizeRecord rec) {
    const Tensor& ta = node(a).value;
    for (const Tensor& q : rec.quantized)
        if (!same_shape(q, ta))
            throw std::invalid_argument("quantize: recorded tensors do not match the input shape");
    if (rec.in_range.size() != ta.data.size())
        throw std::invalid_argument("quantize: mask size does not match the input");
    if (rec.selected < 0 || rec.selected > 2)
        throw std::invalid_argument("quantize: selected index out of range");
    for (Var p : {p_low, p_med, p_high})
        if (!node(p).value.is_scalar())
            throw std::invalid_argument("quantize: probability operands must be scalars");
    Node n;
    n.op = Op::quantize;
    n.parents = {a.id, p_low.id, p_med.id, p_high.id};
    n.value = rec.quantized[static_cast<size_t>(rec.selected)];
    n.qrec = std::make_unique<QuantizeRecord>(std::move(rec));
    return {push(std::move(n))};
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

const QuantizeRecord* Tape::quantize_record(Var v) const { return node(v).qrec.get(); }

const std::vector<double>& Tape::grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.size() != n.value.data.size())
        throw std::runtime_error("tape: gradients not available; run backward() first");
    return n.grad;
}

void Tape::backward(Var loss) {
    Node& top = node(loss);
    if (!top.value.is_scalar())
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    shape_str(top.value.shape));
    for (Node& n : nodes_) n.grad.assign(n.value.data.size(), 0.0);
    top.grad[0] = 1.0;

    for (int64_t idx = static_cast<int64_t>(nodes_.size()) - 1; idx >= 0; --idx) {
        Node& n = nodes_[static_cast<size_t>(idx)];
        const auto& dy = n.grad;
        auto parent_grad = [&](int slot) -> std::vector<double>& {
            return nodes_[static_cast<size_t>(n.parents[static_cast<size_t>(slot)])].grad;
        };
        auto parent_val = [&](int slot) -> const Tensor& {
            return nodes_[static_cast<size_t>(n.parents[static_cast<size_t>(slot)])].value;
        };
        switch (n.op) {
            case Op::leaf:
            case Op::constant:
                break;
            case Op::matmul: {
                const Tensor& ta = parent_val(0);
                const Tensor& tb = parent_val(1);
                auto& da = parent_grad(0);
                auto& db = parent_grad(1);
                const int64_t k = tb.shape[0], ncols = tb.shape[1];
                const int64_t m = ta.rank() == 1 ? 1 : ta.shape[0];
                for (int64_t r = 0; r < m; ++r) {
                    const double* dyr = dy.data() + r * ncols;
                    const double* xr = ta.data.data() + r * k;
                    for (int64_t i = 0; i < k; ++i) {
                        const double* wrow = tb.data.data() + i * ncols;
                        double acc = 0.0;
                        for (int64_t j = 0; j < ncols; ++j) acc += dyr[j] * wrow[j];
                        da[static_cast<size_t>(r * k + i)] += acc;
                        double* dbr = db.data() + i * ncols;
                        const double xi = xr[i];
                        for (int64_t j = 0; j < ncols; ++j) dbr[j] += xi * dyr[j];
                    }
                }
                break;
            }
            case Op::add:
            case Op::sub: {
                const double sgn = n.op == Op::sub ? -1.0 : 1.0;
                const Tensor& ta = parent_val(0);
                const Tensor& tb = parent_val(1);
                auto& da = parent_grad(0);
                auto& db = parent_grad(1);
                for (size_t i = 0; i < dy.size(); ++i) {
                    da[ta.is_scalar() ? 0 : i] += dy[i];
                    db[tb.is_scalar() ? 0 : i] += sgn * dy[i];
                }
                break;
            }
            case Op::mul: {
                const Tensor& ta = parent_val(0);
                const Tensor& tb = parent_val(1);
                auto& da = parent_grad(0);
                auto& db = parent_grad(1);
                for (size_t i = 0; i < dy.size(); ++i) {
                    const double av = ta.is_scalar() ? ta.at(0) : ta.data[i];
                    const double bv = tb.is_scalar() ? tb.at(0) : tb.data[i];
                    da[ta.is_scalar() ? 0 : i] += dy[i] * bv;
                    db[tb.is_scalar() ? 0 : i] += dy[i] * av;
                }
                break;
            }
            case Op::relu: {
                const Tensor& ta = parent_val(0);
                auto& da = parent_grad(0);
                for (size_t i = 0; i < dy.size(); ++i)
                    if (ta.data[i] > 0.0) da[i] += dy[i];
                break;
            }
            case Op::sigmoid: {
                auto& da = parent_grad(0);
                for (size_t i = 0; i < dy.size(); ++i) {
                    const double y = n.value.data[i];
                    da[i] += dy[i] * y * (1.0 - y);
                }
                break;
            }
            case Op::concat: {
                size_t off = 0;
                for (size_t p = 0; p < n.parents.size(); ++p) {
                    auto& dp = nodes_[static_cast<size_t>(n.parents[p])].grad;
                    for (size_t i = 0; i < dp.size(); ++i) dp[i] += dy[off + i];
                    off += dp.size();
                }
                break;
            }
            case Op::slice: {
                auto& da = parent_grad(0);
                for (size_t i = 0; i < dy.size(); ++i)
                    da[static_cast<size_t>(n.start) + i] += dy[i];
                break;
            }
            case Op::sum: {
                auto& da = parent_grad(0);
                for (size_t i = 0; i < da.size(); ++i) da[i] += dy[0];
                break;
            }
            case Op::mean: {
                auto& da = parent_grad(0);
                const double g = dy[0] / static_cast<double>(da.size());
                for (size_t i = 0; i < da.size(); ++i) da[i] += g;
                break;
            }
            case Op::sq_err: {
                const Tensor& ta = parent_val(0);
                const Tensor& tb = parent_val(1);
                auto& da = parent_grad(0);
                auto& db = parent_grad(1);
                for (size_t i = 0; i < dy.size(); ++i) {
                    const double d = 2.0 * (ta.data[i] - tb.data[i]) * dy[i];
                    da[i] += d;
                    db[i] -= d;
                }
                break;
            }
            case Op::affine: {
                auto& da = parent_grad(0);
                for (size_t i = 0; i < dy.size(); ++i) da[i] += n.c0 * dy[i];
                break;
            }
            case Op::quantize: {
                const QuantizeRecord& rec = *n.qrec;
                auto& da = parent_grad(0);
                // pass-through weight: sum_i p_i inside the clip range,
                // with 32-bit entries passing everywhere
                for (size_t i = 0; i < dy.size(); ++i) {
                    double w = 0.0;
                    for (int b = 0; b < 3; ++b)
                        if (rec.identity[static_cast<size_t>(b)] || rec.in_range[i])
                            w += rec.probs[static_cast<size_t>(b)];
                    da[i] += dy[i] * w;
                }
                for (int b = 0; b < 3; ++b) {
                    auto& dp = parent_grad(1 + b);
                    const Tensor& qb = rec.quantized[static_cast<size_t>(b)];
                    double acc = 0.0;
                    for (size_t i = 0; i < dy.size(); ++i) acc += dy[i] * qb.data[i];
                    dp[0] += acc;
                }
                break;
            }
        }
    }

    for (Node& n : nodes_) {
        if (n.bound != nullptr) {
            n.bound->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) n.bound->grad[i] += n.grad[i];
        }
    }
}

}  // namespace qlip
