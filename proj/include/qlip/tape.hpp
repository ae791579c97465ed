#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include "qlip/tensor.hpp"

namespace qlip {

// Handle into the active tape. Valid only for the tape that produced it.
struct Var {
    int32_t id = -1;
    bool valid() const { return id >= 0; }
};

// Payload for the straight-through mixture node. Forward emits the hard
// selection `quantized[selected]`; backward sends gradients to the input
// through the in-range mask and to each probability scalar through the
// corresponding per-bit quantized values.
struct QuantizeRecord {
    std::array<Tensor, 3> quantized;  // per menu entry: low, med, high
    std::array<bool, 3> identity{};   // true where the entry is a 32-bit pass-through
    std::vector<uint8_t> in_range;    // 1 where the input lies inside the shared clip range
    std::array<double, 3> probs{};    // probability values at forward time
    int selected = 0;
};

// Append-only computation tape. Construction order is evaluation order, so a
// single reverse sweep visits every node after all of its consumers. Not
// thread safe; build and differentiate a tape on one thread.
class Tape {
public:
    // Trainable leaf; backward() accumulates into t.grad (allocated on demand).
    // The tensor must outlive the tape.
    Var param(Tensor& t);
    // Non-trainable leaf whose gradient is still readable via grad().
    Var input(const Tensor& t);
    Var constant(const Tensor& t);
    Var constant(double v);

    // [m,k]x[k,n] -> [m,n]; a rank-1 left operand is treated as [1,k] -> [n]
    Var matmul(Var a, Var b);
    Var add(Var a, Var b);   // same shape, or one scalar operand
    Var sub(Var a, Var b);   // same shape, or one scalar operand
    Var mul(Var a, Var b);   // elementwise; one scalar operand broadcasts
    Var relu(Var a);
    Var sigmoid(Var a);
    Var concat(const std::vector<Var>& xs);  // rank-1 inputs
    // contiguous window of the row-major flattened input
    Var slice(Var a, int64_t start, int64_t len, Shape out_shape = {});
    Var sum(Var a);
    Var mean(Var a);
    Var sq_err(Var a, Var b);  // elementwise (a-b)^2
    Var affine(Var a, double scale, double shift);
    Var quantize(Var a, Var p_low, Var p_med, Var p_high, QuantizeRecord rec);

    const Tensor& value(Var v) const;
    // Adjoint of a node; populated by the most recent backward().
    const std::vector<double>& grad(Var v) const;
    // Payload of a quantize node; null for every other op.
    const QuantizeRecord* quantize_record(Var v) const;

    // Seeds the scalar loss with 1 and sweeps the tape in reverse. Gradients
    // of param() leaves accumulate into their tensors' grad buffers.
    void backward(Var loss);

    size_t size() const { return nodes_.size(); }

private:
    enum class Op : uint8_t {
        leaf, constant, matmul, add, sub, mul, relu, sigmoid,
        concat, slice, sum, mean, sq_err, affine, quantize,
    };

    struct Node {
        Op op;
        std::vector<int32_t> parents;
        Tensor value;
        std::vector<double> grad;
        double c0 = 0.0, c1 = 0.0;   // affine coefficients
        int64_t start = 0;           // slice window
        std::unique_ptr<QuantizeRecord> qrec;
        Tensor* bound = nullptr;     // trainable leaf target
    };

    int32_t push(Node n);
    Node& node(Var v);
    const Node& node(Var v) const;
    void check(Var v) const;

    std::vector<Node> nodes_;
};

}  // namespace qlip
