#pragma once

#include <cstdint>
#include <vector>

#include "qlip/checkpoint.hpp"
#include "qlip/tape.hpp"
#include "qlip/tensor.hpp"

namespace qlip {

// Prompt-embedding -> expected-quality predictor: a frozen random input
// projection, one trainable hidden layer, and a sigmoid head, so the output
// always lies strictly inside (0, 1).
struct T2QModel {
    int embed_dim = 64;
    int hidden = 512;
    Tensor w1;      // [embed_dim, embed_dim], frozen at init
    Tensor w2, b2;  // [embed_dim, hidden], [hidden]
    Tensor w3, b3;  // [hidden, 1], [1]

    static T2QModel init(int embed_dim, int hidden, uint64_t seed);

    double predict(const Tensor& z) const;

    void save(Checkpoint& ck) const;
    static T2QModel load(const Checkpoint& ck);
};

struct T2QVars {
    Var w1, w2, b2, w3, b3;
};

// w1 enters the tape as a constant; only {w2, b2, w3, b3} are trainable.
T2QVars bind_t2q(Tape& tape, T2QModel& m);
Var t2q_tape_forward(Tape& tape, const T2QVars& vars, Var z);

struct T2QPair {
    Tensor z;
    double q = 0.0;  // quality label in [0, 1]
};

struct T2QFit {
    double train_loss = 0.0;
    double val_loss = 0.0;
    double srocc = 0.0;
    double plcc = 0.0;
    bool correlations_valid = false;  // false when the held-out split is degenerate
    int train_count = 0;
    int val_count = 0;
};

struct T2QTrainConfig {
    int epochs = 3;
    double lr = 1e-3;
    int batch = 32;
    double holdout = 0.2;
};

// Adam on the trainable layers, minimizing mean squared error against the
// labels. The held-out split is drawn by a seeded shuffle before training.
T2QFit train_t2q(T2QModel& m, const std::vector<T2QPair>& data, const T2QTrainConfig& cfg,
                 uint64_t seed);

}  // namespace qlip
