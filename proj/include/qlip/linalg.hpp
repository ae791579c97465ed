#pragma once

#include <cstdint>

namespace qlip {

// y = x * W with W row-major [in, out]; x has `in` entries, y gets `out`.
// Accumulation runs over i ascending. Every forward path in the project uses
// this one kernel so that identity-quantized and full-precision evaluation
// stay bit-identical.
inline void matvec(const double* w, const double* x, double* y, int64_t in, int64_t out) {
    for (int64_t j = 0; j < out; ++j) y[j] = 0.0;
    for (int64_t i = 0; i < in; ++i) {
        const double xi = x[i];
        const double* row = w + i * out;
        for (int64_t j = 0; j < out; ++j) y[j] += xi * row[j];
    }
}

}  // namespace qlip
