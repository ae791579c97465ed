#pragma once

#include <cstdint>
#include <string_view>

namespace qlip {

uint64_t mix64(uint64_t x);
uint64_t hash64(std::string_view s);

// Independent sub-seed for a named purpose; stable across platforms.
uint64_t derive_seed(uint64_t seed, std::string_view label);

// Counter-based generator: every draw is a pure function of
// (seed, stream name, counter). Streams never interact, so any draw can be
// replayed bit-exactly regardless of what other streams consumed, and
// per-sample streams stay reproducible under concurrent use.
class RngStream {
public:
    RngStream(uint64_t seed, std::string_view stream);

    uint64_t next_u64();
    double uniform();                          // [0, 1)
    double uniform(double lo, double hi);      // [lo, hi)
    int64_t uniform_int(int64_t lo, int64_t hi);  // inclusive bounds
    double normal();                           // N(0, 1), Box-Muller

private:
    uint64_t key_ = 0;
    uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace qlip
