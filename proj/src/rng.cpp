#include "qlip/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace qlip {

// splitmix64 finalizer
uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// FNV-1a
uint64_t hash64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

uint64_t derive_seed(uint64_t seed, std::string_view label) {
    return mix64(mix64(seed) ^ hash64(label));
}

RngStream::RngStream(uint64_t seed, std::string_view stream) {
    key_ = mix64(mix64(seed) ^ hash64(stream));
}

uint64_t RngStream::next_u64() {
    return mix64(key_ ^ mix64(counter_++));
}

double RngStream::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

int64_t RngStream::uniform_int(int64_t lo, int64_t hi) {
    if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
    const auto span = static_cast<uint64_t>(hi - lo) + 1;
    const auto r = next_u64();
    // multiply-shift map of the full 64-bit draw onto [0, span)
    const auto v = static_cast<uint64_t>(
        (static_cast<unsigned __int128>(r) * static_cast<unsigned __int128>(span)) >> 64);
    return lo + static_cast<int64_t>(v);
}

double RngStream::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // u1 in (0, 1] keeps the log finite
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

}  // namespace qlip
