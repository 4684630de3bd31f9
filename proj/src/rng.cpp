#include "msp/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace msp {

static uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

static uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

uint64_t mix_seed(uint64_t seed, std::string_view tag, uint64_t index) {
    uint64_t h = splitmix64(seed ^ fnv1a64(tag));
    return splitmix64(h ^ index);
}

RandomSource::RandomSource(uint64_t seed)
    : seed_(seed), engine_(splitmix64(seed)) {}

uint64_t RandomSource::next_u64() {
    return engine_();
}

double RandomSource::uniform() {
    // 53-bit mantissa, [0, 1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

int64_t RandomSource::uniform_int(int64_t lo, int64_t hi) {
    if (hi < lo) {
        throw std::invalid_argument("uniform_int: hi < lo");
    }
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    // rejection sampling to avoid modulo bias
    uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t v;
    do {
        v = next_u64();
    } while (v >= limit);
    return lo + static_cast<int64_t>(v % span);
}

double RandomSource::gaussian() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r  = std::sqrt(-2.0 * std::log(u1));
    double a  = 2.0 * M_PI * u2;
    spare_      = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
}

std::vector<double> RandomSource::gaussian_vec(size_t n) {
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) {
        out[i] = gaussian();
    }
    return out;
}

RandomSource RandomSource::derive(std::string_view tag, uint64_t index) const {
    return RandomSource(mix_seed(seed_, tag, index));
}

}  // namespace msp
