#ifndef __MSP_RNG_HPP__
#define __MSP_RNG_HPP__

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace msp {

// Mix a base seed with a stream tag and index into a new 64-bit seed.
uint64_t mix_seed(uint64_t seed, std::string_view tag, uint64_t index = 0);

// Deterministic random source. Gaussians use Box-Muller on mt19937_64
// uniforms so a seed fully determines every stream on every platform.
class RandomSource {
public:
    explicit RandomSource(uint64_t seed);

    uint64_t seed() const { return seed_; }
    uint64_t next_u64();
    double uniform();  // [0, 1)
    int64_t uniform_int(int64_t lo, int64_t hi);  // inclusive bounds
    double gaussian();
    std::vector<double> gaussian_vec(size_t n);

    RandomSource derive(std::string_view tag, uint64_t index = 0) const;

private:
    uint64_t seed_;
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_    = 0.0;
};

}  // namespace msp

#endif  // __MSP_RNG_HPP__
