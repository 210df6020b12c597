// Deterministic seeded PRNG. The generator is splitmix64 (Steele, Lea,
// Flood 2014): a 64-bit counter advanced by the golden-gamma constant and
// finalized with two xor-shift-multiply rounds. The same seed produces the
// same stream on every platform; all randomness in the project flows
// through this type.
#pragma once

#include <cstdint>
#include <vector>

namespace gummp {

class SeededRng {
public:
    explicit SeededRng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 bits of resolution.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    // Uniform integer in [0, bound). bound must be positive.
    uint64_t uniform_int(uint64_t bound) {
        // Modulo reduction; the bias is < bound/2^64, irrelevant at the
        // bounds used here (corpus and vocabulary sizes).
        return next_u64() % bound;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (size_t i = v.size() - 1; i > 0; --i) {
            size_t j = static_cast<size_t>(uniform_int(i + 1));
            std::swap(v[i], v[j]);
        }
    }

    uint64_t state() const { return state_; }
    void set_state(uint64_t s) { state_ = s; }

private:
    uint64_t state_;
};

}  // namespace gummp
