#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace xoftr {

/// Deterministic per-call random stream. Draw order is part of the artifact
/// contract: identical seeds reproduce identical sequences on a fixed build.
class SeededStream {
public:
    explicit SeededStream(uint64_t seed) : eng_(seed) {}

    /// Uniform in [0, 1).
    double uniform() { return double(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (pairs cached).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    /// Uniform integer in [0, n).
    int uniform_int(int n) {
        // rejection sampling keeps the draw unbiased
        uint64_t bound = ~uint64_t(0) - (~uint64_t(0) % uint64_t(n));
        uint64_t x;
        do {
            x = eng_();
        } while (x >= bound);
        return int(x % uint64_t(n));
    }

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& xs) {
        for (int i = int(xs.size()) - 1; i > 0; --i) {
            int j = uniform_int(i + 1);
            std::swap(xs[i], xs[j]);
        }
    }

    uint64_t raw() { return eng_(); }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace xoftr
