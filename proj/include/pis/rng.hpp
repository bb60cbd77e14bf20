// Deterministic RNG used everywhere seeds appear. std::mt19937 plus the
// standard distributions would be implementation-defined, so outputs could
// drift across standard libraries; splitmix64 keeps every run byte-stable.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace pis {

class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, bound)
    uint64_t next_below(uint64_t bound) {
        return next_u64() % bound;
    }

    int next_int(int lo, int hi) {  // inclusive range
        return lo + static_cast<int>(next_below(static_cast<uint64_t>(hi - lo + 1)));
    }

    // uniform in [0, 1)
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    bool next_bool(double p) { return next_double() < p; }

    // Box-Muller; one value per call keeps call sites order-independent.
    double next_gaussian() {
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 1e-12) u1 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793 * u2);
    }

    template <class V>
    void shuffle(std::vector<V>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = next_below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derive an independent stream, e.g. per sample or per parameter.
    Rng fork(uint64_t salt) {
        return Rng(next_u64() ^ (salt * 0x9e3779b97f4a7c15ULL + 0x7f4a7c15ULL));
    }

private:
    uint64_t state_;
};

}  // namespace pis
