#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "subjectdiff/tensor.hpp"

namespace sdiff {

// splitmix64; used both as a generator step and to derive child-stream seeds.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t hash_combine(uint64_t seed, uint64_t tag) {
    uint64_t s = seed ^ (tag + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2));
    return splitmix64(s);
}

inline uint64_t hash_str(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

// Deterministic stream: all distributions implemented explicitly so draws are
// bit-identical across platforms and library versions.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed ^ 0xdeadbeefcafef00dULL) {
        // burn-in decorrelates near-identical seeds
        splitmix64(state_);
        splitmix64(state_);
    }

    Rng child(const std::string& name) const { return Rng(hash_combine(state0(), hash_str(name))); }
    Rng child(const std::string& name, uint64_t index) const {
        return Rng(hash_combine(hash_combine(state0(), hash_str(name)), index));
    }

    uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0, 1)
    real uniform() { return (real)(next_u64() >> 11) * 0x1.0p-53; }

    real uniform(real lo, real hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int n) { return (int)(next_u64() % (uint64_t)n); }

    bool bernoulli(real p) { return uniform() < p; }

    // Box-Muller, one draw per call (spare cached).
    real normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        real u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        real r = std::sqrt(-2.0 * std::log(u1));
        real a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    void fill_normal(Tensor& t, real mean = 0.0, real stddev = 1.0) {
        for (auto& x : t.v) x = mean + stddev * normal();
    }

    void fill_uniform(Tensor& t, real lo, real hi) {
        for (auto& x : t.v) x = uniform(lo, hi);
    }

    std::vector<int> permutation(int n) {
        std::vector<int> p(n);
        for (int i = 0; i < n; ++i) p[i] = i;
        for (int i = n - 1; i > 0; --i) std::swap(p[i], p[uniform_int(i + 1)]);
        return p;
    }

    // In-batch shuffle with no fixed points (n >= 2): rotate a random permutation.
    std::vector<int> derangement(int n) {
        std::vector<int> p = permutation(n);
        std::vector<int> d(n);
        for (int i = 0; i < n; ++i) d[p[i]] = p[(i + 1) % n];
        return d;
    }

private:
    uint64_t state0() const { return state_; }
    uint64_t state_;
    bool has_spare_ = false;
    real spare_ = 0.0;
};

}  // namespace sdiff
