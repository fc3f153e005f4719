// Deterministic named random streams.
//
// Every stochastic choice in the library draws from a Stream addressed by a
// StreamKey{global_seed, purpose, index}. Identical keys always reproduce the
// identical sequence on every platform; distinct purposes or indices give
// independent-behaving sequences. The construction is pinned for
// bit-reproducibility:
//
//   tag      = FNV-1a 64-bit hash of the purpose string
//   x        = splitmix64(splitmix64(splitmix64(seed) ^ tag) ^ index)
//   state[i] = four further splitmix64 outputs of x   (xoshiro256** state)
//
// The generator itself is xoshiro256** (Blackman & Vigna). Derived sampling
// primitives are likewise pinned: uniform doubles take the top 53 bits,
// categorical sampling walks the cumulative sum in ascending class order,
// multinomial sampling aggregates K categorical draws, and shuffles are
// backward Fisher-Yates with bounded draws by rejection.

#pragma once

#include <cstdint>
#include <cmath>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace votelab {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

struct StreamKey {
    std::uint64_t seed = 0;
    std::string purpose;
    std::uint64_t index = 0;
};

class Stream {
public:
    explicit Stream(const StreamKey& key) {
        std::uint64_t x = splitmix64(key.seed);
        x = splitmix64(x ^ fnv1a64(key.purpose));
        x = splitmix64(x ^ key.index);
        for (auto& si : s_) {
            x = splitmix64(x);
            si = x;
        }
    }

    Stream(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0)
        : Stream(StreamKey{seed, std::string(purpose), index}) {}

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0,1) with 53 bits of mantissa.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n) by rejection on a power-of-two mask.
    std::uint64_t uniform_below(std::uint64_t n) {
        if (n <= 1) return 0;
        std::uint64_t mask = n - 1;
        mask |= mask >> 1;
        mask |= mask >> 2;
        mask |= mask >> 4;
        mask |= mask >> 8;
        mask |= mask >> 16;
        mask |= mask >> 32;
        std::uint64_t r;
        do {
            r = next_u64() & mask;
        } while (r >= n);
        return r;
    }

    // Standard normal via the polar (Marsaglia) method, caching the spare.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    // One draw from a categorical distribution: inverse CDF over the
    // cumulative sum taken in ascending class order.
    int categorical(const Eigen::VectorXd& p) {
        const double u = uniform();
        double cum = 0.0;
        const int c = static_cast<int>(p.size());
        for (int k = 0; k < c; ++k) {
            cum += p[k];
            if (u < cum) return k;
        }
        return c - 1;
    }

    // Multinomial counts as K aggregated categorical draws.
    std::vector<int> multinomial(const Eigen::VectorXd& p, int k_draws) {
        std::vector<int> counts(static_cast<std::size_t>(p.size()), 0);
        for (int j = 0; j < k_draws; ++j) counts[static_cast<std::size_t>(categorical(p))] += 1;
        return counts;
    }

    // Uniform random permutation of {0,...,n-1} (backward Fisher-Yates).
    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        shuffle(idx);
        return idx;
    }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    // Gamma(shape, 1) via Marsaglia-Tsang, boosted for shape < 1.
    double gamma(double shape) {
        if (shape < 1.0) {
            const double g = gamma(shape + 1.0);
            const double u = uniform();
            return g * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = gaussian();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    double beta(double a, double b) {
        const double ga = gamma(a);
        const double gb = gamma(b);
        return ga / (ga + gb);
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t s_[4] = {};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

inline Stream stream(const StreamKey& key) { return Stream(key); }

}  // namespace votelab
