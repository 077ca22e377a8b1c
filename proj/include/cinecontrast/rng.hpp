// Deterministic random number generator with explicitly serializable state.
//
// Everything stochastic in this library (parameter init, batch sampling,
// augmentation, phantom generation, t-SNE init, ...) goes through Rng so
// that runs are bitwise reproducible and resumable from a saved state
// string. std::random distributions are avoided on purpose: their output
// is implementation-defined and they carry hidden state.
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cinecontrast {

class Rng {
  public:
    Rng() : Rng(0x9e3779b97f4a7c15ull) {}
    explicit Rng(std::uint64_t seed) { reseed(seed); }

    void reseed(std::uint64_t seed) {
        // splitmix64 expansion of the seed into the xoshiro256** state
        std::uint64_t x = seed;
        for (auto& w : s_) {
            x += 0x9e3779b97f4a7c15ull;
            std::uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
            w = z ^ (z >> 31);
        }
    }

    std::uint64_t next_u64() {
        auto rotl = [](std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
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

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
        // rejection sampling keeps the distribution exact
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

    int below_int(int n) { return static_cast<int>(below(static_cast<std::uint64_t>(n))); }

    // standard normal via Box-Muller; no cached spare so state advances
    // identically regardless of call parity across save/restore points
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // derive an independent stream, e.g. one per study or per step
    Rng split(std::uint64_t stream) {
        Rng child;
        child.reseed(next_hash(s_[0] ^ s_[2], stream));
        return child;
    }

    std::string state() const {
        std::string out;
        for (auto w : s_) {
            char buf[17];
            std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(w));
            out += buf;
        }
        return out;
    }

    void restore(const std::string& state) {
        if (state.size() != 64) throw std::invalid_argument("Rng::restore: bad state string");
        for (int i = 0; i < 4; ++i) {
            s_[i] = std::stoull(state.substr(16 * i, 16), nullptr, 16);
        }
    }

    static std::uint64_t next_hash(std::uint64_t a, std::uint64_t b) {
        std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

  private:
    std::uint64_t s_[4] = {};
};

}  // namespace cinecontrast
