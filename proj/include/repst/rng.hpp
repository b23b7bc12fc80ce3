#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace repst {

// Deterministic random stream. mt19937_64 gives a sequence fixed by the
// standard; the uniform/gaussian transforms below are our own so draws are
// bit-identical across platforms and library versions (std distributions are
// implementation-defined).
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform on the open interval (0,1); safe as a log(-log(u)) argument.
    double uniform() {
        return (static_cast<double>(gen_() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    }

    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Uniform integer in [0, n), bias-free via rejection.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x % n;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

  private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Fixed purpose tags keep the master-seeded streams independent.
namespace rng_stream {
constexpr std::uint64_t kInit = 0x01;
constexpr std::uint64_t kGumbel = 0x02;
constexpr std::uint64_t kPartition = 0x03;
constexpr std::uint64_t kBatch = 0x04;
}  // namespace rng_stream

inline Rng derive_rng(std::uint64_t master_seed, std::uint64_t purpose) {
    return Rng(splitmix64(master_seed ^ splitmix64(purpose)));
}

}  // namespace repst
