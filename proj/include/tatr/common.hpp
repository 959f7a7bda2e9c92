#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tatr {

// Error taxonomy. Every failure surfaced by the library carries one of these
// categories; the CLI prints "error: <category>: <message>" and exits nonzero.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& msg)
        : std::runtime_error(msg), category_(std::move(category)) {}
    const std::string& category() const { return category_; }

private:
    std::string category_;
};

struct DimensionError : Error {
    explicit DimensionError(const std::string& msg) : Error("dimension", msg) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config", msg) {}
};
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error("data", msg) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error("numeric", msg) {}
};
struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error("contract", msg) {}
};
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("io", msg) {}
};
struct ParseError : Error {
    explicit ParseError(const std::string& msg) : Error("parse", msg) {}
};

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

// splitmix64; used to derive independent deterministic streams from one seed.
inline std::uint64_t hash_mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
    return hash_mix(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

// Deterministic RNG. Draws are derived from raw mt19937_64 bits rather than
// std::uniform_*_distribution so that streams are reproducible across library
// versions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), gen_(hash_mix(seed)) {}

    std::uint64_t bits() { return gen_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [lo, hi] inclusive
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(gen_() % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Independent substream keyed on `stream`.
    Rng fork(std::uint64_t stream) const { return Rng(hash_combine(seed_, stream)); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(gen_() % i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 gen_;
};

}  // namespace tatr
