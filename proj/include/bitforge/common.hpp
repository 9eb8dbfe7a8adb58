#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace bitforge {

enum class ErrorKind {
    config,    // bad configuration value or incompatible recipe
    shape,     // dimension mismatch
    contract,  // precondition violated by the caller
    data,      // malformed or out-of-range payload
    lookup,    // unknown name / missing entry
    io,        // filesystem failure
    format,    // unreadable or incompatible file contents
    numeric,   // non-finite value where finiteness is required
};

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, std::string msg) : std::runtime_error(std::move(msg)), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

  private:
    ErrorKind kind_;
};

namespace detail {
inline void msg_append(std::ostringstream&) {}
template <typename T, typename... Rest>
void msg_append(std::ostringstream& os, T&& v, Rest&&... rest) {
    os << std::forward<T>(v);
    msg_append(os, std::forward<Rest>(rest)...);
}
}  // namespace detail

template <typename... Parts>
[[noreturn]] void fail(ErrorKind kind, Parts&&... parts) {
    std::ostringstream os;
    detail::msg_append(os, std::forward<Parts>(parts)...);
    throw Error(kind, os.str());
}

// Deterministic RNG. std::mt19937_64 has a standardized output sequence; the
// mappings below are ours, so streams are reproducible across platforms.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        // splitmix64
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; one value per call, no cached spare (keeps the stream
    // position independent of call parity).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // uniform integer in [0, n)
    uint64_t below(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  private:
    uint64_t state_;
};

}  // namespace bitforge
