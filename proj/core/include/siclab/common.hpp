#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace siclab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Pseudo-random engine used by every stochastic operation. Callers always
/// pass one explicitly; nothing in the library seeds from the wall clock.
using Rng = std::mt19937_64;

/// Raised when a caller breaks an operation's precondition (shape mismatch,
/// index out of range, invalid parameter).
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Malformed or incompatible serialized data.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Exhaustive search requested over a hypothesis space above the guard.
class InfeasibleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite loss or gradient encountered while training.
class TrainingDivergence : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) throw ContractViolation(message);
}

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t hash_string(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Seed for an independent stream: hash(master, component, indices...).
/// Streams depend only on these coordinates, never on scheduling, so sharded
/// Monte-Carlo runs give identical numbers for any thread count.
inline std::uint64_t stream_seed(std::uint64_t master, std::string_view component,
                                 std::initializer_list<std::uint64_t> indices = {}) {
    std::uint64_t h = mix64(master ^ mix64(hash_string(component)));
    for (auto i : indices) h = mix64(h ^ mix64(i + 0x632be59bd9b4e019ULL));
    return h;
}

inline Rng make_stream(std::uint64_t master, std::string_view component,
                       std::initializer_list<std::uint64_t> indices = {}) {
    return Rng(stream_seed(master, component, indices));
}

}  // namespace siclab
