#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace lpm {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

using SymbolId = std::uint32_t;

namespace detail {

// Stateless counter-based generator: each (seed, counters...) tuple maps to an
// independent 64-bit draw. Used for dropout masks and per-epoch reseeding.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value) noexcept {
    return splitmix64(seed ^ splitmix64(value));
}

template <typename... Rest>
constexpr std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value, Rest... rest) noexcept {
    return hash_combine(hash_combine(seed, value), static_cast<std::uint64_t>(rest)...);
}

// Uniform in [0, 1) with 53 bits of resolution.
constexpr double to_unit(std::uint64_t bits) noexcept {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

}  // namespace detail
}  // namespace lpm
