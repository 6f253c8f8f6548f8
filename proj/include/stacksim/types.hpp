#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace stacksim {

using Cycles = std::uint64_t;
using SignedCycles = std::int64_t;
using GuestId = std::uint32_t;
using CoreId = std::uint32_t;

// Sentinel for an unbounded budget cap (replenish never saturates).
inline constexpr SignedCycles kUnboundedCap = INT64_MAX;

// Thrown when a runtime invariant is breached (CLI maps this to exit code 3).
class InvariantViolation : public std::runtime_error {
public:
    explicit InvariantViolation(const std::string& what) : std::runtime_error(what) {}
};

// Thrown on configuration validation failure (CLI maps this to exit code 2).
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string field, const std::string& what)
        : std::runtime_error("config field '" + field + "': " + what), field_(std::move(field)) {}

    const std::string& field() const { return field_; }

private:
    std::string field_;
};

inline std::uint64_t fnv1a64(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64_u64(std::uint64_t h, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (i * 8)) & 0xffu;
        h *= 1099511628211ULL;
    }
    return h;
}

inline Cycles cycles_from_us(double us, double cpu_ghz) {
    return static_cast<Cycles>(us * cpu_ghz * 1000.0 + 0.5);
}

inline double us_from_cycles(Cycles c, double cpu_ghz) {
    return static_cast<double>(c) / (cpu_ghz * 1000.0);
}

} // namespace stacksim
