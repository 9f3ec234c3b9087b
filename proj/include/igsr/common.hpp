#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace igsr {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Parse failure in the expression dialect; `position` is a byte offset into
// the source text.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t position)
        : Error(what + " (at position " + std::to_string(position) + ")"), position(position) {}
    std::size_t position;
};

class DataError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class HttpError : public Error {
public:
    using Error::Error;
};

// Distinct signal: the run-level token budget has been spent. The search
// catches this to stop cleanly and report the best result so far.
class BudgetExceeded : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Hashing. Sub-seeds are derived by labeled hashing so that adding a new
// random consumer never perturbs existing streams.

constexpr std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Finalizer from SplitMix64 (Stafford variant 13).
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
    return mix64(seed ^ fnv1a64(label));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view label, std::uint64_t index) {
    return mix64(mix64(seed ^ fnv1a64(label)) + index);
}

// ---------------------------------------------------------------------------
// Number formatting.

// Shortest decimal string that round-trips to the same double (matches the
// repr used in result files, CSV output and per-output MSE lists).
inline std::string format_shortest(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

// printf %g with 6 significant digits; used for overall MSE values in
// history lines and for table cells.
inline std::string format_g6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

inline std::string format_g(double v, int precision) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
    return buf;
}

// ---------------------------------------------------------------------------
// Small string helpers.

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split_lines(std::string_view s) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        std::size_t nl = s.find('\n', pos);
        if (nl == std::string_view::npos) {
            out.emplace_back(s.substr(pos));
            break;
        }
        std::string_view line = s.substr(pos, nl - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        out.emplace_back(line);
        pos = nl + 1;
    }
    return out;
}

inline bool starts_with(std::string_view s, std::string_view prefix) {
    return s.size() >= prefix.size() && s.substr(0, prefix.size()) == prefix;
}

} // namespace igsr
