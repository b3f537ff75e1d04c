#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace planllm {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Error taxonomy. The CLI maps ValidationError (and subclasses) to exit
// code 1 and everything else to exit code 2.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : ValidationError {
    explicit ShapeError(const std::string& msg) : ValidationError(msg) {}
};

// Malformed file contents; carries a 1-based line number when known.
struct ParseError : ValidationError {
    ParseError(const std::string& msg, long line = -1)
        : ValidationError(line >= 0 ? msg + " (line " + std::to_string(line) + ")" : msg),
          line_number(line) {}
    long line_number;
};

// Structurally valid file whose records contradict each other.
struct IntegrityError : ValidationError {
    explicit IntegrityError(const std::string& msg) : ValidationError(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TransportError : std::runtime_error {
    explicit TransportError(const std::string& msg) : std::runtime_error(msg) {}
};

// FNV-1a, used for content hashes (freeze checks, fingerprints). Not
// cryptographic; collisions only matter for accidental corruption.
constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = kFnvOffset) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = kFnvOffset) {
    return fnv1a64(s.data(), s.size(), h);
}

inline std::uint64_t fnv1a64(const Mat& m, std::uint64_t h = kFnvOffset) {
    return fnv1a64(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()), h);
}

std::string to_hex(std::uint64_t v);

// splitmix64; used to derive independent seeds from (seed, tag) pairs.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0) {
    return mix64(seed ^ mix64(fnv1a64(tag)) ^ mix64(index * 0x9e3779b97f4a7c15ULL + 1));
}

inline Mat gaussian_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
    return m;
}

inline bool all_finite(const Mat& m) { return m.allFinite(); }

std::string format_double(double v);  // shortest round-trip decimal text

}  // namespace planllm
