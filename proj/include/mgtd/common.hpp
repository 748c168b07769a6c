#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mgtd {

inline constexpr const char* kToolkitVersion = "0.1.0";

// Error taxonomy. The CLI maps these onto process exit codes:
// IoError -> 1, ConfigError/ValidationError -> 2, NumericError -> 3,
// AssetError -> 1 (missing environment assets).
struct MgtdError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : MgtdError {
  using MgtdError::MgtdError;
};
struct ConfigError : MgtdError {
  using MgtdError::MgtdError;
};
struct ValidationError : MgtdError {
  using MgtdError::MgtdError;
};
struct AssetError : MgtdError {
  using MgtdError::MgtdError;
};
struct NumericError : MgtdError {
  using MgtdError::MgtdError;
};
// Metric is mathematically undefined for the given input (e.g. ROC on a
// single-class label set).
struct UndefinedMetricError : ValidationError {
  using ValidationError::ValidationError;
};
// Stored digest does not match recomputed content (tampered checkpoint).
struct IntegrityError : ValidationError {
  using ValidationError::ValidationError;
};

// ---------------------------------------------------------------------------
// Hashing (FNV-1a 64-bit). Used for config digests and checkpoint integrity.

std::uint64_t fnv1a64(const void* data, std::size_t len,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(const std::string& s);
std::uint64_t fnv1a64_file(const std::filesystem::path& path);
std::string to_hex(std::uint64_t v);

// ---------------------------------------------------------------------------
// Deterministic randomness.
//
// std::mt19937_64 output is fully specified by the standard; the helpers
// below avoid std::*_distribution (whose algorithms are implementation
// defined) so that seeded results are identical across platforms.

// splitmix64-style mixing, for deriving stream seeds from a root seed.
std::uint64_t mix_seed(std::uint64_t root, std::uint64_t stream);

// Uniform integer in [0, n) via rejection sampling, n >= 1.
std::uint64_t rng_below(std::mt19937_64& rng, std::uint64_t n);

// Uniform double in [0, 1) with 53 random bits.
double rng_real(std::mt19937_64& rng);

// Standard normal via Box-Muller (one value per call, no internal state).
double rng_normal(std::mt19937_64& rng);

// Fisher-Yates shuffle of indices 0..n-1.
std::vector<std::size_t> rng_permutation(std::mt19937_64& rng, std::size_t n);

// ---------------------------------------------------------------------------
// Misc.

std::string iso8601_utc_now();

// Writes content to path via a temporary file in the same directory followed
// by an atomic rename.
void write_file_atomic(const std::filesystem::path& path,
                       const std::string& content);

std::string read_file(const std::filesystem::path& path);

// Formats a double with enough digits to round-trip deterministically.
std::string format_double(double v, int precision = 12);

}  // namespace mgtd
