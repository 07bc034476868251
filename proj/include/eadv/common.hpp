#pragma once

// Shared plumbing: error taxonomy, deterministic RNG, seed derivation,
// content hashing, and the EADV_LOG-gated stderr logger.

#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace eadv {

inline constexpr const char* kToolVersion = "0.1.0";

// Bad arguments / violated preconditions. Maps to CLI exit status 2.
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed input file (WAV header, checkpoint, manifest). CLI status 2.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Filesystem failure. CLI status 1.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values in a numeric path. CLI status 4.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training failed to reach the minimum accuracy. CLI status 3.
struct TrainingDivergedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic sub-seed for a named stream of a base seed. Every source of
// randomness in the pipeline is reached through chains of these, so a single
// manifest seed pins all draws.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return splitmix64(base ^ splitmix64(stream + 0x9e3779b97f4a7c15ULL));
}

// mt19937_64 is bit-specified by the standard; the distributions are not, so
// uniform variates are produced here instead of through <random> adaptors.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  bool bernoulli(double p) { return uniform01() < p; }

  // Uniform on {0, ..., n-1} without modulo bias.
  std::size_t uniform_index(std::size_t n) {
    if (n == 0) throw ArgumentError("uniform_index: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return static_cast<std::size_t>(v % n);
  }

 private:
  std::mt19937_64 engine_;
};

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex_string(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

enum class LogLevel { Quiet = 0, Info = 1, Debug = 2 };

inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("EADV_LOG");
    if (env == nullptr) return LogLevel::Info;
    const std::string_view v(env);
    if (v == "quiet") return LogLevel::Quiet;
    if (v == "debug") return LogLevel::Debug;
    return LogLevel::Info;
  }();
  return level;
}

inline void log_at(LogLevel lvl, const char* fmt, ...) {
  if (static_cast<int>(log_level()) < static_cast<int>(lvl)) return;
  va_list args;
  va_start(args, fmt);
  std::vfprintf(stderr, fmt, args);
  va_end(args);
  std::fputc('\n', stderr);
}

#define EADV_LOG_INFO(...) ::eadv::log_at(::eadv::LogLevel::Info, __VA_ARGS__)
#define EADV_LOG_DEBUG(...) ::eadv::log_at(::eadv::LogLevel::Debug, __VA_ARGS__)

}  // namespace eadv
