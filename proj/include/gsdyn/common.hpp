// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdio>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

namespace gsdyn {

// Base error for everything the library throws on purpose. CLI maps these to exit code 1
// (or 2 for bad usage before work starts).
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("io: " + msg) {}
};

struct NumericsError : Error {
    explicit NumericsError(const std::string& msg) : Error("numerics: " + msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config: " + msg) {}
};

// All randomness in the project flows through generators of this type, seeded explicitly.
using Rng = std::mt19937_64;

inline double rand_uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double rand_normal(Rng& rng, double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(rng);
}

// Inclusive bounds.
inline int rand_int(Rng& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// Log level comes from the GS_DYN_LOG environment variable: "debug", "info" (default),
// "warn", "quiet".
enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Quiet = 3 };

LogLevel log_level();

void log_msg(LogLevel lvl, const char* fmt, ...)
#if defined(__GNUC__)
    __attribute__((format(printf, 2, 3)))
#endif
    ;

#define GSDYN_DEBUG(...) ::gsdyn::log_msg(::gsdyn::LogLevel::Debug, __VA_ARGS__)
#define GSDYN_INFO(...) ::gsdyn::log_msg(::gsdyn::LogLevel::Info, __VA_ARGS__)
#define GSDYN_WARN(...) ::gsdyn::log_msg(::gsdyn::LogLevel::Warn, __VA_ARGS__)

// Number of worker threads to use for scene/example level parallelism. 0 = hardware count.
void set_thread_count(int n);
int thread_count();

// Runs fn(i) for i in [0, n). Work is split in contiguous chunks; callers must write results
// into per-index slots so the result is independent of the schedule.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

}  // namespace gsdyn
