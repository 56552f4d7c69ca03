#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace gdda {

// Error taxonomy. The CLI maps these onto exit codes: config/usage/parse
// problems -> 2, numeric aborts -> 3, missing artifacts -> 4.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingArtifactError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

// splitmix64 step; used to derive independent stream seeds.
uint64_t splitmix64(uint64_t& state);

// Deterministic combination of a base seed with a stream index.
uint64_t mix_seed(uint64_t seed, uint64_t stream);

inline Rng make_rng(uint64_t seed) { return Rng(seed); }

double rand_uniform(Rng& rng);              // [0, 1)
double rand_normal(Rng& rng);               // N(0, 1)
uint64_t rand_seed(Rng& rng);               // full-width draw
int rand_int(Rng& rng, int lo, int hi);     // inclusive range

// Filled in row-major order so the draw sequence is shape-stable.
Eigen::MatrixXd randn_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols);
Eigen::VectorXd randn_vector(Rng& rng, Eigen::Index n);
Eigen::MatrixXd uniform_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols,
                               double lo, double hi);

// --- logging (stderr), level via GDDA_LOG_LEVEL in {debug, info, warn} ---
enum class LogLevel { Debug = 0, Info = 1, Warn = 2 };
LogLevel log_level();
void log_debug(const std::string& msg);
void log_info(const std::string& msg);
void log_warn(const std::string& msg);

// --- content hashing ---
std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& data);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace gdda
