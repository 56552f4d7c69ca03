#include "gdda/common.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>

#include <openssl/evp.h>

namespace gdda {

uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t state = seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
  uint64_t a = splitmix64(state);
  return splitmix64(state) ^ a;
}

double rand_uniform(Rng& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

double rand_normal(Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

uint64_t rand_seed(Rng& rng) { return rng(); }

int rand_int(Rng& rng, int lo, int hi) {
  std::uniform_int_distribution<int> dist(lo, hi);
  return dist(rng);
}

Eigen::MatrixXd randn_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

Eigen::VectorXd randn_vector(Rng& rng, Eigen::Index n) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = dist(rng);
  return v;
}

Eigen::MatrixXd uniform_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols,
                               double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

LogLevel log_level() {
  static LogLevel level = [] {
    const char* env = std::getenv("GDDA_LOG_LEVEL");
    if (env == nullptr) return LogLevel::Info;
    std::string s(env);
    if (s == "debug") return LogLevel::Debug;
    if (s == "warn") return LogLevel::Warn;
    return LogLevel::Info;
  }();
  return level;
}

namespace {
std::mutex log_mutex;
void log_line(const char* tag, const std::string& msg) {
  std::lock_guard<std::mutex> lock(log_mutex);
  std::cerr << "[gdda][" << tag << "] " << msg << "\n";
}
}  // namespace

void log_debug(const std::string& msg) {
  if (log_level() <= LogLevel::Debug) log_line("debug", msg);
}
void log_info(const std::string& msg) {
  if (log_level() <= LogLevel::Info) log_line("info", msg);
}
void log_warn(const std::string& msg) {
  if (log_level() <= LogLevel::Warn) log_line("warn", msg);
}

std::string sha256_hex(const void* data, size_t len) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int digest_len = 0;
  if (EVP_Digest(data, len, digest, &digest_len, EVP_sha256(), nullptr) != 1)
    throw IoError("sha256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(digest_len * 2);
  for (unsigned int i = 0; i < digest_len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string sha256_hex(const std::string& data) {
  return sha256_hex(data.data(), data.size());
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file for hashing: " + path.string());
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  return sha256_hex(content);
}

}  // namespace gdda
