#pragma once

// Shared fixtures and hand-rolled generators for the test suite.

#include "nlmix/nlmix.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace nlmix::testing {

inline std::string data_path(const std::string &name) {
  return std::string(NLMIX_TEST_DATA) + "/" + name;
}

/// Deterministic generator for property tests: each test owns its stream.
class Gen {
public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<>(lo, hi)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<>(lo, hi)(rng_); }
  double normal(double mean = 0.0, double sd = 1.0) {
    return std::normal_distribution<>(mean, sd)(rng_);
  }

  /// Plausible piecewise parameters: level, two slopes, changepoint in [-15, -1].
  SubjectParams pmm_psi() {
    return {{uniform(-3, 3), uniform(-0.5, 0.5), uniform(-1.0, 0.5), uniform(-15, -1)}};
  }

  /// Sigmoid parameters with negative midpoint and positive Hill slope.
  SubjectParams smm_psi() {
    return {{uniform(-2, 2), uniform(-3, 1), uniform(-12, -0.5), uniform(0.3, 4)}};
  }

  std::mt19937_64 &engine() { return rng_; }

private:
  std::mt19937_64 rng_;
};

/// Scratch directory removed when the test ends.
class TempDir {
public:
  explicit TempDir(const std::string &tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("nlmix_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path &path() const { return path_; }
  std::string file(const std::string &name) const { return (path_ / name).string(); }

private:
  std::filesystem::path path_;
};

/// Short SAEM run for tests that exercise plumbing rather than accuracy.
inline SaemConfig quick_config(std::uint64_t seed = 11) {
  SaemConfig c;
  c.k1 = 60;
  c.k2 = 30;
  c.is_samples = 200;
  c.cond_burn = 50;
  c.cond_samples = 200;
  c.seed = seed;
  return c;
}

} // namespace nlmix::testing
