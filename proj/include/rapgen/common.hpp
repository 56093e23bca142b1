#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace rapgen {

// Error taxonomy. Each maps onto a CLI exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

class InvalidInput : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class ExternalToolError : public Error {
 public:
  ExternalToolError(const std::string& what, std::string diagnostics = {})
      : Error(what), diagnostics_(std::move(diagnostics)) {}
  int exit_code() const noexcept override { return 3; }
  const std::string& diagnostics() const noexcept { return diagnostics_; }

 private:
  std::string diagnostics_;
};

class NumericalError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidInput(msg);
}

// Row-major dense matrices: rows are frames/time steps, columns are channels.
template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

using MatD = Mat<double>;
using MatF = Mat<float>;
using VecD = Eigen::VectorXd;

template <class M>
bool all_finite(const M& m) {
  return m.allFinite();
}

// Seeded RNG. std::mt19937_64 output is specified by the standard; the
// distributions are implementation-defined but stable on one platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(eng_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(eng_);
  }
  double normal() { return normal_(eng_); }
  double normal(double mean, double stddev) { return mean + stddev * normal_(eng_); }
  // Inclusive range.
  std::int64_t integer(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(eng_);
  }
  bool bernoulli(double p) { return uniform() < p; }
  std::uint64_t next_u64() { return eng_(); }
  std::mt19937_64& engine() { return eng_; }

  // Text snapshot of the engine and the normal sampler's cached value.
  std::string state() const {
    std::ostringstream out;
    out << eng_ << ' ' << normal_;
    return out.str();
  }
  void set_state(const std::string& s) {
    std::istringstream in(s);
    in >> eng_ >> normal_;
    require(!in.fail(), "rng: malformed state");
  }

  template <class T>
  Mat<T> normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev = 1.0) {
    Mat<T> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(normal() * stddev);
    return m;
  }

 private:
  std::mt19937_64 eng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Stable per-item seed: independent of processing order.
inline std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view key) {
  return splitmix64(global_seed ^ fnv1a64(key));
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace rapgen
