#pragma once

// Shared numeric utilities: deterministic RNG, stable softmax / log-sum-exp,
// divergence helpers, and token-sequence packing.

#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace tokscope {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Tokens = std::vector<int>;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// SplitMix64-based generator with explicit Box-Muller. The <random>
// distributions are implementation-defined, which would break byte-identical
// artifacts across standard libraries; this one is pinned.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * kPi * uniform();
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Uniform integer in {0, ..., n-1}, rejection-sampled to avoid modulo bias.
  int below(int n) {
    require(n > 0, "Rng::below: n must be positive");
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = (UINT64_MAX / un) * un;
    std::uint64_t r = next_u64();
    while (r >= limit) r = next_u64();
    return static_cast<int>(r % un);
  }

  // Categorical draw; p must be a distribution. Rounding slack lands on the
  // last positive entry.
  int sample(const Vector& p) {
    const double u = uniform();
    double acc = 0.0;
    int last = 0;
    for (int i = 0; i < p.size(); ++i) {
      if (p[i] <= 0.0) continue;
      last = i;
      acc += p[i];
      if (u < acc) return i;
    }
    return last;
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

inline double log_sum_exp(const Vector& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (int i = 0; i < v.size(); ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

inline Vector softmax(const Vector& z) {
  Vector p = (z.array() - z.maxCoeff()).exp();
  return p / p.sum();
}

inline bool is_distribution(const Vector& p, double tol = 1e-9) {
  if (p.size() == 0) return false;
  if ((p.array() < -tol).any()) return false;
  return std::abs(p.sum() - 1.0) <= tol;
}

inline double entropy(const Vector& p) {
  double h = 0.0;
  for (int i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
  return h;
}

// KL(p || q) in nats; +inf when q has a hole where p has mass.
inline double kl_divergence(const Vector& p, const Vector& q) {
  double s = 0.0;
  for (int i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
    s += p[i] * std::log(p[i] / q[i]);
  }
  return s;
}

inline double cross_entropy(const Vector& p, const Vector& q) {
  double s = 0.0;
  for (int i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
    s -= p[i] * std::log(q[i]);
  }
  return s;
}

inline std::int64_t pow_i64(std::int64_t base, int exp) {
  std::int64_t r = 1;
  for (int i = 0; i < exp; ++i) r *= base;
  return r;
}

// Big-endian base-N packing: index of the sequence among all sequences of the
// same length in lexicographic order.
inline std::int64_t pack_tokens(const Tokens& t, int base) {
  std::int64_t idx = 0;
  for (int tok : t) {
    require(tok >= 0 && tok < base, "pack_tokens: token out of range");
    idx = idx * base + tok;
  }
  return idx;
}

inline Tokens unpack_tokens(std::int64_t idx, int base, int len) {
  Tokens t(len);
  for (int i = len - 1; i >= 0; --i) {
    t[i] = static_cast<int>(idx % base);
    idx /= base;
  }
  return t;
}

// Dynamic-scheduled parallel map; fn(i) must only touch slot i of any shared
// output so results stay deterministic regardless of thread interleaving.
inline void parallel_for(int count, int threads,
                         const std::function<void(int)>& fn) {
  threads = std::max(1, std::min(threads, count));
  if (threads <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace tokscope
