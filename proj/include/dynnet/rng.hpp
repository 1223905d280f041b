#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace dynnet {

/// Stream domains. Each keyed draw is a pure function of (seed, domain, id, counter).
enum class Domain : std::uint64_t {
  InitialCoin = 1,
  UpdateCount,
  UpdateTime,
  UpdateCoin,
  InfectionCount,
  InfectionTime,
  RecoveryCount,
  RecoveryTime,
  Engine,
  Stationary,
  Harness,
  WaitAndSee,
  Coupling,
  Diagnostics,
};

constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t key_hash(std::uint64_t seed, Domain d, std::uint64_t id, std::uint64_t counter) {
  std::uint64_t h = mix64(seed ^ 0x5851f42d4c957f2dULL);
  h = mix64(h ^ static_cast<std::uint64_t>(d));
  h = mix64(h ^ id);
  return mix64(h ^ counter);
}

/// Maps 64 random bits to a double in (0,1); never returns 0 or 1.
constexpr double bits_to_open01(std::uint64_t b) {
  return (static_cast<double>(b >> 11) + 0.5) * 0x1.0p-53;
}

/// Stateless keyed generator: the same key always yields the same draw.
class KeyedRng {
 public:
  explicit KeyedRng(std::uint64_t seed) : seed_(seed) {}
  [[nodiscard]] std::uint64_t seed() const { return seed_; }
  [[nodiscard]] std::uint64_t bits(Domain d, std::uint64_t id, std::uint64_t counter) const {
    return key_hash(seed_, d, id, counter);
  }
  [[nodiscard]] double uniform(Domain d, std::uint64_t id, std::uint64_t counter) const {
    return bits_to_open01(bits(d, id, counter));
  }

 private:
  std::uint64_t seed_;
};

/// Sequential stream over one key, usable as a UniformRandomBitGenerator.
class CounterStream {
 public:
  using result_type = std::uint64_t;
  CounterStream(std::uint64_t seed, Domain d, std::uint64_t id) : seed_(seed), domain_(d), id_(id) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() { return key_hash(seed_, domain_, id_, counter_++); }

  double uniform() { return bits_to_open01((*this)()); }
  double exponential(double rate) { return -std::log(uniform()) / rate; }
  bool bernoulli(double p) { return uniform() < p; }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }
  std::uint64_t geometric_failures(double p) {  // failures before first success
    if (p >= 1.0) return 0;
    const double g = std::floor(std::log(uniform()) / std::log1p(-p));
    return g > 9.0e18 ? std::numeric_limits<std::uint64_t>::max() / 2 : static_cast<std::uint64_t>(g);
  }
  [[nodiscard]] std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  Domain domain_;
  std::uint64_t id_;
  std::uint64_t counter_ = 0;
};

/// Poisson(mean) by inversion from one uniform; mean is O(1) here.
inline int poisson_from_uniform(double u, double mean) {
  double p = std::exp(-mean);
  double cdf = p;
  int k = 0;
  while (u > cdf && k < 1000) {
    ++k;
    p *= mean / k;
    cdf += p;
  }
  return k;
}

inline std::uint64_t pair_id(std::int64_t i, std::int64_t j) {
  const auto a = static_cast<std::uint64_t>(std::min(i, j));
  const auto b = static_cast<std::uint64_t>(std::max(i, j));
  return (a << 32) | b;
}

/// Keyed homogeneous Poisson clock with optional marks. Time is cut into cells of
/// length 1/rate; each cell carries a Poisson(1) number of uniform points. Any window
/// can be materialised independently, which makes lazy and eager reads identical.
class KeyedClock {
 public:
  struct Point {
    double time;
    double mark;  // uniform mark in (0,1), used as the resampling coin
  };

  KeyedClock(const KeyedRng& rng, Domain count_d, Domain time_d, Domain mark_d, std::uint64_t id, double rate)
      : rng_(rng), count_d_(count_d), time_d_(time_d), mark_d_(mark_d), id_(id), rate_(rate),
        len_(rate > 0.0 ? 1.0 / rate : 0.0) {}

  [[nodiscard]] double rate() const { return rate_; }

  /// Points of cell c sorted by time.
  [[nodiscard]] std::vector<Point> cell(std::uint64_t c) const {
    std::vector<Point> pts;
    if (rate_ <= 0.0) return pts;
    const int n = poisson_from_uniform(rng_.uniform(count_d_, id_, c), 1.0);
    pts.reserve(static_cast<std::size_t>(n));
    for (int m = 0; m < n; ++m) {
      const std::uint64_t k = (c << 12) | static_cast<std::uint64_t>(m);
      pts.push_back({(static_cast<double>(c) + rng_.uniform(time_d_, id_, k)) * len_, rng_.uniform(mark_d_, id_, k)});
    }
    std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.time < b.time; });
    return pts;
  }

  /// All points with t0 < time <= t1, in increasing order.
  [[nodiscard]] std::vector<Point> points_in(double t0, double t1) const {
    std::vector<Point> out;
    if (rate_ <= 0.0 || !(t1 > t0)) return out;
    const auto c0 = static_cast<std::uint64_t>(std::max(0.0, std::floor(t0 / len_)));
    const auto c1 = static_cast<std::uint64_t>(std::floor(t1 / len_));
    for (std::uint64_t c = c0; c <= c1; ++c)
      for (const auto& p : cell(c))
        if (p.time > t0 && p.time <= t1) out.push_back(p);
    return out;
  }

  /// Latest point with t0 < time <= t1, walking backwards from t1.
  [[nodiscard]] bool last_in(double t0, double t1, Point& out) const {
    if (rate_ <= 0.0 || !(t1 > t0)) return false;
    const auto c0 = static_cast<std::uint64_t>(std::max(0.0, std::floor(t0 / len_)));
    auto c = static_cast<std::uint64_t>(std::floor(t1 / len_));
    while (true) {
      const auto pts = cell(c);
      for (auto it = pts.rbegin(); it != pts.rend(); ++it) {
        if (it->time <= t1 && it->time > t0) {
          out = *it;
          return true;
        }
        if (it->time <= t0) return false;
      }
      if (c == c0) return false;
      --c;
    }
  }

 private:
  KeyedRng rng_;
  Domain count_d_, time_d_, mark_d_;
  std::uint64_t id_;
  double rate_;
  double len_;
};

inline KeyedClock update_clock(const KeyedRng& rng, std::uint64_t pid, double kappa) {
  return {rng, Domain::UpdateCount, Domain::UpdateTime, Domain::UpdateCoin, pid, kappa};
}
inline KeyedClock infection_clock(const KeyedRng& rng, std::uint64_t pid, double lambda) {
  return {rng, Domain::InfectionCount, Domain::InfectionTime, Domain::InfectionTime, pid, lambda};
}
inline KeyedClock recovery_clock(const KeyedRng& rng, std::uint64_t vertex) {
  return {rng, Domain::RecoveryCount, Domain::RecoveryTime, Domain::RecoveryTime, vertex, 1.0};
}

}  // namespace dynnet
