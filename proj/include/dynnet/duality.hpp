#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "dynnet/engine.hpp"
#include "dynnet/record.hpp"
#include "dynnet/stats.hpp"

namespace dynnet {

/// Two independent estimates of the same quantity: the mean infected fraction at t from
/// full occupancy, and the mean survival probability to t from one uniform vertex.
struct DualityCheck {
  Estimate lhs, rhs;
  double z = 0.0;
};

inline DualityCheck duality_check(const Simulator& sim, double t, std::size_t reps, std::uint64_t seed) {
  if (reps < 100) throw std::invalid_argument("duality_check: reps must be >= 100");
  const Vertex n = sim.pair_model().N();
  DualityCheck out;
  out.lhs = density_at(sim, t, reps, seed);
  // The single-start side uses a disjoint key so the two estimates are independent.
  const std::uint64_t seed2 = key_hash(seed, Domain::Harness, 0xd0a1, 0);
  CounterStream pick(seed2, Domain::Harness, 1);
  Accumulator acc;
  EngineOptions opt;
  opt.record_series = false;
  for (std::size_t r = 0; r < reps; ++r) {
    const Vertex x = static_cast<Vertex>(pick.below(static_cast<std::uint64_t>(n))) + 1;
    const std::vector<Vertex> init{x};
    auto e = sim.engine(init, seed2, r, opt);
    e.run_until(t);
    acc.add(e.infected_count() > 0 ? 1.0 : 0.0);
  }
  out.rhs = {acc.mean(), acc.stderr_mean()};
  out.z = z_score(out.lhs.mean, out.lhs.stderr_, out.rhs.mean, out.rhs.stderr_);
  return out;
}

struct PlateauReport {
  std::vector<double> times, densities, stderr_;
  double rho_minus = 0.0, rho_plus = 0.0;  // min and max density over the window
  double max_abs_diff = 0.0;                // largest pairwise density difference
  bool plateau_pass = true;                 // every pairwise difference within 3 paired stderr
  bool monotone_decay = false;              // every consecutive drop significant at 3 paired stderr
};

/// Estimates the infected fraction from full occupancy at each probe time. All times are
/// read from the same replicas, so differences use the paired standard error.
inline PlateauReport metastability_probe(const Simulator& sim, const std::vector<double>& times, std::size_t reps,
                                         std::uint64_t seed) {
  if (times.empty()) throw std::invalid_argument("metastability_probe: empty time list");
  if (!std::is_sorted(times.begin(), times.end()) ||
      std::adjacent_find(times.begin(), times.end()) != times.end())
    throw std::invalid_argument("metastability_probe: times must be strictly increasing");
  if (reps < 2) throw std::invalid_argument("metastability_probe: reps must be >= 2");
  const Vertex n = sim.pair_model().N();
  const auto init = all_vertices(n);
  const std::size_t m = times.size();
  std::vector<std::vector<double>> d(m, std::vector<double>(reps));
  EngineOptions opt;
  opt.record_series = false;
  for (std::size_t r = 0; r < reps; ++r) {
    auto e = sim.engine(init, seed, r, opt);
    for (std::size_t k = 0; k < m; ++k) {
      e.run_until(times[k]);
      d[k][r] = static_cast<double>(e.infected_count()) / n;
    }
  }
  PlateauReport rep;
  rep.times = times;
  for (std::size_t k = 0; k < m; ++k) {
    Accumulator a;
    for (double v : d[k]) a.add(v);
    rep.densities.push_back(a.mean());
    rep.stderr_.push_back(a.stderr_mean());
  }
  rep.rho_minus = *std::min_element(rep.densities.begin(), rep.densities.end());
  rep.rho_plus = *std::max_element(rep.densities.begin(), rep.densities.end());
  auto paired = [&](std::size_t i, std::size_t j) {
    Accumulator a;
    for (std::size_t r = 0; r < reps; ++r) a.add(d[i][r] - d[j][r]);
    return std::pair{a.mean(), a.stderr_mean()};
  };
  rep.monotone_decay = m > 1;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      const auto [diff, se] = paired(i, j);
      rep.max_abs_diff = std::max(rep.max_abs_diff, std::abs(diff));
      if (std::abs(diff) > 3 * se) rep.plateau_pass = false;
      if (j == i + 1 && !(diff > 3 * se)) rep.monotone_decay = false;
    }
  return rep;
}

}  // namespace dynnet
