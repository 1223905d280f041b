#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "dynnet/graph.hpp"
#include "dynnet/kernels.hpp"
#include "dynnet/record.hpp"
#include "dynnet/rng.hpp"

namespace dynnet {

/// Stars, connectors and odd vertices at level a. Classes are pairwise disjoint:
/// stars are even and at most ceil(aN) <= ceil(N/2), connectors are even and above
/// ceil(N/2), odd vertices are odd.
struct StarPartition {
  std::int64_t N = 0;
  double a = 0.0;
  std::vector<Vertex> stars, c0, c1, odd;
  bool simplified_probs = false;

  [[nodiscard]] bool is_star(Vertex v) const { return std::binary_search(stars.begin(), stars.end(), v); }
  [[nodiscard]] bool is_connector(Vertex v) const {
    return std::binary_search(c0.begin(), c0.end(), v) || std::binary_search(c1.begin(), c1.end(), v);
  }
};

namespace detail {
// ceil that ignores floating noise just above an integer (a*N is often exact in intent).
inline std::int64_t ceil_tol(double x) { return static_cast<std::int64_t>(std::ceil(x - 1e-9)); }
inline bool is_integer(double x) { return std::abs(x - std::round(x)) < 1e-9; }
}  // namespace detail

/// Accepts a in (0, 1/2]; the closed endpoint admits the a = 1/2 worked example.
inline StarPartition build_partition(std::int64_t n, double a, bool simplified_probs = false) {
  if (!(a > 0.0 && a <= 0.5)) throw DomainError("build_partition: a must lie in (0, 1/2]");
  if (n < 8) throw DomainError("build_partition: N must be >= 8");
  if (simplified_probs && (!detail::is_integer(a * n) || std::llround(a * n) % 8 != 0 || n % 8 != 0))
    throw DomainError("build_partition: simplified probabilities need aN and N divisible by 8");
  StarPartition p;
  p.N = n;
  p.a = a;
  p.simplified_probs = simplified_probs;
  const auto s_lo = detail::ceil_tol(a * n / 2.0), s_hi = detail::ceil_tol(a * n);
  for (auto x = s_lo + 1; x <= s_hi; ++x)
    if (x % 2 == 0) p.stars.push_back(static_cast<Vertex>(x));
  const auto c_lo = detail::ceil_tol(n / 2.0);
  for (auto y = c_lo + 1; y <= n; ++y) {
    if (y % 4 == 0) p.c0.push_back(static_cast<Vertex>(y));
    if (y % 4 == 2) p.c1.push_back(static_cast<Vertex>(y));
  }
  for (std::int64_t z = 1; z <= n; z += 2) p.odd.push_back(static_cast<Vertex>(z));
  return p;
}

/// Record model on the subgraph spanned by the partition. With simplified probabilities,
/// star-star pairs use p(a',a')/N and star-connector pairs p(a',1)/N with a' = floor(aN)/N,
/// connector-connector pairs are absent, and pairs touching odd vertices keep p_{i,j}.
/// Vertices outside every class are isolated. Update rates are always the model's.
inline RecordModel subgraph_record_model(const PairModel& pm, const StarPartition& part) {
  const Vertex n = pm.N();
  if (part.N != n) throw std::invalid_argument("subgraph_record_model: partition built for another N");
  RecordModel rm(n, pm.params().lambda);
  std::vector<char> cls(static_cast<std::size_t>(n) + 1, 0);  // 0 none, 1 star, 2 connector, 3 odd
  for (Vertex v : part.stars) cls[static_cast<std::size_t>(v)] = 1;
  for (Vertex v : part.c0) cls[static_cast<std::size_t>(v)] = 2;
  for (Vertex v : part.c1) cls[static_cast<std::size_t>(v)] = 2;
  for (Vertex v : part.odd) cls[static_cast<std::size_t>(v)] = 3;
  const auto& k = pm.params().kernel;
  const double ap = std::floor(part.a * static_cast<double>(n) + 1e-9) / static_cast<double>(n);
  const double p_ss = std::min(1.0, kernel_eval(k, ap, ap) / static_cast<double>(n));
  const double p_sc = std::min(1.0, kernel_eval(k, ap, 1.0) / static_cast<double>(n));
  for (Vertex i = 1; i < n; ++i)
    for (Vertex j = i + 1; j <= n; ++j) {
      const int ci = cls[static_cast<std::size_t>(i)], cj = cls[static_cast<std::size_t>(j)];
      double p = 0.0;
      if (ci == 0 || cj == 0) p = 0.0;
      else if (ci == 3 || cj == 3 || !part.simplified_probs) p = pm.p(i, j);
      else if (ci == 1 && cj == 1) p = p_ss;
      else if (ci == 2 && cj == 2) p = 0.0;
      else p = p_sc;
      rm.set(i, j, p, pm.kappa(i, j));
    }
  return rm;
}

enum class StarRegime { QuickDirectWeak, QuickDirectFactor, QuickIndirect, LocalSurvivalPos, LocalSurvivalNonpos };

/// Star level a(lambda) for each survival strategy. |log lambda| is the natural log of 1/lambda.
inline double star_scale(KernelKind kind, StarRegime regime, double lambda, double r, double gamma, double eta) {
  if (!(lambda > 0.0 && lambda < 1.0)) throw DomainError("star_scale: lambda must lie in (0,1)");
  if (!(r > 0.0) || !(gamma > 0.0 && gamma < 1.0)) throw DomainError("star_scale: need r > 0 and gamma in (0,1)");
  const double loginv = -std::log(lambda);
  switch (regime) {
    case StarRegime::QuickDirectWeak:
      if (kind != KernelKind::Weak) throw DomainError("star_scale: quick direct (weak) needs the weak kernel");
      return r * std::pow(lambda, 1.0 / gamma);
    case StarRegime::QuickDirectFactor:
      if (kind != KernelKind::Factor || !(gamma > 0.5))
        throw DomainError("star_scale: quick direct (factor) needs the factor kernel with gamma > 1/2");
      return r * std::pow(lambda, 1.0 / (2 * gamma - 1));
    case StarRegime::QuickIndirect:
      if ((kind != KernelKind::PreferentialAttachment && kind != KernelKind::Strong) || !(gamma > 0.5))
        throw DomainError("star_scale: quick indirect needs a PA or strong kernel with gamma > 1/2");
      return r * std::pow(lambda, 2.0 / (2 * gamma - 1));
    case StarRegime::LocalSurvivalPos:
      if (!(eta > 0.0 && eta < 0.5)) throw DomainError("star_scale: positive local survival needs 0 < eta < 1/2");
      return r * std::pow(lambda, 2.0 / (gamma * (1 - 2 * eta))) * std::pow(loginv, -(1 - 2 * eta) / gamma);
    case StarRegime::LocalSurvivalNonpos:
      if (!(eta <= 0.0)) throw DomainError("star_scale: non-positive local survival needs eta <= 0");
      return r * std::pow(lambda, 2.0 / gamma) * std::pow(loginv, -1.0 / gamma);
  }
  throw DomainError("star_scale: unknown regime");
}

/// Continuum update rate of a vertex at relative position x.
inline double kappa_continuum(const ModelParams& m, double x) {
  return m.varkappa * std::pow(x, -m.kernel.gamma * m.eta);
}

/// Local time unit: 1 / (1 + kappa(1/2) + kappa(a/2)) with the continuum rate.
inline double local_time_unit(const ModelParams& m, double a) {
  if (!(a > 0.0 && a <= 1.0)) throw DomainError("local_time_unit: a must lie in (0,1]");
  return 1.0 / (1.0 + kappa_continuum(m, 0.5) + kappa_continuum(m, a / 2));
}

struct ConditionThresholds {
  double m_direct = 256.0;    // quick direct
  double m_indirect = 256.0;  // quick indirect
  double m_local = 256.0;     // local survival log-margin constant
};

struct ConditionValues {
  double quick_direct = 0.0;    // lambda a p(a,a)
  double quick_indirect = 0.0;  // lambda^2 a p(a,1)^2
  double local = 0.0;           // lambda^2 t^2 p(a,1)
  double local_margin = 0.0;    // local + M log(lambda a); positive when the local condition holds
  bool direct_holds = false, indirect_holds = false, local_holds = false;
};

inline ConditionValues condition_values(const ModelParams& m, double a, const ConditionThresholds& th = {}) {
  if (!(a > 0.0 && a <= 0.5)) throw DomainError("condition_values: a must lie in (0, 1/2]");
  const auto& k = m.kernel;
  const double lam = m.lambda, t = local_time_unit(m, a), pa1 = kernel_eval(k, a, 1.0);
  ConditionValues c;
  c.quick_direct = lam * a * kernel_eval(k, a, a);
  c.quick_indirect = lam * lam * a * pa1 * pa1;
  c.local = lam * lam * t * t * pa1;
  c.local_margin = c.local + th.m_local * std::log(lam * a);
  c.direct_holds = c.quick_direct > th.m_direct;
  c.indirect_holds = c.quick_indirect > th.m_indirect;
  c.local_holds = c.local_margin > 0.0;
  return c;
}

enum class LowerBoundStrategy { Quick, Local };

/// Shape of the lower metastable density bound; c_prime is an unspecified constant.
inline double lower_bound_density(const KernelSpec& k, double lambda, double a, LowerBoundStrategy s,
                                  double c_prime = 1.0) {
  if (lambda == 0.0) return 0.0;
  return s == LowerBoundStrategy::Quick ? c_prime * lambda * a * row_integral(k, a)
                                        : c_prime * lambda * a * kernel_eval(k, a, 1.0);
}

/// Number of present edges between A and the other stars. A must be a subset of the stars.
inline std::int64_t cut_statistic(const GraphState& g, const StarPartition& part, std::span<const Vertex> a_set) {
  std::vector<char> in_a(static_cast<std::size_t>(g.N()) + 1, 0);
  for (Vertex x : a_set) {
    if (!part.is_star(x)) throw DomainError("cut_statistic: A must be a subset of the stars");
    in_a[static_cast<std::size_t>(x)] = 1;
  }
  std::int64_t cut = 0;
  for (Vertex x : a_set)
    for (Vertex y : g.neighbours(x))
      if (part.is_star(y) && !in_a[static_cast<std::size_t>(y)]) ++cut;
  return cut;
}

/// Graph at time t read from a record.
inline GraphState record_graph_at(const GraphicalRecord& rec, double t) {
  GraphState g(rec.N());
  for (Vertex i = 1; i < rec.N(); ++i)
    for (Vertex j = i + 1; j <= rec.N(); ++j)
      if (rec.present(i, j, t)) g.append_unsorted(i, j);
  g.finalize();
  g.clock = t;
  return g;
}

/// Short time unit for two-step spreading: -log(0.99) / (1 + 2 varkappa).
inline double two_step_time_unit(double varkappa) { return -std::log(0.99) / (1.0 + 2.0 * varkappa); }

namespace detail {
/// reach[x_idx] has bit z_idx set when star z can be reached from star x over (t, t + w]
/// through one connector, ignoring the requirement z not in A.
inline std::vector<std::uint64_t> reach_masks(const GraphicalRecord& rec, const StarPartition& part, double t,
                                              double w) {
  const auto& s = part.stars;
  if (s.size() > 64) throw std::length_error("reach_masks: at most 64 stars");
  if (t + w > rec.t_end()) throw std::invalid_argument("reach_statistic: record does not cover the window");
  const double mid = t + w / 2, end = t + w;
  auto stable = [&](Vertex v) { return !rec.recovers_in(v, t, end); };
  std::vector<Vertex> conns(part.c0);
  conns.insert(conns.end(), part.c1.begin(), part.c1.end());
  std::vector<std::uint64_t> reach(s.size(), 0);
  for (Vertex y : conns) {
    if (!stable(y)) continue;
    std::uint64_t first = 0, second = 0;  // stars usable as first hop x and as target z via y
    for (std::size_t k = 0; k < s.size(); ++k) {
      const Vertex v = s[k];
      if (!rec.present(v, y, t) || rec.updated_in(v, y, t, end)) continue;
      if (stable(v) && rec.infection_point_in(v, y, t, mid)) first |= std::uint64_t{1} << k;
      if (stable(v) && rec.infection_point_in(v, y, mid, end)) second |= std::uint64_t{1} << k;
    }
    for (std::size_t k = 0; k < s.size(); ++k)
      if ((first >> k) & 1u) reach[k] |= second & ~(std::uint64_t{1} << k);
  }
  return reach;
}
}  // namespace detail

/// |S(A)|: stable stars outside A reachable from A through one connector within
/// (t, t + t*], with both edges present and not updated, and infection points on the
/// first edge in the first half-window and on the second edge in the second half.
inline std::int64_t reach_statistic(const GraphicalRecord& rec, const StarPartition& part,
                                    std::span<const Vertex> a_set, double t, double varkappa) {
  const auto reach = detail::reach_masks(rec, part, t, two_step_time_unit(varkappa));
  std::uint64_t amask = 0;
  for (Vertex x : a_set) {
    const auto it = std::lower_bound(part.stars.begin(), part.stars.end(), x);
    if (it == part.stars.end() || *it != x) throw DomainError("reach_statistic: A must be a subset of the stars");
    amask |= std::uint64_t{1} << (it - part.stars.begin());
  }
  std::uint64_t hit = 0;
  for (std::size_t k = 0; k < part.stars.size(); ++k)
    if ((amask >> k) & 1u) hit |= reach[k];
  return std::popcount(hit & ~amask);
}

/// Outcome of checking a "for every subset A of stars with relative size in a band"
/// statement: exhaustive when the star set is small, random subsets otherwise.
struct SubsetScan {
  bool exhaustive = false;
  std::uint64_t subsets_checked = 0;
  std::uint64_t violations = 0;
  double min_ratio = INFINITY;  // smallest observed statistic / threshold
};

namespace detail {
template <class Stat, class Threshold>
SubsetScan scan_subsets(std::size_t ns, double rho_lo, double rho_hi, Stat stat, Threshold threshold,
                        std::uint64_t samples, std::uint64_t seed) {
  SubsetScan out;
  auto visit = [&](std::uint64_t mask) {
    const double rho = static_cast<double>(std::popcount(mask)) / static_cast<double>(ns);
    if (rho < rho_lo || rho > rho_hi) return;
    const double th = threshold(rho);
    const double v = stat(mask);
    ++out.subsets_checked;
    if (v < th) ++out.violations;
    if (th > 0.0) out.min_ratio = std::min(out.min_ratio, v / th);
  };
  if (ns == 0) return out;
  if (ns <= 20) {
    out.exhaustive = true;
    for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << ns); ++mask) visit(mask);
    return out;
  }
  CounterStream rng(seed, Domain::Diagnostics, 0);
  for (std::uint64_t k = 0; k < samples; ++k) {
    const double rho = rho_lo + (rho_hi - rho_lo) * rng.uniform();
    std::uint64_t mask = 0;
    for (std::size_t i = 0; i < ns; ++i)
      if (rng.uniform() < rho) mask |= std::uint64_t{1} << i;
    visit(mask);
  }
  return out;
}
}  // namespace detail

/// Scans subsets A of stars with rho_A in [rho0, 1 - rho0] for a cut below
/// rho(1-rho) a^2 p(a,a) N / 32. rho_A is |A| / |stars|.
inline SubsetScan cut_scan(const GraphState& g, const StarPartition& part, const KernelSpec& k, double rho0,
                           std::uint64_t samples = 100000, std::uint64_t seed = 1) {
  const auto& s = part.stars;
  if (s.size() > 64) throw std::length_error("cut_scan: at most 64 stars");
  std::vector<std::uint64_t> adj(s.size(), 0);
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (i != j && g.has_edge(s[i], s[j])) adj[i] |= std::uint64_t{1} << j;
  const double scale = part.a * part.a * kernel_eval(k, part.a, part.a) * static_cast<double>(part.N) / 32.0;
  auto stat = [&](std::uint64_t mask) {
    std::int64_t c = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if ((mask >> i) & 1u) c += std::popcount(adj[i] & ~mask);
    return static_cast<double>(c);
  };
  return detail::scan_subsets(s.size(), rho0, 1.0 - rho0, stat, [&](double r) { return r * (1 - r) * scale; },
                              samples, seed);
}

/// Scans subsets A of stars with rho_A in [0.05, 0.95] for |S(A)| below (1 - rho) a N / 20.
inline SubsetScan reach_scan(const GraphicalRecord& rec, const StarPartition& part, double t, double varkappa,
                             std::uint64_t samples = 100000, std::uint64_t seed = 1) {
  const auto reach = detail::reach_masks(rec, part, t, two_step_time_unit(varkappa));
  const std::size_t ns = part.stars.size();
  auto stat = [&](std::uint64_t mask) {
    std::uint64_t hit = 0;
    for (std::size_t k = 0; k < ns; ++k)
      if ((mask >> k) & 1u) hit |= reach[k];
    return static_cast<double>(std::popcount(hit & ~mask));
  };
  const double an = part.a * static_cast<double>(part.N);
  return detail::scan_subsets(ns, 0.05, 0.95, stat, [&](double r) { return (1 - r) * an / 20.0; }, samples, seed);
}

struct LocalSurvivalParams {
  double t_unit = 0.0;  // local time unit
  double delta = 0.0;   // reservoir threshold constant, c1 / 8
  double c1 = 0.0;
  double m_local = 256.0;
  double exponent = 0.0;  // delta lambda^2 t^2 p(a,1) / 4
  double k_bar = 0.0;     // floor(exp(exponent)); may exceed any integer type
  double reservoir_threshold = 0.0;  // delta lambda p(a,1) t

  /// Window J_k: [0, 2t) for k = 0, [0, 3t) for k = 1, [(k-2)t, (k+2)t) otherwise.
  [[nodiscard]] std::pair<double, double> window(std::int64_t k) const {
    if (k == 0) return {0.0, 2 * t_unit};
    if (k == 1) return {0.0, 3 * t_unit};
    return {static_cast<double>(k - 2) * t_unit, static_cast<double>(k + 2) * t_unit};
  }
};

inline LocalSurvivalParams local_survival_params(const ModelParams& m, double a, double c1 = 0.01,
                                                 double m_local = 256.0) {
  if (!(c1 > 0.0)) throw DomainError("local_survival_params: c1 must be positive");
  LocalSurvivalParams ls;
  ls.t_unit = local_time_unit(m, a);
  ls.c1 = c1;
  ls.delta = c1 / 8.0;
  ls.m_local = m_local;
  const double pa1 = kernel_eval(m.kernel, a, 1.0);
  ls.exponent = ls.delta * m.lambda * m.lambda * ls.t_unit * ls.t_unit * pa1 / 4.0;
  ls.k_bar = std::floor(std::exp(ls.exponent));
  ls.reservoir_threshold = ls.delta * m.lambda * pa1 * ls.t_unit;
  return ls;
}

/// Ratio E|C_{k,x}| / p(a,1) minimised over stars, for an interior window (length 4t):
/// sum over y in C0 of exp(-4t) p_{x,y} exp(-4t kappa_{x,y}). The reported c1 is half
/// of that ratio, so the typical stable-neighbour count clears c1 p(a,1) twice over.
struct C1Calibration {
  double min_ratio = 0.0;
  double c1 = 0.0;
};

inline C1Calibration calibrate_c1(const PairModel& pm, const StarPartition& part) {
  const auto& m = pm.params();
  const double t = local_time_unit(m, part.a), pa1 = kernel_eval(m.kernel, part.a, 1.0);
  double best = INFINITY;
  for (Vertex x : part.stars) {
    double e = 0.0;
    for (Vertex y : part.c0) e += std::exp(-4 * t) * pm.p(x, y) * std::exp(-4 * t * pm.kappa(x, y));
    best = std::min(best, e / pa1);
  }
  if (!std::isfinite(best)) best = 0.0;
  return {best, best / 2};
}

struct StableNeighbourPoint {
  std::int64_t k = 0;
  std::int64_t stable = 0;           // |C_{k,x}|
  std::int64_t stable_infected = 0;  // |C'_{k,x}|
  double healthy_time = 0.0;         // time x is healthy on [k t, (k+1) t] under the restricted process
  bool reservoir = false;            // W_k
};

/// Stable-neighbour series of star x for k = 0..k_max from the given initial infected set.
/// The restricted process starts from init on C_{0,x} and x, and only transmits along
/// {x,y} at times s with y in C_{k,x} for some k whose window J_k contains s; every other
/// infection point is ignored. Windows are used for all k whose J_k the record covers.
inline std::vector<StableNeighbourPoint> stable_neighbour_series(const GraphicalRecord& rec, const StarPartition& part,
                                                                 Vertex x, const LocalSurvivalParams& ls,
                                                                 std::int64_t k_max, std::span<const Vertex> init) {
  if (!part.is_star(x)) throw DomainError("stable_neighbour_series: x must be a star");
  const double t = ls.t_unit;
  if (k_max < 0 || static_cast<double>(k_max + 2) * t > rec.t_end() * (1 + 1e-12))
    throw std::invalid_argument("stable_neighbour_series: record does not cover the horizon");
  std::int64_t k_cover = k_max;
  while (ls.window(k_cover + 1).second <= rec.t_end()) ++k_cover;
  // member[k] lists C_{k,x}.
  std::vector<std::vector<Vertex>> member(static_cast<std::size_t>(k_cover) + 1);
  for (std::int64_t k = 0; k <= k_cover; ++k) {
    const auto [lo, hi] = ls.window(k);
    for (Vertex y : part.c0)
      if (!rec.recovers_in(y, lo, hi) && rec.present(x, y, static_cast<double>(k) * t) &&
          !rec.updated_in(x, y, lo, hi))
        member[static_cast<std::size_t>(k)].push_back(y);
  }
  auto stable_at = [&](std::int64_t k, Vertex y) {
    const auto& v = member[static_cast<std::size_t>(k)];
    return std::binary_search(v.begin(), v.end(), y);
  };
  const InfectionFilter valid = [&](double s, Vertex u, Vertex v) {
    if (u != x && v != x) return false;
    const Vertex y = u == x ? v : u;
    const auto kc = static_cast<std::int64_t>(std::floor(s / t));
    for (std::int64_t k = std::max<std::int64_t>(0, kc - 2); k <= std::min(k_cover, kc + 2); ++k) {
      const auto [lo, hi] = ls.window(k);
      if (s >= lo && s < hi && stable_at(k, y)) return true;
    }
    return false;
  };
  std::vector<char> in_init(static_cast<std::size_t>(rec.N()) + 1, 0);
  for (Vertex v : init) in_init[static_cast<std::size_t>(v)] = 1;
  std::vector<Vertex> start;
  if (in_init[static_cast<std::size_t>(x)]) start.push_back(x);
  for (Vertex y : member[0])
    if (in_init[static_cast<std::size_t>(y)]) start.push_back(y);

  // Healthy intervals of x and snapshots of the restricted state at each k t.
  const double horizon = static_cast<double>(k_max + 1) * t;
  std::vector<std::pair<double, bool>> x_changes;
  std::vector<std::vector<char>> snap(static_cast<std::size_t>(k_max) + 1);
  std::vector<char> state(static_cast<std::size_t>(rec.N()) + 1, 0);
  for (Vertex v : start) state[static_cast<std::size_t>(v)] = 1;
  std::int64_t next_k = 0;
  auto take_snapshots_until = [&](double s) {
    while (next_k <= k_max && static_cast<double>(next_k) * t <= s) snap[static_cast<std::size_t>(next_k++)] = state;
  };
  const StateObserver obs = [&](double s, Vertex v, bool now) {
    // Snapshots record the state just before any change at a later time.
    while (next_k <= k_max && static_cast<double>(next_k) * t < s) snap[static_cast<std::size_t>(next_k++)] = state;
    state[static_cast<std::size_t>(v)] = now ? 1 : 0;
    if (v == x) x_changes.emplace_back(s, now);
  };
  run_contact(rec, start, std::min(horizon, rec.t_end()), valid, obs);
  take_snapshots_until(INFINITY);

  std::vector<StableNeighbourPoint> out;
  const bool x0 = in_init[static_cast<std::size_t>(x)] != 0;
  for (std::int64_t k = 0; k <= k_max; ++k) {
    StableNeighbourPoint pt;
    pt.k = k;
    const auto& mem = member[static_cast<std::size_t>(k)];
    pt.stable = static_cast<std::int64_t>(mem.size());
    for (Vertex y : mem) pt.stable_infected += snap[static_cast<std::size_t>(k)][static_cast<std::size_t>(y)];
    const double lo = static_cast<double>(k) * t, hi = lo + t;
    bool inf = x0;
    double last = 0.0, healthy = 0.0;
    auto add = [&](double from, double to) {
      if (!inf) healthy += std::max(0.0, std::min(to, hi) - std::max(from, lo));
    };
    for (const auto& [s, now] : x_changes) {
      add(last, s);
      last = s;
      inf = now;
    }
    add(last, hi);
    pt.healthy_time = healthy;
    pt.reservoir = static_cast<double>(pt.stable_infected) >= ls.reservoir_threshold && healthy <= t / 2;
    out.push_back(pt);
  }
  return out;
}

}  // namespace dynnet
