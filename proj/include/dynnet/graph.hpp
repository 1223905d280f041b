#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dynnet/kernels.hpp"
#include "dynnet/rng.hpp"
#include "dynnet/sampling.hpp"

namespace dynnet {

/// Shortest round-trip decimal form of a double.
inline std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return {buf, res.ptr};
}

struct PairObservation {
  bool present = false;
  double observed_at = 0.0;
};

/// Present-edge set with sorted adjacency and a per-pair observation cache.
class GraphState {
 public:
  GraphState() = default;
  explicit GraphState(Vertex n) : adj_(static_cast<std::size_t>(n) + 1) {}

  [[nodiscard]] Vertex N() const { return static_cast<Vertex>(adj_.empty() ? 0 : adj_.size() - 1); }
  [[nodiscard]] std::int64_t edge_count() const { return edge_count_; }
  [[nodiscard]] const std::vector<Vertex>& neighbours(Vertex i) const { return adj_[static_cast<std::size_t>(i)]; }
  [[nodiscard]] std::size_t degree(Vertex i) const { return adj_[static_cast<std::size_t>(i)].size(); }

  [[nodiscard]] bool has_edge(Vertex i, Vertex j) const {
    const auto& a = adj_[static_cast<std::size_t>(i)];
    return std::binary_search(a.begin(), a.end(), j);
  }

  bool add_edge(Vertex i, Vertex j) {
    if (!insert_sorted(adj_[static_cast<std::size_t>(i)], j)) return false;
    insert_sorted(adj_[static_cast<std::size_t>(j)], i);
    ++edge_count_;
    return true;
  }

  bool remove_edge(Vertex i, Vertex j) {
    if (!erase_sorted(adj_[static_cast<std::size_t>(i)], j)) return false;
    erase_sorted(adj_[static_cast<std::size_t>(j)], i);
    --edge_count_;
    return true;
  }

  void set_edge(Vertex i, Vertex j, bool present) {
    if (present) add_edge(i, j);
    else remove_edge(i, j);
  }

  /// Bulk construction: appends without ordering, then sorts once.
  void append_unsorted(Vertex i, Vertex j) {
    adj_[static_cast<std::size_t>(i)].push_back(j);
    adj_[static_cast<std::size_t>(j)].push_back(i);
    ++edge_count_;
  }
  void finalize() {
    for (auto& a : adj_) std::sort(a.begin(), a.end());
  }

  [[nodiscard]] std::vector<std::pair<Vertex, Vertex>> edges() const {
    std::vector<std::pair<Vertex, Vertex>> out;
    out.reserve(static_cast<std::size_t>(edge_count_));
    for (Vertex i = 1; i <= N(); ++i)
      for (Vertex j : neighbours(i))
        if (j > i) out.emplace_back(i, j);
    return out;
  }

  /// Symmetric adjacency, consistent edge count, no cache entry ahead of the clock.
  [[nodiscard]] bool check_invariants() const {
    std::int64_t half = 0;
    for (Vertex i = 1; i <= N(); ++i) {
      const auto& a = neighbours(i);
      if (!std::is_sorted(a.begin(), a.end())) return false;
      if (std::adjacent_find(a.begin(), a.end()) != a.end()) return false;
      for (Vertex j : a) {
        if (j == i || j < 1 || j > N() || !has_edge(j, i)) return false;
      }
      half += static_cast<std::int64_t>(a.size());
    }
    if (half != 2 * edge_count_) return false;
    for (const auto& [k, obs] : pair_cache)
      if (obs.observed_at > clock) return false;
    return true;
  }

  void write_snapshot(std::ostream& os) const {
    os << "N=" << N() << " t=" << format_double(clock) << '\n';
    for (const auto& [i, j] : edges()) os << i << ' ' << j << '\n';
  }

  static GraphState read_snapshot(std::istream& is) {
    std::string header;
    if (!std::getline(is, header)) throw std::runtime_error("snapshot: missing header");
    long long n = 0;
    double t = 0;
    if (std::sscanf(header.c_str(), "N=%lld t=%lf", &n, &t) != 2) throw std::runtime_error("snapshot: bad header");
    GraphState g(static_cast<Vertex>(n));
    g.clock = t;
    long long i = 0, j = 0;
    while (is >> i >> j) g.add_edge(static_cast<Vertex>(i), static_cast<Vertex>(j));
    return g;
  }

  double clock = 0.0;
  std::unordered_map<std::uint64_t, PairObservation> pair_cache;

 private:
  static bool insert_sorted(std::vector<Vertex>& v, Vertex x) {
    auto it = std::lower_bound(v.begin(), v.end(), x);
    if (it != v.end() && *it == x) return false;
    v.insert(it, x);
    return true;
  }
  static bool erase_sorted(std::vector<Vertex>& v, Vertex x) {
    auto it = std::lower_bound(v.begin(), v.end(), x);
    if (it == v.end() || *it != x) return false;
    v.erase(it);
    return true;
  }

  std::vector<std::vector<Vertex>> adj_;
  std::int64_t edge_count_ = 0;
};

/// The vertex list 1..n.
inline std::vector<Vertex> all_vertices(Vertex n) {
  std::vector<Vertex> v(static_cast<std::size_t>(n));
  for (Vertex i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i + 1;
  return v;
}

/// Stationary graph: each pair present independently with p_{i,j}. Per row, candidate
/// columns are skipped geometrically under the running bound p_{i,j} (non-increasing in j)
/// and thinned by the exact ratio, so the cost is O(N + |E|) in expectation.
inline GraphState sample_stationary(const PairModel& pm, std::uint64_t seed, std::uint64_t replica = 0) {
  const Vertex n = pm.N();
  GraphState g(n);
  CounterStream rng(seed, Domain::Stationary, replica);
  for (Vertex i = 1; i < n; ++i) {
    std::int64_t j = i + 1;
    while (j <= n) {
      const double q = pm.p(i, static_cast<Vertex>(j));
      if (q <= 0.0) break;
      j += static_cast<std::int64_t>(std::min<std::uint64_t>(rng.geometric_failures(q), static_cast<std::uint64_t>(n)));
      if (j > n) break;
      if (rng.uniform() * q < pm.p(i, static_cast<Vertex>(j))) g.append_unsorted(i, static_cast<Vertex>(j));
      ++j;
    }
  }
  g.finalize();
  return g;
}

/// Graph at time zero read from the keyed initial coins (O(N^2); used by the eager oracle).
inline GraphState initial_graph(const PairModel& pm, const KeyedRng& rng) {
  const Vertex n = pm.N();
  GraphState g(n);
  for (Vertex i = 1; i < n; ++i)
    for (Vertex j = i + 1; j <= n; ++j)
      if (rng.uniform(Domain::InitialCoin, pair_id(i, j), 0) < pm.p(i, j)) g.append_unsorted(i, j);
  g.finalize();
  return g;
}

/// Presence of pair {i,j} at time t under the keyed realization, given its state at s <= t.
inline bool keyed_pair_state(const PairModel& pm, const KeyedRng& rng, Vertex i, Vertex j, bool state_s, double s,
                             double t) {
  KeyedClock::Point last{};
  if (update_clock(rng, pair_id(i, j), pm.kappa(i, j)).last_in(s, t, last)) return last.mark < pm.p(i, j);
  return state_s;
}

/// Lazy edge oracle. An unobserved pair starts from its keyed initial coin at time 0, which
/// is the stationary marginal; thereafter the last keyed update in (observed_at, t] decides.
inline bool lazy_edge_query(GraphState& g, const PairModel& pm, const KeyedRng& rng, Vertex i, Vertex j, double t) {
  check_pair(pm.params(), i, j);
  const std::uint64_t id = pair_id(i, j);
  PairObservation obs;
  if (auto it = g.pair_cache.find(id); it != g.pair_cache.end()) {
    obs = it->second;
    if (t < obs.observed_at) throw std::invalid_argument("lazy_edge_query: time moved backwards for this pair");
  } else {
    obs.present = rng.uniform(Domain::InitialCoin, id, 0) < pm.p(i, j);
    obs.observed_at = 0.0;
    if (t < 0.0) throw std::invalid_argument("lazy_edge_query: negative time");
  }
  const bool now = keyed_pair_state(pm, rng, i, j, obs.present, obs.observed_at, t);
  g.pair_cache[id] = {now, t};
  g.clock = std::max(g.clock, t);
  return now;
}

constexpr Vertex kEagerMaxN = 512;

/// Eager oracle: advances every pair's keyed update clock to absolute time t.
inline void evolve_eager_to(GraphState& g, const PairModel& pm, const KeyedRng& rng, double t) {
  if (pm.N() > kEagerMaxN) throw std::length_error("evolve_eager: N exceeds the quadratic-cost guard");
  if (t < g.clock) throw std::invalid_argument("evolve_eager: negative duration");
  if (t == g.clock) return;
  const double s = g.clock;
  for (Vertex i = 1; i < pm.N(); ++i)
    for (Vertex j = i + 1; j <= pm.N(); ++j) {
      const bool was = g.has_edge(i, j);
      const bool now = keyed_pair_state(pm, rng, i, j, was, s, t);
      if (now != was) g.set_edge(i, j, now);
    }
  g.clock = t;
}

inline void evolve_eager(GraphState& g, const PairModel& pm, const KeyedRng& rng, double dt) {
  if (dt < 0.0) throw std::invalid_argument("evolve_eager: negative duration");
  evolve_eager_to(g, pm, rng, g.clock + dt);
}

/// Proposes absent-pair activations with probability proportional to kappa_{i,j} p_{i,j}.
/// Each pair is owned by one or both endpoints according to the update rule; an owner o
/// proposes j over its range from a dyadic-block envelope of the row, so the static
/// envelope total bounds the true rate and every rejection is an exact thinning.
class ActivationSampler {
 public:
  explicit ActivationSampler(const PairModel& pm) : pm_(&pm) {
    const Vertex n = pm.N();
    const auto& m = pm.params();
    const double ge = m.kernel.gamma * m.eta;
    both_ = m.update_rule == UpdateRule::Sum;
    owner_is_max_ = m.update_rule == UpdateRule::Max && ge < 0.0;
    std::vector<double> w(static_cast<std::size_t>(n) + 1, 0.0);
    for (Vertex o = 1; o <= n; ++o) {
      const auto [lo, hi] = range(o);
      if (lo <= hi) w[static_cast<std::size_t>(o)] = pm.kappa_vertex(o) * envelope_sum(o, lo, hi);
    }
    owners_ = AliasTable(w);
  }

  [[nodiscard]] double envelope_total() const { return owners_.total(); }

  /// Owner o's range of partners.
  [[nodiscard]] std::pair<Vertex, Vertex> range(Vertex o) const {
    if (both_) return {1, pm_->N()};
    if (owner_is_max_) return {1, o - 1};
    return {o + 1, pm_->N()};
  }

  /// One thinned proposal; nullopt on rejection by the envelope.
  [[nodiscard]] std::optional<std::pair<Vertex, Vertex>> propose(CounterStream& rng) const {
    if (owners_.empty()) return std::nullopt;
    const auto o = static_cast<Vertex>(owners_.sample(rng));
    const auto [lo, hi] = range(o);
    double total = envelope_sum(o, lo, hi);
    double u = rng.uniform() * total;
    for (Vertex b = lo; b <= hi;) {
      const Vertex e = block_end(b, hi);
      const double env = block_env(o, b, e);
      const double mass = env * static_cast<double>(e - b + 1);
      if (u < mass || e == hi) {
        const Vertex j = b + static_cast<Vertex>(rng.below(static_cast<std::uint64_t>(e - b + 1)));
        if (j == o || env <= 0.0) return std::nullopt;
        if (rng.uniform() * env < pm_->p(o, j)) return std::make_pair(std::min(o, j), std::max(o, j));
        return std::nullopt;
      }
      u -= mass;
      b = e + 1;
    }
    return std::nullopt;
  }

  /// Exact all-pairs activation total, sum over i<j of kappa_{i,j} p_{i,j} (O(N^2), cached).
  [[nodiscard]] double all_pairs_total() const {
    if (!all_total_) {
      double s = 0.0;
      for (Vertex i = 1; i < pm_->N(); ++i)
        for (Vertex j = i + 1; j <= pm_->N(); ++j) s += pm_->kappa(i, j) * pm_->p(i, j);
      all_total_ = s;
    }
    return *all_total_;
  }

  /// Exact absent-activation total given the present edge set.
  [[nodiscard]] double absent_total(const GraphState& g) const {
    double present = 0.0;
    for (const auto& [i, j] : g.edges()) present += pm_->kappa(i, j) * pm_->p(i, j);
    return std::max(0.0, all_pairs_total() - present);
  }

  /// Samples an absent pair exactly; nullopt when no absent pair has positive rate.
  [[nodiscard]] std::optional<std::pair<Vertex, Vertex>> sample(CounterStream& rng, const GraphState& g) const {
    if (absent_total(g) <= 1e-15 * std::max(1.0, all_pairs_total())) return std::nullopt;
    while (true) {
      auto pr = propose(rng);
      if (pr && !g.has_edge(pr->first, pr->second)) return pr;
    }
  }

 private:
  [[nodiscard]] static Vertex block_end(Vertex b, Vertex hi) {
    return static_cast<Vertex>(std::min<std::int64_t>(hi, 2LL * b - 1));
  }
  [[nodiscard]] double block_env(Vertex o, Vertex b, Vertex e) const {
    const Vertex first = (b == o) ? b + 1 : b;
    if (first > e) return 0.0;
    return pm_->p(o, first);
  }
  [[nodiscard]] double envelope_sum(Vertex o, Vertex lo, Vertex hi) const {
    double s = 0.0;
    for (Vertex b = lo; b <= hi;) {
      const Vertex e = block_end(b, hi);
      s += block_env(o, b, e) * static_cast<double>(e - b + 1);
      b = e + 1;
    }
    return s;
  }

  const PairModel* pm_;
  bool both_ = true;
  bool owner_is_max_ = false;
  AliasTable owners_;
  mutable std::optional<double> all_total_;
};

}  // namespace dynnet
