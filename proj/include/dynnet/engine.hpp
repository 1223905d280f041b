#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dynnet/graph.hpp"
#include "dynnet/kernels.hpp"
#include "dynnet/rng.hpp"
#include "dynnet/sampling.hpp"
#include "dynnet/stats.hpp"

namespace dynnet {

enum class EventType : int { Recovery = 0, Infection, NoOpInfection, EdgeUpdate, Activation, Rejected, None };
inline constexpr int kEventTypes = 6;

struct EventRecord {
  EventType type = EventType::None;
  double time = 0.0;
  Vertex u = 0, v = 0;
  int category = -1;  // 0 recovery, 1 infection, 2 edge update, 3 activation
};

struct SeriesPoint {
  double time;
  std::int64_t infected;
  std::int64_t star_infected;
  std::int64_t edges;
};

struct TrajectoryStats {
  std::optional<double> extinction_time;  // nullopt means censored at t_max
  double t_max = 0.0;
  std::int64_t N = 0;
  std::int64_t star_count = 0;
  std::vector<SeriesPoint> series;
  std::array<std::uint64_t, kEventTypes> event_counts{};

  [[nodiscard]] bool censored() const { return !extinction_time.has_value(); }

  /// CSV columns: time, infected_count, star_infected_count, edge_count. LF line endings.
  void write_csv(std::ostream& os) const {
    os << "time,infected_count,star_infected_count,edge_count\n";
    for (const auto& s : series)
      os << format_double(s.time) << ',' << s.infected << ',' << s.star_infected << ',' << s.edges << '\n';
  }
};

struct EngineOptions {
  double sample_interval = 0.5;
  bool record_series = true;
  bool stop_at_extinction = true;  // false keeps evolving the graph after extinction
  std::vector<Vertex> stars;       // vertices counted in the star-occupancy series
};

/// Joint evolution of the dynamic graph and the contact process by category-level
/// Gillespie sampling. Category rates: recovery |I|; infection lambda per present edge with
/// an infected endpoint (an attempt on an edge with two infected endpoints is an explicit
/// no-op); present-edge update kappa_{i,j} per present edge; absent-pair activation
/// bounded by the static envelope of the activation sampler and thinned exactly.
class EpidemicEngine {
 public:
  EpidemicEngine(const PairModel& pm, const ActivationSampler& act, GraphState graph, std::span<const Vertex> init,
                 std::uint64_t seed, std::uint64_t replica, EngineOptions opt = {})
      : pm_(&pm), act_(&act), g_(std::move(graph)), rng_(seed, Domain::Engine, replica), opt_(std::move(opt)),
        infected_(static_cast<std::size_t>(pm.N()) + 1, 0), pos_(static_cast<std::size_t>(pm.N()) + 1, -1),
        is_star_(static_cast<std::size_t>(pm.N()) + 1, 0), inf_deg_(static_cast<std::size_t>(pm.N())),
        upd_(static_cast<std::size_t>(pm.N())) {
    const auto& m = pm.params();
    both_owners_ = m.update_rule == UpdateRule::Sum;
    owner_is_max_ = m.update_rule == UpdateRule::Max && m.kernel.gamma * m.eta < 0.0;
    for (Vertex s : opt_.stars) is_star_[static_cast<std::size_t>(s)] = 1;
    for (Vertex x = 1; x <= pm.N(); ++x) refresh_update_weight(x);
    for (Vertex x : init) infect(x);
    if (opt_.record_series) next_sample_ = 0.0;
  }

  [[nodiscard]] double clock() const { return clock_; }
  [[nodiscard]] std::int64_t infected_count() const { return static_cast<std::int64_t>(inf_list_.size()); }
  [[nodiscard]] bool is_infected(Vertex x) const { return infected_[static_cast<std::size_t>(x)] != 0; }
  [[nodiscard]] const GraphState& graph() const { return g_; }
  [[nodiscard]] std::int64_t active_edges() const { return active_edges_; }
  [[nodiscard]] std::int64_t star_infected() const { return star_infected_; }
  [[nodiscard]] const std::vector<Vertex>& infected_list() const { return inf_list_; }
  [[nodiscard]] const std::array<std::uint64_t, kEventTypes>& event_counts() const { return counts_; }

  struct Rates {
    double recovery, infection, update, activation;
    [[nodiscard]] double total() const { return recovery + infection + update + activation; }
  };

  [[nodiscard]] Rates rates() const {
    const auto& m = pm_->params();
    return {static_cast<double>(inf_list_.size()), m.lambda * inf_deg_.total(), upd_.total(), act_->envelope_total()};
  }

  /// Samples and applies the next event, recording series points passed on the way.
  EventRecord step(double t_limit = INFINITY) {
    const Rates r = rates();
    const double total = r.total();
    EventRecord ev;
    if (total <= 0.0) {
      advance_series(t_limit);
      clock_ = t_limit;
      return ev;
    }
    const double t_next = clock_ + rng_.exponential(total);
    if (t_next > t_limit) {
      advance_series(t_limit);
      clock_ = t_limit;
      return ev;
    }
    advance_series(t_next);
    clock_ = t_next;
    ev.time = t_next;
    double u = rng_.uniform() * total;
    int cat = 0;
    if (u < r.recovery) {
      const Vertex x = inf_list_[rng_.below(inf_list_.size())];
      recover(x);
      ev = {EventType::Recovery, t_next, x, 0};
    } else if ((u -= r.recovery) < r.infection) {
      ev = infection_event(t_next);
      cat = 1;
    } else if ((u -= r.infection) < r.update) {
      ev = update_event(t_next);
      cat = 2;
    } else {
      ev = activation_event(t_next);
      cat = 3;
    }
    ev.category = cat;
    ++counts_[static_cast<int>(ev.type)];
    if (++events_since_rebuild_ >= 200000) {
      inf_deg_.rebuild();
      upd_.rebuild();
      events_since_rebuild_ = 0;
    }
    return ev;
  }

  /// Runs until extinction (when configured) or t_max.
  TrajectoryStats run_until(double t_max) {
    TrajectoryStats ts;
    ts.t_max = t_max;
    ts.N = pm_->N();
    ts.star_count = static_cast<std::int64_t>(opt_.stars.size());
    if (inf_list_.empty() && opt_.stop_at_extinction) {
      ts.extinction_time = clock_;
      if (opt_.record_series) record_point();
      ts.series = std::move(series_);
      return ts;
    }
    while (clock_ < t_max) {
      const bool had = !inf_list_.empty();
      step(t_max);
      if (had && inf_list_.empty() && !ts.extinction_time) {
        ts.extinction_time = clock_;
        if (opt_.stop_at_extinction) {
          if (opt_.record_series) record_point();
          break;
        }
      }
    }
    ts.series = std::move(series_);
    series_.clear();
    ts.event_counts = counts_;
    return ts;
  }

  /// Full recount of the active-edge count and rate structures; true when consistent.
  [[nodiscard]] bool audit() const {
    std::int64_t active = 0;
    double infdeg = 0.0;
    for (const auto& [i, j] : g_.edges())
      if (is_infected(i) || is_infected(j)) ++active;
    for (Vertex x : inf_list_) infdeg += static_cast<double>(g_.degree(x));
    if (active != active_edges_) return false;
    if (std::abs(infdeg - inf_deg_.total()) > 1e-6 * std::max(1.0, infdeg)) return false;
    double upd = 0.0;
    for (const auto& [i, j] : g_.edges()) upd += pm_->kappa(i, j);
    if (std::abs(upd - upd_.total()) > 1e-6 * std::max(1.0, upd)) return false;
    return g_.check_invariants();
  }

 private:
  [[nodiscard]] std::size_t owned_count(Vertex x) const {
    const auto& nb = g_.neighbours(x);
    if (both_owners_) return nb.size();
    auto it = std::upper_bound(nb.begin(), nb.end(), x);
    return owner_is_max_ ? static_cast<std::size_t>(it - nb.begin()) : static_cast<std::size_t>(nb.end() - it);
  }
  [[nodiscard]] Vertex owned_neighbour(Vertex x, std::size_t k) const {
    const auto& nb = g_.neighbours(x);
    if (both_owners_ || owner_is_max_) return nb[k];
    auto it = std::upper_bound(nb.begin(), nb.end(), x);
    return *(it + static_cast<std::ptrdiff_t>(k));
  }

  void refresh_update_weight(Vertex x) {
    upd_.set(static_cast<std::size_t>(x), pm_->kappa_vertex(x) * static_cast<double>(owned_count(x)));
  }
  void refresh_infection_weight(Vertex x) {
    inf_deg_.set(static_cast<std::size_t>(x), is_infected(x) ? static_cast<double>(g_.degree(x)) : 0.0);
  }

  void infect(Vertex x) {
    auto& f = infected_[static_cast<std::size_t>(x)];
    if (f) return;
    f = 1;
    pos_[static_cast<std::size_t>(x)] = static_cast<std::int64_t>(inf_list_.size());
    inf_list_.push_back(x);
    for (Vertex y : g_.neighbours(x))
      if (!is_infected(y)) ++active_edges_;
    if (is_star_[static_cast<std::size_t>(x)]) ++star_infected_;
    refresh_infection_weight(x);
  }

  void recover(Vertex x) {
    auto& f = infected_[static_cast<std::size_t>(x)];
    if (!f) return;
    f = 0;
    const auto p = static_cast<std::size_t>(pos_[static_cast<std::size_t>(x)]);
    const Vertex last = inf_list_.back();
    inf_list_[p] = last;
    pos_[static_cast<std::size_t>(last)] = static_cast<std::int64_t>(p);
    inf_list_.pop_back();
    pos_[static_cast<std::size_t>(x)] = -1;
    for (Vertex y : g_.neighbours(x))
      if (!is_infected(y)) --active_edges_;
    if (is_star_[static_cast<std::size_t>(x)]) --star_infected_;
    refresh_infection_weight(x);
  }

  void edge_changed(Vertex i, Vertex j, int delta) {
    if (is_infected(i) || is_infected(j)) active_edges_ += delta;
    refresh_infection_weight(i);
    refresh_infection_weight(j);
    refresh_update_weight(i);
    refresh_update_weight(j);
  }

  EventRecord infection_event(double t) {
    const auto x = static_cast<Vertex>(inf_deg_.find(rng_.uniform() * inf_deg_.total()));
    const auto& nb = g_.neighbours(x);
    if (!is_infected(x) || nb.empty()) return {EventType::Rejected, t, x, 0};
    const Vertex y = nb[rng_.below(nb.size())];
    if (is_infected(y)) {
      // Edges with two infected endpoints are proposed from both sides; keep half.
      if (rng_.uniform() < 0.5) return {EventType::NoOpInfection, t, x, y};
      return {EventType::Rejected, t, x, y};
    }
    infect(y);
    return {EventType::Infection, t, x, y};
  }

  EventRecord update_event(double t) {
    const auto x = static_cast<Vertex>(upd_.find(rng_.uniform() * upd_.total()));
    const std::size_t c = owned_count(x);
    if (c == 0) return {EventType::Rejected, t, x, 0};
    const Vertex y = owned_neighbour(x, rng_.below(c));
    if (!(rng_.uniform() < pm_->p(x, y))) {
      g_.remove_edge(x, y);
      edge_changed(x, y, -1);
    }
    return {EventType::EdgeUpdate, t, x, y};
  }

  EventRecord activation_event(double t) {
    auto pr = act_->propose(rng_);
    if (!pr || g_.has_edge(pr->first, pr->second)) return {EventType::Rejected, t, 0, 0};
    g_.add_edge(pr->first, pr->second);
    edge_changed(pr->first, pr->second, +1);
    return {EventType::Activation, t, pr->first, pr->second};
  }

  void record_point() {
    series_.push_back({clock_, static_cast<std::int64_t>(inf_list_.size()), star_infected_, g_.edge_count()});
  }

  /// Records the pre-event state at every sampling time up to t (inclusive).
  void advance_series(double t) {
    if (!opt_.record_series) return;
    while (next_sample_ <= t) {
      series_.push_back(
          {next_sample_, static_cast<std::int64_t>(inf_list_.size()), star_infected_, g_.edge_count()});
      ++sample_index_;
      next_sample_ = static_cast<double>(sample_index_) * opt_.sample_interval;
    }
  }

  const PairModel* pm_;
  const ActivationSampler* act_;
  GraphState g_;
  CounterStream rng_;
  EngineOptions opt_;
  std::vector<char> infected_;
  std::vector<std::int64_t> pos_;
  std::vector<char> is_star_;
  std::vector<Vertex> inf_list_;
  Fenwick inf_deg_;
  Fenwick upd_;
  bool both_owners_ = true;
  bool owner_is_max_ = false;
  std::int64_t active_edges_ = 0;
  std::int64_t star_infected_ = 0;
  double clock_ = 0.0;
  double next_sample_ = INFINITY;
  std::uint64_t sample_index_ = 0;
  std::vector<SeriesPoint> series_;
  std::array<std::uint64_t, kEventTypes> counts_{};
  std::uint64_t events_since_rebuild_ = 0;
};

/// Shared per-parameter structures for replica runs.
class Simulator {
 public:
  explicit Simulator(const ModelParams& m) : pm_(m), act_(pm_) {}
  Simulator(const Simulator&) = delete;
  Simulator& operator=(const Simulator&) = delete;

  [[nodiscard]] const PairModel& pair_model() const { return pm_; }
  [[nodiscard]] const ActivationSampler& activation() const { return act_; }

  /// Engine for one replica, starting from a stationary graph.
  [[nodiscard]] EpidemicEngine engine(std::span<const Vertex> init, std::uint64_t seed, std::uint64_t replica,
                                      EngineOptions opt = {}) const {
    return {pm_, act_, sample_stationary(pm_, seed, replica), init, seed, replica, std::move(opt)};
  }

  [[nodiscard]] TrajectoryStats run_until(std::span<const Vertex> init, double t_max, std::uint64_t seed,
                                          std::uint64_t replica, EngineOptions opt = {}) const {
    auto e = engine(init, seed, replica, std::move(opt));
    return e.run_until(t_max);
  }

 private:
  PairModel pm_;
  ActivationSampler act_;
};

struct Estimate {
  double mean = 0.0;
  double stderr_ = 0.0;
};

/// I_N(t): mean infected fraction at t from full occupancy.
inline Estimate density_at(const Simulator& sim, double t, std::size_t reps, std::uint64_t seed) {
  if (reps < 1) throw std::invalid_argument("density_at: reps must be >= 1");
  const Vertex n = sim.pair_model().N();
  const auto init = all_vertices(n);
  Accumulator acc;
  for (std::size_t r = 0; r < reps; ++r) {
    EngineOptions opt;
    opt.record_series = false;
    auto e = sim.engine(init, seed, r, opt);
    e.run_until(t);
    acc.add(static_cast<double>(e.infected_count()) / n);
  }
  return {acc.mean(), acc.stderr_mean()};
}

struct ExtinctionEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
  double censored_fraction = 0.0;
};

/// Censored mean of T_ext: censored runs contribute t_max, and their share is reported.
inline ExtinctionEstimate extinction_time_mc(const Simulator& sim, std::span<const Vertex> init, std::size_t reps,
                                             double t_max, std::uint64_t seed) {
  if (reps < 1) throw std::invalid_argument("extinction_time_mc: reps must be >= 1");
  Accumulator acc;
  std::size_t censored = 0;
  for (std::size_t r = 0; r < reps; ++r) {
    EngineOptions opt;
    opt.record_series = false;
    auto ts = sim.run_until(init, t_max, seed, r, opt);
    if (ts.censored()) ++censored;
    acc.add(ts.extinction_time.value_or(t_max));
  }
  return {acc.mean(), acc.stderr_mean(), static_cast<double>(censored) / static_cast<double>(reps)};
}

}  // namespace dynnet
