#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "dynnet/kernels.hpp"
#include "dynnet/rng.hpp"

namespace dynnet {

/// Per-pair presence probability and update rate for a record, stored densely over
/// unordered pairs. Lets callers swap in simplified probabilities on a subgraph.
class RecordModel {
 public:
  RecordModel(Vertex n, double lambda) : n_(n), lambda_(lambda), p_(tri_size(n), 0.0), kappa_(tri_size(n), 0.0) {
    if (n < 1) throw std::invalid_argument("RecordModel: N must be >= 1");
    if (!(lambda >= 0.0)) throw std::invalid_argument("RecordModel: lambda must be >= 0");
  }

  explicit RecordModel(const PairModel& pm) : RecordModel(pm.N(), pm.params().lambda) {
    for (Vertex i = 1; i < n_; ++i)
      for (Vertex j = i + 1; j <= n_; ++j) set(i, j, pm.p(i, j), pm.kappa(i, j));
  }

  void set(Vertex i, Vertex j, double p, double kappa) {
    if (!(p >= 0.0 && p <= 1.0) || !(kappa >= 0.0)) throw std::invalid_argument("RecordModel: bad pair law");
    const auto k = index(i, j);
    p_[k] = p;
    kappa_[k] = kappa;
  }

  [[nodiscard]] Vertex N() const { return n_; }
  [[nodiscard]] double lambda() const { return lambda_; }
  [[nodiscard]] double p(Vertex i, Vertex j) const { return p_[index(i, j)]; }
  [[nodiscard]] double kappa(Vertex i, Vertex j) const { return kappa_[index(i, j)]; }

  /// Dense index of the unordered pair {i,j}, i != j.
  [[nodiscard]] std::size_t index(Vertex i, Vertex j) const {
    if (i == j || i < 1 || j < 1 || i > n_ || j > n_) throw DomainError("RecordModel: invalid pair");
    const auto a = static_cast<std::size_t>(std::min(i, j)) - 1;
    const auto b = static_cast<std::size_t>(std::max(i, j)) - 1;
    return b * (b - 1) / 2 + a;
  }

 private:
  static std::size_t tri_size(Vertex n) {
    return n < 2 ? 0 : static_cast<std::size_t>(n) * static_cast<std::size_t>(n - 1) / 2;
  }
  Vertex n_;
  double lambda_;
  std::vector<double> p_, kappa_;
};

/// Explicit graphical construction on [0, t_end]: per-pair update times with the state
/// drawn at each, per-pair raw infection points, and per-vertex recovery times.
/// Intended for small N (all pairs are materialised).
class GraphicalRecord {
 public:
  struct PairTrack {
    bool initial = false;
    std::vector<double> update_times;  // increasing
    std::vector<char> update_states;   // state after each update
    std::vector<double> infection_points;
  };

  enum class EventKind : std::uint8_t { Recovery, Infection };
  struct Event {
    double time;
    EventKind kind;
    Vertex a, b;  // b unused for recoveries
  };

  GraphicalRecord(Vertex n, double t_end) : n_(n), t_end_(t_end), recoveries_(static_cast<std::size_t>(n) + 1) {
    if (n < 1) throw std::invalid_argument("GraphicalRecord: N must be >= 1");
    if (!(t_end >= 0.0)) throw std::invalid_argument("GraphicalRecord: t_end must be >= 0");
    pairs_.resize(n < 2 ? 0 : static_cast<std::size_t>(n) * static_cast<std::size_t>(n - 1) / 2);
  }

  [[nodiscard]] Vertex N() const { return n_; }
  [[nodiscard]] double t_end() const { return t_end_; }

  // Hand-building interface. Call finalize() after the last mutation.
  void set_initial(Vertex i, Vertex j, bool present) { track_mut(i, j).initial = present; }
  void add_update(Vertex i, Vertex j, double t, bool state) {
    check_time(t);
    auto& tr = track_mut(i, j);
    tr.update_times.push_back(t);
    tr.update_states.push_back(state ? 1 : 0);
  }
  void add_infection_point(Vertex i, Vertex j, double t) {
    check_time(t);
    track_mut(i, j).infection_points.push_back(t);
  }
  void add_recovery(Vertex x, double t) {
    check_time(t);
    check_vertex(x);
    recoveries_[static_cast<std::size_t>(x)].push_back(t);
  }

  /// Sorts all per-pair and per-vertex data and rebuilds the merged event list.
  void finalize() {
    for (auto& tr : pairs_) {
      std::vector<std::size_t> ord(tr.update_times.size());
      for (std::size_t k = 0; k < ord.size(); ++k) ord[k] = k;
      std::sort(ord.begin(), ord.end(), [&](auto a, auto b) { return tr.update_times[a] < tr.update_times[b]; });
      std::vector<double> t2;
      std::vector<char> s2;
      for (auto k : ord) {
        t2.push_back(tr.update_times[k]);
        s2.push_back(tr.update_states[k]);
      }
      tr.update_times = std::move(t2);
      tr.update_states = std::move(s2);
      std::sort(tr.infection_points.begin(), tr.infection_points.end());
    }
    for (auto& r : recoveries_) std::sort(r.begin(), r.end());
    events_.clear();
    for (Vertex x = 1; x <= n_; ++x)
      for (double t : recoveries_[static_cast<std::size_t>(x)]) events_.push_back({t, EventKind::Recovery, x, 0});
    for (Vertex j = 2; j <= n_; ++j)
      for (Vertex i = 1; i < j; ++i)
        for (double t : track(i, j).infection_points)
          if (present(i, j, t)) events_.push_back({t, EventKind::Infection, i, j});
    std::sort(events_.begin(), events_.end(), [](const Event& a, const Event& b) { return a.time < b.time; });
  }

  [[nodiscard]] const PairTrack& track(Vertex i, Vertex j) const { return pairs_[index(i, j)]; }
  [[nodiscard]] std::span<const double> recoveries(Vertex x) const {
    check_vertex(x);
    return recoveries_[static_cast<std::size_t>(x)];
  }

  /// Edge presence at time t (right-continuous: an update at t already applies).
  [[nodiscard]] bool present(Vertex i, Vertex j, double t) const {
    const auto& tr = track(i, j);
    const auto it = std::upper_bound(tr.update_times.begin(), tr.update_times.end(), t);
    if (it == tr.update_times.begin()) return tr.initial;
    return tr.update_states[static_cast<std::size_t>(it - tr.update_times.begin()) - 1] != 0;
  }

  /// True when the pair has an update time in [lo, hi).
  [[nodiscard]] bool updated_in(Vertex i, Vertex j, double lo, double hi) const {
    const auto& tr = track(i, j);
    const auto it = std::lower_bound(tr.update_times.begin(), tr.update_times.end(), lo);
    return it != tr.update_times.end() && *it < hi;
  }

  /// True when x has a recovery time in [lo, hi).
  [[nodiscard]] bool recovers_in(Vertex x, double lo, double hi) const {
    const auto r = recoveries(x);
    const auto it = std::lower_bound(r.begin(), r.end(), lo);
    return it != r.end() && *it < hi;
  }

  /// True when the raw infection clock of {i,j} has a point in [lo, hi].
  [[nodiscard]] bool infection_point_in(Vertex i, Vertex j, double lo, double hi) const {
    const auto& p = track(i, j).infection_points;
    const auto it = std::lower_bound(p.begin(), p.end(), lo);
    return it != p.end() && *it <= hi;
  }

  /// Recoveries and edge-valid infection points, ordered by time.
  [[nodiscard]] const std::vector<Event>& events() const { return events_; }

 private:
  void check_time(double t) const {
    if (!(t >= 0.0 && t <= t_end_)) throw std::invalid_argument("GraphicalRecord: time outside [0, t_end]");
  }
  void check_vertex(Vertex x) const {
    if (x < 1 || x > n_) throw DomainError("GraphicalRecord: vertex out of range");
  }
  [[nodiscard]] std::size_t index(Vertex i, Vertex j) const {
    if (i == j || i < 1 || j < 1 || i > n_ || j > n_) throw DomainError("GraphicalRecord: invalid pair");
    const auto a = static_cast<std::size_t>(std::min(i, j)) - 1;
    const auto b = static_cast<std::size_t>(std::max(i, j)) - 1;
    return b * (b - 1) / 2 + a;
  }
  PairTrack& track_mut(Vertex i, Vertex j) { return pairs_[index(i, j)]; }

  Vertex n_;
  double t_end_;
  std::vector<PairTrack> pairs_;
  std::vector<std::vector<double>> recoveries_;
  std::vector<Event> events_;
};

/// Materialises the keyed graphical construction on [0, t_end]. The initial graph is the
/// stationary law; with a model built from a PairModel the record agrees with the lazy
/// and eager edge oracles under the same seed.
inline GraphicalRecord generate_record(const RecordModel& model, double t_end, std::uint64_t seed) {
  const KeyedRng rng(seed);
  const Vertex n = model.N();
  GraphicalRecord rec(n, t_end);
  for (Vertex i = 1; i < n; ++i)
    for (Vertex j = i + 1; j <= n; ++j) {
      const auto id = pair_id(i, j);
      const double p = model.p(i, j);
      if (p == 0.0) continue;  // never present: no update can switch it on, no point can fire
      rec.set_initial(i, j, rng.uniform(Domain::InitialCoin, id, 0) < p);
      for (const auto& pt : update_clock(rng, id, model.kappa(i, j)).points_in(0.0, t_end))
        rec.add_update(i, j, pt.time, pt.mark < p);
      for (const auto& pt : infection_clock(rng, id, model.lambda()).points_in(0.0, t_end))
        rec.add_infection_point(i, j, pt.time);
    }
  for (Vertex x = 1; x <= n; ++x)
    for (const auto& pt : recovery_clock(rng, static_cast<std::uint64_t>(x)).points_in(0.0, t_end))
      rec.add_recovery(x, pt.time);
  rec.finalize();
  return rec;
}

/// Predicate deciding whether an edge-valid infection point (t, x, y) may transmit.
using InfectionFilter = std::function<bool(double, Vertex, Vertex)>;
/// Observer of infection-state changes (t, vertex, now_infected).
using StateObserver = std::function<void(double, Vertex, bool)>;

struct ContactRun {
  std::vector<char> infected;            // indexed 1..N at the final time
  std::optional<double> extinction_time;  // first time the infected set became empty
};

/// Contact process on the record from init over [0, t0].
inline ContactRun run_contact(const GraphicalRecord& rec, std::span<const Vertex> init, double t0,
                              const InfectionFilter& valid = {}, const StateObserver& observe = {}) {
  if (t0 > rec.t_end()) throw std::invalid_argument("run_contact: record does not cover the horizon");
  ContactRun out{std::vector<char>(static_cast<std::size_t>(rec.N()) + 1, 0), std::nullopt};
  std::int64_t count = 0;
  for (Vertex x : init)
    if (!out.infected[static_cast<std::size_t>(x)]) {
      out.infected[static_cast<std::size_t>(x)] = 1;
      ++count;
    }
  if (count == 0) out.extinction_time = 0.0;
  for (const auto& ev : rec.events()) {
    if (ev.time > t0) break;
    auto& a = out.infected[static_cast<std::size_t>(ev.a)];
    if (ev.kind == GraphicalRecord::EventKind::Recovery) {
      if (a) {
        a = 0;
        if (observe) observe(ev.time, ev.a, false);
        if (--count == 0 && !out.extinction_time) out.extinction_time = ev.time;
      }
      continue;
    }
    auto& b = out.infected[static_cast<std::size_t>(ev.b)];
    if (a == b) continue;
    if (valid && !valid(ev.time, ev.a, ev.b)) continue;
    const Vertex target = a ? ev.b : ev.a;
    a = b = 1;
    ++count;
    if (observe) observe(ev.time, target, true);
  }
  return out;
}

/// Dual contact process: runs the record backwards from t0, so dual time s reads the
/// forward construction at t0 - s. Extinction time is reported in dual time.
inline ContactRun dual_run(const GraphicalRecord& rec, std::span<const Vertex> init, double t0) {
  if (t0 > rec.t_end()) throw std::invalid_argument("dual_run: record does not cover the horizon");
  ContactRun out{std::vector<char>(static_cast<std::size_t>(rec.N()) + 1, 0), std::nullopt};
  std::int64_t count = 0;
  for (Vertex x : init)
    if (!out.infected[static_cast<std::size_t>(x)]) {
      out.infected[static_cast<std::size_t>(x)] = 1;
      ++count;
    }
  if (count == 0) out.extinction_time = 0.0;
  const auto& evs = rec.events();
  auto end = std::upper_bound(evs.begin(), evs.end(), t0,
                              [](double t, const GraphicalRecord::Event& e) { return t < e.time; });
  for (auto it = std::make_reverse_iterator(end); it != evs.rend(); ++it) {
    auto& a = out.infected[static_cast<std::size_t>(it->a)];
    if (it->kind == GraphicalRecord::EventKind::Recovery) {
      if (a) {
        a = 0;
        if (--count == 0 && !out.extinction_time) out.extinction_time = t0 - it->time;
      }
      continue;
    }
    auto& b = out.infected[static_cast<std::size_t>(it->b)];
    if (a != b) {
      a = b = 1;
      ++count;
    }
  }
  return out;
}

}  // namespace dynnet
