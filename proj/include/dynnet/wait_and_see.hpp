#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dynnet/kernels.hpp"
#include "dynnet/rng.hpp"
#include "dynnet/sampling.hpp"
#include "dynnet/stats.hpp"
#include "dynnet/theory.hpp"

namespace dynnet {

/// Frozen configuration of the wait-and-see process: infected flags and revealed pairs.
/// Revealed pairs are stored with i < j and never repeat.
struct WsState {
  Vertex N = 0;
  double clock = 0.0;
  std::vector<char> infected;  // index 1..N
  std::vector<std::pair<Vertex, Vertex>> revealed;

  static WsState empty(Vertex n) {
    WsState s;
    s.N = n;
    s.infected.assign(static_cast<std::size_t>(n) + 1, 0);
    return s;
  }

  [[nodiscard]] bool is_infected(Vertex x) const { return infected[static_cast<std::size_t>(x)] != 0; }

  [[nodiscard]] std::int64_t infected_count() const {
    return std::count(infected.begin() + 1, infected.end(), char{1});
  }

  void validate() const {
    if (N < 1 || infected.size() != static_cast<std::size_t>(N) + 1) throw DomainError("WsState: bad vertex table");
    std::unordered_set<std::uint64_t> seen;
    for (const auto& [i, j] : revealed) {
      if (!(i >= 1 && i < j && j <= N)) throw DomainError("WsState: revealed pair out of range or unordered");
      if (!seen.insert(pair_id(i, j)).second) throw DomainError("WsState: duplicate revealed pair");
    }
  }
};

enum class WsEventKind { Recovery, Update, Transmission, Reveal, Thinned, Quiescent };

struct WsEvent {
  double time = 0.0;
  WsEventKind kind = WsEventKind::Quiescent;
  Vertex x = 0, y = 0;
};

/// Per-parameter data shared by all replicas: the pair model and, per vertex x, the
/// dyadic-block envelope mass of the row p_{x,.}. Rows are non-increasing in the partner
/// index, so the value at the start of each block [b, 2b) dominates the block.
class WsModel {
 public:
  explicit WsModel(const ModelParams& m) : pm_(m) {
    const Vertex n = pm_.N();
    env_.assign(static_cast<std::size_t>(n) + 1, 0.0);
    for (Vertex x = 1; x <= n; ++x) {
      double s = 0.0;
      for (Vertex b = 1; b <= n;) {
        const Vertex e = block_end(b);
        s += block_env(x, b, e) * static_cast<double>(e - b + 1);
        b = e + 1;
      }
      env_[static_cast<std::size_t>(x)] = s;
    }
  }
  WsModel(const WsModel&) = delete;
  WsModel& operator=(const WsModel&) = delete;

  [[nodiscard]] const PairModel& pair_model() const { return pm_; }
  [[nodiscard]] double lambda() const { return pm_.params().lambda; }
  [[nodiscard]] Vertex N() const { return pm_.N(); }
  [[nodiscard]] double row_envelope(Vertex x) const { return env_[static_cast<std::size_t>(x)]; }

  [[nodiscard]] Vertex block_end(Vertex b) const {
    return static_cast<Vertex>(std::min<std::int64_t>(pm_.N(), 2LL * b - 1));
  }
  [[nodiscard]] double block_env(Vertex x, Vertex b, Vertex e) const {
    const Vertex first = (b == x) ? b + 1 : b;
    return first > e ? 0.0 : pm_.p(x, first);
  }

  /// Partner y != x proposed from the row envelope of x, thinned to p_{x,y}; nullopt on rejection.
  [[nodiscard]] std::optional<Vertex> propose_partner(Vertex x, CounterStream& rng) const {
    double u = rng.uniform() * row_envelope(x);
    for (Vertex b = 1; b <= pm_.N();) {
      const Vertex e = block_end(b);
      const double env = block_env(x, b, e);
      const double mass = env * static_cast<double>(e - b + 1);
      if (u < mass || e == pm_.N()) {
        const Vertex y = b + static_cast<Vertex>(rng.below(static_cast<std::uint64_t>(e - b + 1)));
        if (y == x || env <= 0.0) return std::nullopt;
        if (rng.uniform() * env < pm_.p(x, y)) return y;
        return std::nullopt;
      }
      u -= mass;
      b = e + 1;
    }
    return std::nullopt;
  }

 private:
  PairModel pm_;
  std::vector<double> env_;
};

/// Gillespie simulation of the wait-and-see process over four categories: recovery (rate 1
/// per infected vertex), update (rate kappa per revealed pair, unreveals it), transmission
/// (rate lambda per revealed infected-healthy pair) and reveal (rate lambda p per unrevealed
/// pair with an infected endpoint, infecting both endpoints). Transmission and reveal run on
/// static envelopes; a rejected candidate is a Thinned event that only advances the clock.
/// A state with no infected vertex is absorbing.
class WaitAndSee {
 public:
  WaitAndSee(const WsModel& model, const WsState& init, std::uint64_t seed, std::uint64_t replica)
      : model_(&model), rng_(seed, Domain::WaitAndSee, replica) {
    init.validate();
    if (init.N != model.N()) throw DomainError("WaitAndSee: state size does not match the model");
    const auto n = static_cast<std::size_t>(model.N());
    clock_ = init.clock;
    infected_.assign(n + 1, 0);
    pos_.assign(n + 1, -1);
    adj_.assign(n + 1, {});
    reveal_w_ = Fenwick(n);
    update_w_ = Fenwick(std::max<std::size_t>(16, 2 * init.revealed.size()));
    for (Vertex x = 1; x <= model.N(); ++x)
      if (init.is_infected(x)) infect(x);
    for (const auto& [i, j] : init.revealed) reveal(i, j);
  }

  [[nodiscard]] double clock() const { return clock_; }
  [[nodiscard]] std::int64_t infected_count() const { return static_cast<std::int64_t>(inf_list_.size()); }
  [[nodiscard]] std::size_t revealed_count() const { return edges_.size(); }
  [[nodiscard]] bool is_infected(Vertex x) const { return infected_[static_cast<std::size_t>(x)] != 0; }
  [[nodiscard]] bool is_revealed(Vertex i, Vertex j) const { return slot_.contains(pair_id(i, j)); }

  [[nodiscard]] WsState state() const {
    WsState s = WsState::empty(model_->N());
    s.clock = clock_;
    for (Vertex x : inf_list_) s.infected[static_cast<std::size_t>(x)] = 1;
    s.revealed = edges_;
    std::sort(s.revealed.begin(), s.revealed.end());
    return s;
  }

  /// One candidate event before t_limit. If none occurs, the clock stops at t_limit and a
  /// Quiescent event is returned; extinction also yields Quiescent without moving the clock.
  WsEvent step(double t_limit = INFINITY) {
    if (inf_list_.empty()) return {clock_, WsEventKind::Quiescent};
    const double lam = model_->lambda();
    const double r_rec = static_cast<double>(inf_list_.size());
    const double r_upd = std::max(0.0, update_w_.total());
    const double r_tr = lam * static_cast<double>(edges_.size());
    const double r_rev = lam * std::max(0.0, reveal_w_.total());
    const double total = r_rec + r_upd + r_tr + r_rev;
    const double t = clock_ + rng_.exponential(total);
    if (t > t_limit) {
      clock_ = t_limit;
      return {clock_, WsEventKind::Quiescent};
    }
    clock_ = t;
    double u = rng_.uniform() * total;
    if (u < r_rec) {
      const Vertex x = inf_list_[static_cast<std::size_t>(rng_.below(inf_list_.size()))];
      recover(x);
      return {t, WsEventKind::Recovery, x, 0};
    }
    u -= r_rec;
    if (u < r_upd && !edges_.empty()) {
      const std::size_t k = update_w_.find(rng_.uniform() * update_w_.total()) - 1;
      const auto [i, j] = edges_[std::min(k, edges_.size() - 1)];
      unreveal(i, j);
      return {t, WsEventKind::Update, i, j};
    }
    u -= r_upd;
    if (u < r_tr && !edges_.empty()) {
      const auto [i, j] = edges_[static_cast<std::size_t>(rng_.below(edges_.size()))];
      if (is_infected(i) == is_infected(j)) return {t, WsEventKind::Thinned};
      const Vertex target = is_infected(i) ? j : i;
      infect(target);
      return {t, WsEventKind::Transmission, target == j ? i : j, target};
    }
    if (reveal_w_.total() <= 0.0) return {t, WsEventKind::Thinned};
    const auto x = static_cast<Vertex>(reveal_w_.find(rng_.uniform() * reveal_w_.total()));
    const auto y = model_->propose_partner(x, rng_);
    // A pair with two infected endpoints is proposed from both rows; only the larger
    // index keeps it, so every eligible pair carries rate lambda p exactly once.
    if (!y || is_revealed(x, *y) || (is_infected(*y) && *y < x)) return {t, WsEventKind::Thinned};
    reveal(std::min(x, *y), std::max(x, *y));
    if (!is_infected(*y)) infect(*y);
    return {t, WsEventKind::Reveal, x, *y};
  }

  /// Runs to t_max or extinction; returns the extinction time when it happens first.
  std::optional<double> run_until(double t_max) {
    while (!inf_list_.empty()) {
      const WsEvent ev = step(t_max);
      if (ev.kind == WsEventKind::Quiescent) break;
    }
    if (inf_list_.empty()) return clock_;
    return std::nullopt;
  }

 private:
  void infect(Vertex x) {
    const auto k = static_cast<std::size_t>(x);
    infected_[k] = 1;
    pos_[k] = static_cast<std::int64_t>(inf_list_.size());
    inf_list_.push_back(x);
    reveal_w_.set(k, model_->row_envelope(x));
    touch(reveal_w_);
  }

  void recover(Vertex x) {
    const auto k = static_cast<std::size_t>(x);
    infected_[k] = 0;
    const auto p = static_cast<std::size_t>(pos_[k]);
    const Vertex last = inf_list_.back();
    inf_list_[p] = last;
    pos_[static_cast<std::size_t>(last)] = static_cast<std::int64_t>(p);
    inf_list_.pop_back();
    pos_[k] = -1;
    reveal_w_.set(k, 0.0);
    if (inf_list_.empty()) reveal_w_.rebuild();
    touch(reveal_w_);
  }

  void reveal(Vertex i, Vertex j) {
    if (edges_.size() + 1 > update_w_.size()) {
      Fenwick bigger(2 * update_w_.size());
      for (std::size_t k = 1; k <= edges_.size(); ++k) bigger.set(k, update_w_.weight(k));
      update_w_ = std::move(bigger);
    }
    edges_.emplace_back(i, j);
    slot_[pair_id(i, j)] = edges_.size();
    update_w_.set(edges_.size(), model_->pair_model().kappa(i, j));
    adj_[static_cast<std::size_t>(i)].push_back(j);
    adj_[static_cast<std::size_t>(j)].push_back(i);
    touch(update_w_);
  }

  void unreveal(Vertex i, Vertex j) {
    const auto it = slot_.find(pair_id(i, j));
    const std::size_t s = it->second, last = edges_.size();
    slot_.erase(it);
    if (s != last) {
      edges_[s - 1] = edges_[last - 1];
      slot_[pair_id(edges_[s - 1].first, edges_[s - 1].second)] = s;
      update_w_.set(s, update_w_.weight(last));
    }
    update_w_.set(last, 0.0);
    edges_.pop_back();
    if (edges_.empty()) update_w_.rebuild();
    erase_one(adj_[static_cast<std::size_t>(i)], j);
    erase_one(adj_[static_cast<std::size_t>(j)], i);
    touch(update_w_);
  }

  static void erase_one(std::vector<Vertex>& v, Vertex x) {
    auto it = std::find(v.begin(), v.end(), x);
    *it = v.back();
    v.pop_back();
  }

  // Periodic rebuild bounds the drift of incrementally maintained Fenwick sums.
  void touch(Fenwick& f) {
    if (++ops_ % 65536 == 0) f.rebuild();
  }

  const WsModel* model_;
  CounterStream rng_;
  double clock_ = 0.0;
  std::vector<char> infected_;
  std::vector<std::int64_t> pos_;
  std::vector<Vertex> inf_list_;
  std::vector<std::vector<Vertex>> adj_;
  std::vector<std::pair<Vertex, Vertex>> edges_;
  std::unordered_map<std::uint64_t, std::size_t> slot_;  // pair -> 1-based slot in edges_
  Fenwick reveal_w_;
  Fenwick update_w_;
  std::uint64_t ops_ = 0;
};

// ---------------------------------------------------------------------------------------
// Score

struct ScoreComponents {
  std::vector<double> Q, R, nu;  // index 1..N
  double M = 0.0;
  double Z = 0.0;
};

/// The score needs kappa_{x,y} >= 2 varkappa on every pair, which holds for the sum rule
/// with eta >= 0; then R(x) >= 2 varkappa Q(x) pathwise.
inline void require_score_domain(const ModelParams& m) {
  if (m.eta < 0.0) throw DomainError("score: eta must be non-negative");
  if (m.update_rule != UpdateRule::Sum) throw DomainError("score: the drift bound needs the sum update rule");
}

inline ScoreComponents score(const WsState& st, const PairModel& pm, const theory::ScoringFunction& s) {
  const auto& m = pm.params();
  require_score_domain(m);
  if (st.N != pm.N()) throw DomainError("score: state size does not match the model");
  const auto n = static_cast<std::size_t>(st.N);
  const double lam = m.lambda;
  ScoreComponents sc;
  sc.Q.assign(n + 1, 0.0);
  sc.R.assign(n + 1, 0.0);
  sc.nu.assign(n + 1, 0.0);
  for (const auto& [i, j] : st.revealed) {
    const double k = pm.kappa(i, j);
    for (Vertex v : {i, j}) {
      sc.Q[static_cast<std::size_t>(v)] += lam / (k * k);
      sc.R[static_cast<std::size_t>(v)] += lam / k;
    }
  }
  const double dn = static_cast<double>(st.N);
  for (std::size_t x = 1; x <= n; ++x) {
    sc.nu[x] = (st.infected[x] ? 1.0 : sc.R[x]) + 2.0 * sc.Q[x];
    sc.M += s(static_cast<double>(x) / dn) * sc.nu[x];
  }
  sc.Z = std::log1p(sc.M) + theory::supermartingale_rate(m.varkappa) * st.clock / 2.0;
  return sc;
}

/// Exact generator of M and Z at a frozen state: the sum over all enabled events of
/// rate times jump, plus rho/2 for the time term of Z.
struct ScoreDrift {
  double dM = 0.0;
  double dZ = 0.0;
};

inline ScoreDrift score_generator(const WsState& st, const PairModel& pm, const theory::ScoringFunction& s) {
  const ScoreComponents sc = score(st, pm, s);
  const auto& m = pm.params();
  const double lam = m.lambda;
  const double dn = static_cast<double>(st.N);
  auto sx = [&](Vertex x) { return s(static_cast<double>(x) / dn); };
  const double base = std::log1p(sc.M);
  ScoreDrift d;
  auto add = [&](double rate, double jump) {
    if (rate <= 0.0) return;
    d.dM += rate * jump;
    d.dZ += rate * (std::log1p(sc.M + jump) - base);
  };
  if (st.infected_count() == 0) return d;
  const auto R = [&](Vertex x) { return sc.R[static_cast<std::size_t>(x)]; };
  for (Vertex x = 1; x <= st.N; ++x)
    if (st.is_infected(x)) add(1.0, sx(x) * (R(x) - 1.0));
  std::unordered_set<std::uint64_t> rev;
  for (const auto& [i, j] : st.revealed) {
    rev.insert(pair_id(i, j));
    const double k = pm.kappa(i, j);
    double jump = 0.0;
    for (Vertex v : {i, j}) jump += sx(v) * (-2.0 * lam / (k * k) - (st.is_infected(v) ? 0.0 : lam / k));
    add(k, jump);
    if (st.is_infected(i) != st.is_infected(j)) {
      const Vertex h = st.is_infected(i) ? j : i;
      add(lam, sx(h) * (1.0 - R(h)));
    }
  }
  for (Vertex x = 1; x <= st.N; ++x) {
    if (!st.is_infected(x)) continue;
    for (Vertex y = 1; y <= st.N; ++y) {
      if (y == x || (st.is_infected(y) && y < x) || rev.contains(pair_id(x, y))) continue;
      const double k = pm.kappa(x, y);
      const double q = 2.0 * lam / (k * k);
      double jump = sx(x) * q;
      jump += st.is_infected(y) ? sx(y) * q : sx(y) * (1.0 - R(y) + q);
      add(lam * pm.p(x, y), jump);
    }
  }
  d.dZ += theory::supermartingale_rate(m.varkappa) / 2.0;
  return d;
}

/// Lowest vertex index the score may see infected before the hitting time: ceil(aN).
inline Vertex hit_threshold(const theory::ScoringFunction& s, Vertex n) {
  return std::max<Vertex>(1, static_cast<Vertex>(std::ceil(s.floor() * static_cast<double>(n) - 1e-12)));
}

struct DriftEstimate {
  double delta = 0.0;
  double dM = 0.0, dM_se = 0.0;  // mean increment of M over delta
  double dZ = 0.0, dZ_se = 0.0;  // mean increment of Z over delta
};

/// Monte Carlo increments of M and Z over [t, t+delta] from a frozen state, each replica
/// restarting all clocks. The process is stopped at extinction and when a vertex below
/// ceil(aN) gets infected, so the estimate targets the stopped score.
inline DriftEstimate drift_estimate(const WsModel& model, const WsState& st, const theory::ScoringFunction& s, double delta,
                                    std::size_t reps, std::uint64_t seed) {
  if (!(delta > 0.0)) throw DomainError("drift_estimate: delta must be positive");
  if (reps < 2) throw DomainError("drift_estimate: need at least two replicas");
  const PairModel& pm = model.pair_model();
  const Vertex lo = hit_threshold(s, st.N);
  for (Vertex x = 1; x < lo; ++x)
    if (st.is_infected(x)) throw DomainError("drift_estimate: state is past the hitting time");
  const ScoreComponents s0 = score(st, pm, s);
  Accumulator am, az;
  for (std::size_t r = 0; r < reps; ++r) {
    WaitAndSee ws(model, st, seed, r);
    const double t_end = st.clock + delta;
    while (true) {
      const WsEvent ev = ws.step(t_end);
      if (ev.kind == WsEventKind::Quiescent) break;
      const bool hit = (ev.kind == WsEventKind::Reveal || ev.kind == WsEventKind::Transmission) &&
                       (ev.y < lo || ev.x < lo);
      if (hit) break;
    }
    const ScoreComponents s1 = score(ws.state(), pm, s);
    am.add(s1.M - s0.M);
    az.add(s1.Z - s0.Z);
  }
  return {delta, am.mean(), am.stderr_mean(), az.mean(), az.stderr_mean()};
}

/// Extinction time of the wait-and-see process from the given infected set with nothing
/// revealed; nullopt when censored at t_max.
inline std::optional<double> ws_extinction_time(const WsModel& model, std::span<const Vertex> init, double t_max,
                                                std::uint64_t seed, std::uint64_t replica) {
  WsState st = WsState::empty(model.N());
  for (Vertex x : init) st.infected[static_cast<std::size_t>(x)] = 1;
  WaitAndSee ws(model, st, seed, replica);
  return ws.run_until(t_max);
}

// ---------------------------------------------------------------------------------------
// Coupling with the true process

struct CouplingReport {
  std::uint64_t events = 0;
  std::uint64_t infection_violations = 0;  // X infected but Y healthy
  std::uint64_t edge_violations = 0;       // revealed but absent in the graph
  [[nodiscard]] bool clean() const { return infection_violations == 0 && edge_violations == 0; }
};

/// Joint construction of the dynamic graph G, the contact process X on G and the
/// wait-and-see process Y, for small N.
///
/// For an unrevealed pair, pi is the conditional probability, given the history of Y, that
/// the pair is present in G. A present unrevealed pair with a Y-infected endpoint is revealed
/// at rate lambda p / pi, so Y sees reveals at rate lambda p. That rate splits into the shared
/// lambda infection clock, which also drives X, and an extra clock at rate lambda (p/pi - 1).
/// Filtering gives pi' = kappa (p - pi) - lambda p (1 - pi) while exposed and
/// pi' = kappa (p - pi) otherwise, so pi stays in [pi_inf, p] with
/// pi_inf = p (kappa - lambda) / (kappa - lambda p). This needs kappa > lambda on every pair
/// with 0 < p < 1. Recoveries and updates are shared between the processes.
class CoupledRun {
 public:
  CoupledRun(const ModelParams& m, std::span<const Vertex> init, std::uint64_t seed, std::uint64_t replica)
      : pm_(m), rng_(seed, Domain::Coupling, replica) {
    const Vertex n = pm_.N();
    if (n < 2 || n > 64) throw DomainError("CoupledRun: N must lie in [2, 64]");
    lam_ = m.lambda;
    x_.assign(static_cast<std::size_t>(n) + 1, 0);
    y_.assign(static_cast<std::size_t>(n) + 1, 0);
    std::vector<double> w(static_cast<std::size_t>(n), 1.0);
    for (Vertex i = 1; i < n; ++i)
      for (Vertex j = i + 1; j <= n; ++j) {
        Pair pr;
        pr.i = i;
        pr.j = j;
        pr.p = pm_.p(i, j);
        pr.kappa = pm_.kappa(i, j);
        pr.pi = pr.p;
        if (pr.p > 0.0 && pr.p < 1.0) {
          if (!(pr.kappa > lam_)) throw DomainError("CoupledRun: exact coupling needs kappa > lambda on every pair");
          pr.pi_inf = pr.p * (pr.kappa - lam_) / (pr.kappa - lam_ * pr.p);
          pr.extra_bound = lam_ * (pr.p / pr.pi_inf - 1.0);
        } else {
          pr.pi_inf = pr.p;
        }
        pr.present = rng_.bernoulli(pr.p);
        pairs_.push_back(pr);
      }
    for (const auto& pr : pairs_) w.push_back(pr.kappa);
    for (const auto& pr : pairs_) w.push_back(pr.p > 0.0 ? lam_ : 0.0);
    for (const auto& pr : pairs_) w.push_back(pr.extra_bound);
    slots_ = AliasTable(w);
    total_ = slots_.total();
    for (Vertex v : init) {
      if (v < 1 || v > n) throw DomainError("CoupledRun: initial vertex out of range");
      x_[static_cast<std::size_t>(v)] = y_[static_cast<std::size_t>(v)] = 1;
    }
  }

  [[nodiscard]] double clock() const { return clock_; }
  [[nodiscard]] const CouplingReport& report() const { return report_; }
  [[nodiscard]] std::int64_t x_count() const { return std::count(x_.begin(), x_.end(), char{1}); }
  [[nodiscard]] std::int64_t y_count() const { return std::count(y_.begin(), y_.end(), char{1}); }
  [[nodiscard]] std::int64_t revealed_count() const {
    return std::count_if(pairs_.begin(), pairs_.end(), [](const Pair& p) { return p.revealed; });
  }
  [[nodiscard]] std::int64_t edge_count() const {
    return std::count_if(pairs_.begin(), pairs_.end(), [](const Pair& p) { return p.present; });
  }

  /// Advances to t_max or until Y dies out (X is then extinct as well).
  void run_until(double t_max) {
    const Vertex n = pm_.N();
    const auto np = pairs_.size();
    while (y_count() > 0) {
      const double t = clock_ + rng_.exponential(total_);
      if (t > t_max) {
        clock_ = t_max;
        return;
      }
      clock_ = t;
      const std::size_t k = slots_.sample(rng_);
      if (k < static_cast<std::size_t>(n)) {
        recover(static_cast<Vertex>(k + 1));
      } else if (k < n + np) {
        Pair& pr = pairs_[k - n];
        pr.present = rng_.bernoulli(pr.p);
        if (pr.revealed) {
          pr.revealed = false;
          pr.pi = pr.p;
          pr.t0 = clock_;
        }
      } else if (k < n + 2 * np) {
        infection_clock(pairs_[k - n - np]);
      } else {
        extra_clock(pairs_[k - n - 2 * np]);
      }
      ++report_.events;
      audit();
    }
  }

 private:
  struct Pair {
    Vertex i = 0, j = 0;
    double p = 0.0, kappa = 0.0;
    double pi = 0.0, t0 = 0.0, pi_inf = 0.0, extra_bound = 0.0;
    bool present = false, revealed = false;
  };

  [[nodiscard]] bool exposed(const Pair& pr) const {
    return y_[static_cast<std::size_t>(pr.i)] || y_[static_cast<std::size_t>(pr.j)];
  }

  [[nodiscard]] double pi_now(const Pair& pr) const {
    const double dt = clock_ - pr.t0;
    if (exposed(pr)) return pr.pi_inf + (pr.pi - pr.pi_inf) * std::exp(-(pr.kappa - lam_ * pr.p) * dt);
    return pr.p + (pr.pi - pr.p) * std::exp(-pr.kappa * dt);
  }

  // Fixes pi at the current time before the exposure of the pair changes.
  void settle_incident(Vertex v) {
    for (auto& pr : pairs_)
      if (!pr.revealed && (pr.i == v || pr.j == v)) {
        pr.pi = pi_now(pr);
        pr.t0 = clock_;
      }
  }

  void set_y(Vertex v, bool inf) {
    auto& f = y_[static_cast<std::size_t>(v)];
    if (static_cast<bool>(f) == inf) return;
    settle_incident(v);
    f = inf ? 1 : 0;
  }

  void recover(Vertex v) {
    x_[static_cast<std::size_t>(v)] = 0;
    set_y(v, false);
  }

  void x_transmit(const Pair& pr) {
    auto& a = x_[static_cast<std::size_t>(pr.i)];
    auto& b = x_[static_cast<std::size_t>(pr.j)];
    if (a != b) a = b = 1;
  }

  void reveal(Pair& pr) {
    pr.revealed = true;
    set_y(pr.i, true);
    set_y(pr.j, true);
  }

  void infection_clock(Pair& pr) {
    if (!pr.present) return;
    if (pr.revealed) {
      if (y_[static_cast<std::size_t>(pr.i)] != y_[static_cast<std::size_t>(pr.j)]) {
        set_y(pr.i, true);
        set_y(pr.j, true);
      }
      x_transmit(pr);
    } else if (exposed(pr)) {
      reveal(pr);
      x_transmit(pr);
    }
  }

  void extra_clock(Pair& pr) {
    if (!pr.present || pr.revealed || !exposed(pr)) return;
    const double rate = lam_ * (pr.p / pi_now(pr) - 1.0);
    if (rng_.uniform() * pr.extra_bound < rate) reveal(pr);
  }

  void audit() {
    for (std::size_t v = 1; v < x_.size(); ++v)
      if (x_[v] && !y_[v]) ++report_.infection_violations;
    for (const auto& pr : pairs_)
      if (pr.revealed && !pr.present) ++report_.edge_violations;
  }

  PairModel pm_;
  CounterStream rng_;
  double lam_ = 0.0;
  double clock_ = 0.0;
  double total_ = 0.0;
  std::vector<char> x_, y_;
  std::vector<Pair> pairs_;
  AliasTable slots_;
  CouplingReport report_;
};

}  // namespace dynnet
