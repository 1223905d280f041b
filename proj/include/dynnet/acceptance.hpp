#pragma once

#include <boost/rational.hpp>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "dynnet/ctmc.hpp"
#include "dynnet/diagnostics.hpp"
#include "dynnet/duality.hpp"
#include "dynnet/engine.hpp"
#include "dynnet/graph.hpp"
#include "dynnet/theory.hpp"
#include "dynnet/wait_and_see.hpp"

namespace dynnet::acceptance {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

// Pinned tolerances and budgets.
inline constexpr double kSigmas = 3.0;
inline constexpr double kPinnedRelTol = 0.02;
inline constexpr double kContinuityTol = 1e-12;
inline constexpr double kQuadratureRelTol = 1e-6;
inline constexpr double kSlopeTol = 0.05;
inline constexpr double kMinR2 = 0.9;
inline constexpr double kDriftSlack = 0.1;

// Slow-regime runs use this size: N = 10^4 to t = 10^3 costs hours per replica on one core.
inline constexpr std::int64_t kSlowRegimeN = 50;

namespace detail {

inline ModelParams model(std::int64_t n, KernelKind kind, double beta, double gamma, double lambda, double eta = 0.0,
                         double varkappa = 1.0) {
  ModelParams m;
  m.N = n;
  m.kernel = {kind, beta, gamma};
  m.lambda = lambda;
  m.eta = eta;
  m.varkappa = varkappa;
  return m;
}

inline std::string fmt(double x, int prec = 6) {
  std::ostringstream os;
  os.precision(prec);
  os << x;
  return os.str();
}

inline EngineOptions quiet() {
  EngineOptions o;
  o.record_series = false;
  return o;
}

}  // namespace detail

/// Mean stationary edge count after a graph-only run.
inline CriterionResult stationarity(std::uint64_t seed) {
  using namespace detail;
  auto m = model(200, KernelKind::Factor, 1.0, 0.5, 0.0);
  const Simulator sim(m);
  const double exact = expected_edge_count(m).value;
  Accumulator acc;
  EngineOptions opt = quiet();
  opt.stop_at_extinction = false;
  for (std::uint64_t r = 0; r < 1000; ++r) {
    auto e = sim.engine({}, seed, r, opt);
    e.run_until(10.0);
    acc.add(static_cast<double>(e.graph().edge_count()));
  }
  const double z = (acc.mean() - exact) / acc.stderr_mean();
  return {1, "stationarity", std::abs(z) <= kSigmas,
          "mean_edges=" + fmt(acc.mean()) + " exact=" + fmt(exact) + " z=" + fmt(z, 3)};
}

/// Extinction probability by t = 1 against the joint-chain oracle.
inline CriterionResult ctmc_oracle(std::uint64_t seed) {
  using namespace detail;
  const auto m = model(3, KernelKind::Factor, 1.0, 0.5, 0.5);
  const double exact = CtmcOracle(m, 0b111).extinct_probability(1.0);
  const Simulator sim(m);
  const auto init = all_vertices(3);
  const std::size_t reps = 100000;
  std::size_t extinct = 0;
  for (std::size_t r = 0; r < reps; ++r)
    if (sim.run_until(init, 1.0, seed, r, quiet()).extinction_time) ++extinct;
  const double p = static_cast<double>(extinct) / static_cast<double>(reps);
  const double se = std::sqrt(exact * (1 - exact) / static_cast<double>(reps));
  const double z = (p - exact) / se;
  return {2, "ctmc_oracle", std::abs(z) <= kSigmas, "p_sim=" + fmt(p) + " p_exact=" + fmt(exact) + " z=" + fmt(z, 3)};
}

/// Pinned pair: p_{1,2} = 1 so updates never remove the edge; E[T_ext] = 3/2 + lambda/2.
inline CriterionResult pinned_pair(std::uint64_t seed) {
  using namespace detail;
  const auto m = model(2, KernelKind::Factor, 100.0, 0.5, 1.0);
  const double oracle = CtmcOracle(m, 0b11).expected_extinction_time();
  const Simulator sim(m);
  const auto est = extinction_time_mc(sim, all_vertices(2), 100000, 1e9, seed);
  const bool pass = std::abs(est.mean / 2.0 - 1.0) <= kPinnedRelTol && std::abs(oracle - 2.0) < 1e-9;
  return {3, "pinned_pair", pass, "mean_T_ext=" + fmt(est.mean) + " oracle=" + fmt(oracle, 10)};
}

inline CriterionResult duality(std::uint64_t seed) {
  using namespace detail;
  const Simulator sim(model(20, KernelKind::Factor, 1.0, 0.5, 1.0));
  const auto d = duality_check(sim, 2.0, 100000, seed);
  return {4, "duality", std::abs(d.z) <= kSigmas,
          "full_start=" + fmt(d.lhs.mean) + " single_start=" + fmt(d.rhs.mean) + " z=" + fmt(d.z, 3)};
}

/// Lazy and eager edge oracles on the same keyed realization agree on every queried pair.
inline CriterionResult lazy_eager(std::uint64_t seed) {
  using namespace detail;
  const PairModel pm(model(30, KernelKind::Factor, 1.0, 0.5, 0.0, 0.8));
  std::uint64_t queries = 0, mismatches = 0;
  for (std::uint64_t sched = 0; sched < 100; ++sched)
    for (std::uint64_t s = 0; s < 100; ++s) {
      CounterStream plan(seed, Domain::Harness, sched);
      const KeyedRng rng(key_hash(seed, Domain::Harness, 0x1a2e, s));
      auto eager = initial_graph(pm, rng);
      GraphState lazy(30);
      double t = 0.0;
      for (int k = 0; k < 8; ++k) {
        if (k > 0) t += plan.uniform();
        evolve_eager_to(eager, pm, rng, t);
        for (int q = 0; q < 20; ++q) {
          const auto i = static_cast<Vertex>(plan.below(30)) + 1;
          auto j = static_cast<Vertex>(plan.below(29)) + 1;
          if (j >= i) ++j;
          ++queries;
          if (lazy_edge_query(lazy, pm, rng, i, j, t) != eager.has_edge(i, j)) ++mismatches;
        }
      }
    }
  return {5, "lazy_eager", mismatches == 0,
          "queries=" + std::to_string(queries) + " mismatches=" + std::to_string(mismatches)};
}

/// Worked exponent points in exact rational arithmetic, plus continuity across the two
/// regime boundaries.
inline CriterionResult phase_classifier(std::uint64_t) {
  using Q = boost::rational<long long>;
  using theory::classify_phase_exact;
  using theory::Strategy;
  using theory::Verdict;
  int ok = 0;
  auto xi_is = [&](KernelKind k, Q tau, Q eta, Q xi, Strategy s) {
    const auto r = classify_phase_exact<Q>(k, tau, eta);
    if (r.verdict == Verdict::SlowMetastable && r.xi && *r.xi == xi && r.strategy && *r.strategy == s) ++ok;
  };
  auto verdict_is = [&](KernelKind k, Q tau, Q eta, Verdict v) {
    const auto r = classify_phase_exact<Q>(k, tau, eta);
    if (r.verdict == v && !r.xi) ++ok;
  };
  verdict_is(KernelKind::Factor, Q(7, 2), Q(3, 5), Verdict::FastExtinction);
  xi_is(KernelKind::Factor, Q(3), Q(1, 4), Q(5), Strategy::LocalSurvival);
  xi_is(KernelKind::Factor, Q(9, 4), Q(0), Q(4, 3), Strategy::QuickDirect);
  xi_is(KernelKind::PreferentialAttachment, Q(12, 5), Q(1, 4), Q(7, 3), Strategy::QuickIndirect);
  xi_is(KernelKind::PreferentialAttachment, Q(29, 10), Q(-1), Q(14, 5), Strategy::LocalSurvival);
  xi_is(KernelKind::Weak, Q(5, 2), Q(1, 3), Q(3, 2), Strategy::QuickDirect);
  verdict_is(KernelKind::Factor, Q(3), Q(3, 5), Verdict::BoundaryUnknown);

  // The formulas on either side of each boundary agree exactly there, and the double
  // classifier moves by less than the tolerance across one ulp.
  double worst = 0.0;
  bool exact_joins = true;
  for (long long k = 1; k < 50; ++k) {
    const Q eta(k, 100);
    exact_joins = exact_joins && theory::xi_quick_direct(Q(5, 2) + eta) == theory::xi_local_positive(Q(5, 2) + eta, eta);
    exact_joins = exact_joins && theory::xi_local_positive(Q(2) + Q(2) * eta, eta) == theory::xi_quick_indirect(Q(2) + Q(2) * eta);
    const double e = boost::rational_cast<double>(eta);
    const double b1 = 2.5 + e;
    const double l1 = *theory::classify_phase(KernelKind::Factor, b1, e).xi;
    const double r1 = *theory::classify_phase(KernelKind::Factor, std::nextafter(b1, 10.0), e).xi;
    worst = std::max(worst, std::abs(l1 - r1) / std::max(1.0, l1));
    const double b2 = 2.0 + 2.0 * e;
    const double l2 = *theory::classify_phase(KernelKind::PreferentialAttachment, std::nextafter(b2, 0.0), e).xi;
    const double r2 = *theory::classify_phase(KernelKind::PreferentialAttachment, b2, e).xi;
    worst = std::max(worst, std::abs(l2 - r2) / std::max(1.0, l2));
  }
  const bool pass = ok == 7 && exact_joins && worst <= kContinuityTol;
  return {6, "phase_classifier", pass,
          "worked_points=" + std::to_string(ok) + "/7 exact_joins=" + (exact_joins ? "yes" : "no") +
              " max_jump=" + detail::fmt(worst, 3)};
}

inline CriterionResult f_integrals(std::uint64_t) {
  using namespace theory;
  constexpr KernelKind kinds[] = {KernelKind::Factor, KernelKind::PreferentialAttachment, KernelKind::Strong,
                                  KernelKind::Weak};
  double worst_rel = 0.0;
  for (double g : {0.25, 0.5, 0.75})
    for (double a : {0.3, 1e-2, 1e-4}) {
      const KernelSpec k{KernelKind::Factor, 1.3, g};
      const auto exact = f_series_closed_form(k, a, 5);
      const auto num = f_series_numeric(k, a, 5);
      for (std::size_t l = 0; l < 5; ++l) {
        worst_rel = std::max(worst_rel, std::abs(num.f1[l] / exact.f1[l] - 1.0));
        worst_rel = std::max(worst_rel, std::abs(num.f2[l] / exact.f2[l] - 1.0));
      }
    }
  int points = 0, violations = 0;
  for (KernelKind kind : kinds)
    for (double g : {0.3, 0.7})
      for (double a : {0.3, 0.1, 1e-2, 1e-3, 1e-4}) {
        const KernelSpec k{kind, 1.5, g};
        const auto s = f_series(k, a, 5);
        for (int l = 1; l <= 5; ++l) {
          const auto i = static_cast<std::size_t>(l - 1);
          if (s.f1[i] > f_bound(k, a, l, FMode::F1).value) ++violations;
          if (s.f2[i] > f_bound(k, a, l, FMode::F2).value) ++violations;
          ++points;
        }
      }
  const bool pass = worst_rel <= kQuadratureRelTol && points == 200 && violations == 0;
  return {7, "f_integrals", pass,
          "max_rel_err=" + detail::fmt(worst_rel, 3) + " grid_points=" + std::to_string(points) +
              " bound_violations=" + std::to_string(violations)};
}

inline ModelParams slow_point(std::int64_t n) {
  return detail::model(n, KernelKind::Factor, 1.0, 0.75, 0.5, 1.0);
}

inline CriterionResult slow_extinction(std::uint64_t seed) {
  const Simulator sim(slow_point(kSlowRegimeN));
  const auto init = all_vertices(static_cast<Vertex>(kSlowRegimeN));
  int alive = 0;
  const int reps = 100;
  for (int r = 0; r < reps; ++r)
    if (sim.run_until(init, 1000.0, seed, static_cast<std::uint64_t>(r), detail::quiet()).censored()) ++alive;
  const double frac = alive / double(reps);
  return {8, "slow_extinction", frac >= 0.99,
          "N=" + std::to_string(kSlowRegimeN) + " survival_at_1000=" + detail::fmt(frac)};
}

inline CriterionResult plateau(std::uint64_t seed) {
  const Simulator sim(slow_point(kSlowRegimeN));
  const auto rep = metastability_probe(sim, {50.0, 100.0, 200.0}, 1000, seed);
  std::string d = "N=" + std::to_string(kSlowRegimeN);
  for (std::size_t k = 0; k < rep.times.size(); ++k)
    d += " I(" + detail::fmt(rep.times[k]) + ")=" + detail::fmt(rep.densities[k], 4) + "+-" + detail::fmt(rep.stderr_[k], 2);
  return {9, "plateau", rep.plateau_pass, d};
}

/// Mean extinction time of both the true process and the wait-and-see process at a point
/// with a zero-floor supermartingale certificate; both must stay under the bound and grow
/// like log N.
inline CriterionResult fast_extinction(std::uint64_t seed) {
  const auto s = theory::ScoringFunction::monomial(0.4);
  std::vector<double> logn, t_true, t_ws;
  bool certified = true, below = true;
  std::string d;
  for (std::int64_t n : {100, 1000, 10000}) {
    const auto m = detail::model(n, KernelKind::Factor, 1.0, 0.4, 0.05, 1.0);
    certified = certified && theory::check_supermartingale_conditions(m, 0.0, s).pass();
    const double bound = theory::fast_extinction_time_bound(m.varkappa, s, static_cast<double>(n));
    const auto init = all_vertices(static_cast<Vertex>(n));
    const Simulator sim(m);
    const auto est = extinction_time_mc(sim, init, 100, 1e6, seed);
    const WsModel wm(m);
    Accumulator ws;
    for (std::uint64_t r = 0; r < 100; ++r) ws.add(ws_extinction_time(wm, init, 1e6, seed, r).value_or(1e6));
    below = below && est.mean <= bound && ws.mean() <= bound && est.censored_fraction == 0.0;
    logn.push_back(std::log(static_cast<double>(n)));
    t_true.push_back(est.mean);
    t_ws.push_back(ws.mean());
    d += " N=" + std::to_string(n) + ":" + detail::fmt(est.mean, 4) + "/" + detail::fmt(ws.mean(), 4) + "<=" +
         detail::fmt(bound, 4);
  }
  const auto f_true = fit_line(logn, t_true), f_ws = fit_line(logn, t_ws);
  const bool pass = certified && below && f_true.r2 >= kMinR2 && f_ws.r2 >= kMinR2 && f_true.slope > 0 && f_ws.slope > 0;
  return {10, "fast_extinction", pass,
          "true/ws/bound" + d + " R2=" + detail::fmt(f_true.r2, 4) + "/" + detail::fmt(f_ws.r2, 4)};
}

/// Monte Carlo drift of the score from frozen states reached by the process itself.
inline CriterionResult drift(std::uint64_t seed) {
  const auto m = detail::model(100, KernelKind::Factor, 1.0, 0.4, 0.05, 1.0);
  const auto s = theory::ScoringFunction::monomial(0.4);
  const bool certified = theory::check_supermartingale_conditions(m, 0.0, s).pass();
  const WsModel wm(m);
  const double rho = theory::supermartingale_rate(m.varkappa);
  const double delta = 0.01;
  CounterStream pick(seed, Domain::Harness, 0xd21f);
  int ok_m = 0, ok_z = 0, states = 0;
  double worst_ratio = -std::numeric_limits<double>::infinity();
  for (std::uint64_t k = 0; states < 20; ++k) {
    WsState st = WsState::empty(wm.N());
    for (Vertex x = 1; x <= wm.N(); ++x) st.infected[static_cast<std::size_t>(x)] = pick.bernoulli(0.5);
    WaitAndSee ws(wm, st, seed, k);
    ws.run_until(0.2 + 2.0 * pick.uniform());
    if (ws.infected_count() == 0) continue;
    const WsState frozen = ws.state();
    const double M = score(frozen, wm.pair_model(), s).M;
    const auto d = drift_estimate(wm, frozen, s, delta, 20000, key_hash(seed, Domain::Harness, 0xd21f, k));
    const double upper_m = (d.dM + kSigmas * d.dM_se) / delta;
    const double upper_z = (d.dZ + kSigmas * d.dZ_se) / delta;
    if (upper_m <= -rho * M * (1.0 - kDriftSlack)) ++ok_m;
    if (upper_z <= 0.0) ++ok_z;
    worst_ratio = std::max(worst_ratio, upper_m / (rho * M));
    ++states;
  }
  return {11, "supermartingale_drift", certified && ok_m == 20 && ok_z == 20,
          "states_ok_M=" + std::to_string(ok_m) + "/20 states_ok_Z=" + std::to_string(ok_z) +
              "/20 worst_upper_dM_over_rhoM=" + detail::fmt(worst_ratio, 4)};
}

inline CriterionResult coupling(std::uint64_t seed) {
  const auto m = detail::model(20, KernelKind::Factor, 1.0, 0.6, 1.2, 0.5);
  std::uint64_t events = 0, inf_v = 0, edge_v = 0;
  for (std::uint64_t r = 0; r < 1000; ++r) {
    CoupledRun run(m, all_vertices(20), seed, r);
    run.run_until(5.0);
    events += run.report().events;
    inf_v += run.report().infection_violations;
    edge_v += run.report().edge_violations;
  }
  return {12, "coupling", inf_v == 0 && edge_v == 0,
          "events=" + std::to_string(events) + " infection_violations=" + std::to_string(inf_v) +
              " edge_violations=" + std::to_string(edge_v)};
}

/// Log-log slopes of the closed-form density bounds against the exponents.
inline CriterionResult exponent_slopes(std::uint64_t) {
  using namespace theory;
  const std::vector<double> lambdas{1e-2, 1e-3, 1e-4};
  double worst = 0.0;
  std::string d;
  auto record = [&](const std::string& label, double slope, double target) {
    worst = std::max(worst, std::abs(slope - target));
    d += " " + label + "=" + detail::fmt(slope, 4) + "/" + detail::fmt(target, 4);
  };
  for (double g : {0.4, 0.6}) {
    const KernelSpec k{KernelKind::Weak, 1.0, g};
    std::vector<double> dens;
    for (double lam : lambdas)
      dens.push_back(lower_bound_density(k, lam, star_scale(KernelKind::Weak, StarRegime::QuickDirectWeak, lam, 1.0, g, 0.0),
                                         LowerBoundStrategy::Quick));
    record("lower_weak_g" + detail::fmt(g), log_log_slope(lambdas, dens), *classify_phase(KernelKind::Weak, tau_from_gamma(g), 0.0).xi);
  }
  {
    const KernelSpec k{KernelKind::Factor, 1.0, 0.75};
    std::vector<double> dens;
    for (double lam : lambdas)
      dens.push_back(lower_bound_density(
          k, lam, star_scale(KernelKind::Factor, StarRegime::QuickDirectFactor, lam, 1.0, 0.75, 0.0), LowerBoundStrategy::Quick));
    record("lower_factor_g0.75", log_log_slope(lambdas, dens), *classify_phase(KernelKind::Factor, tau_from_gamma(0.75), 0.0).xi);
  }
  for (double g : {0.4, 0.5}) {
    const KernelSpec k{KernelKind::Factor, 1.0, g};
    const double eta = 0.25;
    auto base = detail::model(100, KernelKind::Factor, 1.0, g, lambdas.front(), eta);
    const auto r = calibrate_choice_r(base, UpperRegime::LocalSurvival, lambdas);
    if (!r) {
      record("upper_factor_g" + detail::fmt(g), std::numeric_limits<double>::infinity(), 0.0);
      continue;
    }
    std::vector<double> dens;
    for (double lam : lambdas) {
      auto m = base;
      m.lambda = lam;
      const auto ch = supermartingale_choice(k, UpperRegime::LocalSurvival, lam, eta, *r);
      const double inf = std::numeric_limits<double>::infinity();
      dens.push_back(resdens_bound(m, ch.a, ch.s, inf, inf).limit());
    }
    record("upper_factor_g" + detail::fmt(g), log_log_slope(lambdas, dens),
           *classify_phase(KernelKind::Factor, tau_from_gamma(g), eta).xi);
  }
  return {13, "exponent_slopes", worst <= kSlopeTol, "slope/target" + d};
}

struct Criterion {
  int id;
  const char* name;
  std::function<CriterionResult(std::uint64_t)> run;
};

inline const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all{
      {1, "stationarity", stationarity},         {2, "ctmc_oracle", ctmc_oracle},
      {3, "pinned_pair", pinned_pair},           {4, "duality", duality},
      {5, "lazy_eager", lazy_eager},             {6, "phase_classifier", phase_classifier},
      {7, "f_integrals", f_integrals},           {8, "slow_extinction", slow_extinction},
      {9, "plateau", plateau},                   {10, "fast_extinction", fast_extinction},
      {11, "supermartingale_drift", drift},      {12, "coupling", coupling},
      {13, "exponent_slopes", exponent_slopes},
  };
  return all;
}

/// Wall-clock budgets in seconds; zero means none.
inline double budget(int id) {
  switch (id) {
    case 1: return 60.0;
    case 2: return 120.0;
    case 8: return 600.0;
    default: return 0.0;
  }
}

inline std::string format_line(const CriterionResult& r) {
  std::ostringstream os;
  os << (r.pass ? "PASS" : "FAIL") << ' ' << (r.id < 10 ? "0" : "") << r.id << ' ' << r.name << ' '
     << detail::fmt(r.seconds, 3) << "s " << r.detail;
  return os.str();
}

/// Runs the selected criteria (all when `only` is empty), printing one line each.
inline std::vector<CriterionResult> run(const std::vector<int>& only, std::uint64_t seed, std::ostream& out) {
  std::vector<CriterionResult> results;
  for (const auto& c : criteria()) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    CriterionResult r;
    try {
      r = c.run(seed);
    } catch (const std::exception& e) {
      r = {c.id, c.name, false, std::string("exception: ") + e.what()};
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (budget(r.id) > 0.0 && r.seconds > budget(r.id)) {
      r.pass = false;
      r.detail += " over_budget=" + detail::fmt(budget(r.id)) + "s";
    }
    out << format_line(r) << std::endl;
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace dynnet::acceptance
