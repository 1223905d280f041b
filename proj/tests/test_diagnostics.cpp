#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "dynnet/diagnostics.hpp"
#include "dynnet/stats.hpp"

using namespace dynnet;

namespace {

ModelParams model(std::int64_t n, KernelKind kind, double beta, double gamma, double lambda, double eta = 0.0,
                  double varkappa = 1.0) {
  ModelParams m;
  m.N = n;
  m.kernel = {kind, beta, gamma};
  m.lambda = lambda;
  m.eta = eta;
  m.varkappa = varkappa;
  return m;
}

std::vector<Vertex> range_step(Vertex lo, Vertex hi, Vertex step) {
  std::vector<Vertex> v;
  for (Vertex x = lo; x <= hi; x += step) v.push_back(x);
  return v;
}

}  // namespace

TEST(Partition, WorkedExamples) {
  const auto p = build_partition(16, 0.5);
  EXPECT_EQ(p.stars, (std::vector<Vertex>{6, 8}));
  EXPECT_EQ(p.c0, (std::vector<Vertex>{12, 16}));
  EXPECT_EQ(p.c1, (std::vector<Vertex>{10, 14}));
  EXPECT_EQ(p.odd, range_step(1, 15, 2));
  EXPECT_EQ(build_partition(8, 0.25).stars, (std::vector<Vertex>{2}));
}

TEST(Partition, ClassesAreDisjointEverywhere) {
  for (std::int64_t n = 8; n <= 300; n += 7)
    for (double a : {0.01, 0.1, 0.25, 0.33, 0.49, 0.5}) {
      const auto p = build_partition(n, a);
      std::set<Vertex> seen;
      std::size_t total = 0;
      for (const auto* cls : {&p.stars, &p.c0, &p.c1, &p.odd})
        for (Vertex v : *cls) {
          EXPECT_GE(v, 1);
          EXPECT_LE(v, n);
          seen.insert(v);
          ++total;
        }
      EXPECT_EQ(seen.size(), total) << "N=" << n << " a=" << a;
    }
}

TEST(Partition, RejectsBadLevelsAndDivisibility) {
  EXPECT_THROW(build_partition(16, 0.0), DomainError);
  EXPECT_THROW(build_partition(16, 0.6), DomainError);
  EXPECT_THROW(build_partition(7, 0.25), DomainError);
  EXPECT_THROW(build_partition(64, 0.3, true), DomainError);
  const auto p = build_partition(64, 0.5, true);
  EXPECT_EQ(p.stars.size(), 8u);  // aN/4
  EXPECT_EQ(p.c0.size(), 8u);     // N/8
  EXPECT_EQ(p.c1.size(), 8u);
}

TEST(Partition, SimplifiedSubgraphProbabilities) {
  const PairModel pm(model(64, KernelKind::Factor, 4.0, 0.5, 1.0));
  const auto part = build_partition(64, 0.5, true);
  const auto rm = subgraph_record_model(pm, part);
  EXPECT_NEAR(rm.p(18, 20), 8.0 / 64, 1e-15);        // star-star: p(1/2,1/2)/N
  EXPECT_NEAR(rm.p(18, 36), 4.0 * std::sqrt(2.0) / 64, 1e-15);  // star-connector: p(1/2,1)/N
  EXPECT_EQ(rm.p(36, 38), 0.0);                       // connector-connector
  EXPECT_EQ(rm.p(3, 18), pm.p(3, 18));                // odd vertices keep p_{i,j}
  EXPECT_EQ(rm.p(2, 18), 0.0);                        // vertex 2 is outside every class
  EXPECT_EQ(rm.kappa(18, 36), pm.kappa(18, 36));
}

TEST(StarScale, WorkedValues) {
  EXPECT_NEAR(star_scale(KernelKind::Weak, StarRegime::QuickDirectWeak, 0.01, 0.1, 0.5, 0.0), 1.0e-5, 1e-18);
  EXPECT_NEAR(star_scale(KernelKind::Factor, StarRegime::QuickDirectFactor, 0.01, 1.0, 0.75, 0.0), 1.0e-4, 1e-16);
  EXPECT_NEAR(star_scale(KernelKind::Factor, StarRegime::LocalSurvivalNonpos, 0.1, 1.0, 0.5, 0.0), 1.886e-5, 1e-8);
  const double lam = 0.05, g = 0.6, eta = 0.25;
  EXPECT_NEAR(star_scale(KernelKind::Factor, StarRegime::LocalSurvivalPos, lam, 2.0, g, eta),
              2.0 * std::pow(lam, 2 / (g * 0.5)) * std::pow(std::log(20.0), -0.5 / g), 1e-18);
  EXPECT_NEAR(star_scale(KernelKind::Strong, StarRegime::QuickIndirect, 0.1, 1.0, 0.75, 0.0), 1e-4, 1e-16);
}

TEST(StarScale, RejectsIncompatibleRegimes) {
  EXPECT_THROW(star_scale(KernelKind::Factor, StarRegime::QuickDirectFactor, 0.01, 1, 0.4, 0), DomainError);
  EXPECT_THROW(star_scale(KernelKind::Factor, StarRegime::QuickDirectWeak, 0.01, 1, 0.4, 0), DomainError);
  EXPECT_THROW(star_scale(KernelKind::Factor, StarRegime::QuickIndirect, 0.01, 1, 0.75, 0), DomainError);
  EXPECT_THROW(star_scale(KernelKind::Factor, StarRegime::LocalSurvivalPos, 0.01, 1, 0.5, 0.0), DomainError);
  EXPECT_THROW(star_scale(KernelKind::Factor, StarRegime::LocalSurvivalNonpos, 0.01, 1, 0.5, 0.1), DomainError);
  EXPECT_THROW(star_scale(KernelKind::Weak, StarRegime::QuickDirectWeak, 1.5, 1, 0.5, 0), DomainError);
}

TEST(ConditionValues, WorkedValues) {
  auto m = model(100, KernelKind::Factor, 1.0, 0.75, 0.01);
  EXPECT_NEAR(condition_values(m, 0.1).quick_direct, 0.031623, 1e-6);
  m = model(100, KernelKind::Factor, 1.0, 0.5, 0.3);
  EXPECT_NEAR(local_time_unit(m, 0.01), 1.0 / 3, 1e-15);
  EXPECT_NEAR(condition_values(m, 0.01).local, 0.1, 1e-12);
  m.lambda = 0.0;
  const auto c = condition_values(m, 0.2);
  EXPECT_EQ(c.quick_direct, 0.0);
  EXPECT_EQ(c.quick_indirect, 0.0);
  EXPECT_EQ(c.local, 0.0);
  EXPECT_FALSE(c.direct_holds || c.indirect_holds || c.local_holds);
}

TEST(ConditionValues, ThresholdsDecideFlags) {
  const auto m = model(100, KernelKind::Factor, 1.0, 0.75, 0.5);
  ConditionThresholds th;
  th.m_direct = 1.0;
  const auto c = condition_values(m, 0.01, th);  // 0.5 * 0.01 * 0.01^{-1.5} = 5
  EXPECT_NEAR(c.quick_direct, 5.0, 1e-12);
  EXPECT_TRUE(c.direct_holds);
  EXPECT_FALSE(condition_values(m, 0.01).direct_holds);
}

TEST(LowerBoundDensity, WorkedValues) {
  EXPECT_NEAR(lower_bound_density({KernelKind::Factor, 1, 0.5}, 0.1, 0.25, LowerBoundStrategy::Quick), 0.1, 1e-12);
  EXPECT_NEAR(lower_bound_density({KernelKind::Weak, 1, 0.5}, 0.1, 0.25, LowerBoundStrategy::Local), 0.025, 1e-12);
  EXPECT_EQ(lower_bound_density({KernelKind::Weak, 1, 0.5}, 0.0, 0.25, LowerBoundStrategy::Local), 0.0);
}

TEST(CutStatistic, WorkedValuesAndSymmetry) {
  StarPartition p;
  p.N = 10;
  p.stars = {2, 4, 6, 8};
  GraphState g(10);
  g.add_edge(2, 6);
  g.add_edge(4, 8);
  g.add_edge(2, 4);
  const std::vector<Vertex> a{2, 4}, rest{6, 8}, all{2, 4, 6, 8}, bad{3};
  EXPECT_EQ(cut_statistic(g, p, a), 2);
  EXPECT_EQ(cut_statistic(g, p, {}), 0);
  EXPECT_EQ(cut_statistic(g, p, all), 0);
  EXPECT_EQ(cut_statistic(g, p, rest), 2);
  EXPECT_THROW(cut_statistic(g, p, bad), DomainError);

  const PairModel pm(model(64, KernelKind::Factor, 4.0, 0.5, 1.0));
  const auto part = build_partition(64, 0.5, true);
  std::mt19937_64 gen(3);
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto gr = record_graph_at(generate_record(subgraph_record_model(pm, part), 0.0, s), 0.0);
    std::vector<Vertex> in, out;
    for (Vertex v : part.stars) (gen() & 1 ? in : out).push_back(v);
    EXPECT_EQ(cut_statistic(gr, part, in), cut_statistic(gr, part, out));
  }
}

TEST(CutStatistic, StationaryCutIsBinomialUnderSimplifiedModel) {
  // |A| = 4 of 8 stars: 16 pairs, each present with p(1/2,1/2)/N = 1/8.
  const PairModel pm(model(64, KernelKind::Factor, 4.0, 0.5, 1.0));
  const auto part = build_partition(64, 0.5, true);
  const auto rm = subgraph_record_model(pm, part);
  const std::vector<Vertex> a(part.stars.begin(), part.stars.begin() + 4);
  const int reps = 4000;
  std::array<double, 5> obs{};
  for (int s = 0; s < reps; ++s) {
    const auto g = record_graph_at(generate_record(rm, 0.0, static_cast<std::uint64_t>(s)), 0.0);
    obs[static_cast<std::size_t>(std::min<std::int64_t>(4, cut_statistic(g, part, a)))] += 1;
  }
  std::array<double, 5> pr{};
  double tail = 1.0;
  for (int k = 0; k < 4; ++k) {
    pr[static_cast<std::size_t>(k)] = std::exp(std::lgamma(17.0) - std::lgamma(k + 1.0) - std::lgamma(17.0 - k) +
                                               k * std::log(0.125) + (16 - k) * std::log(0.875));
    tail -= pr[static_cast<std::size_t>(k)];
  }
  pr[4] = tail;
  double chi2 = 0.0;
  for (std::size_t k = 0; k < 5; ++k) chi2 += std::pow(obs[k] - reps * pr[k], 2) / (reps * pr[k]);
  EXPECT_LT(chi2, 18.47);  // chi-square(4) upper 0.001 quantile
}

TEST(ReachStatistic, HandBuiltSinglePath) {
  const auto part = build_partition(32, 0.5);
  ASSERT_EQ(part.stars, (std::vector<Vertex>{10, 12, 14, 16}));
  const double w = two_step_time_unit(1.0);
  GraphicalRecord rec(32, 1.0);
  // Qualifying path 10 -> 20 -> 12.
  rec.set_initial(10, 20, true);
  rec.set_initial(20, 12, true);
  rec.add_infection_point(10, 20, 0.2 * w);
  rec.add_infection_point(20, 12, 0.8 * w);
  // 14: second-hop point falls in the first half-window.
  rec.set_initial(20, 14, true);
  rec.add_infection_point(20, 14, 0.3 * w);
  // 16: recovers inside the window.
  rec.set_initial(20, 16, true);
  rec.add_infection_point(20, 16, 0.7 * w);
  rec.add_recovery(16, 0.5 * w);
  rec.finalize();
  const std::vector<Vertex> a{10};
  EXPECT_EQ(reach_statistic(rec, part, a, 0.0, 1.0), 1);
  EXPECT_EQ(reach_statistic(rec, part, {}, 0.0, 1.0), 0);
  // An update of the first edge inside the window breaks the path.
  GraphicalRecord upd = rec;
  upd.add_update(10, 20, 0.1 * w, true);
  upd.finalize();
  EXPECT_EQ(reach_statistic(upd, part, a, 0.0, 1.0), 0);
}

TEST(ReachStatistic, NoInfectionPointsMeansNoReach) {
  const PairModel pm(model(64, KernelKind::Factor, 4.0, 0.5, 0.0));
  const auto part = build_partition(64, 0.5, true);
  const auto rec = generate_record(subgraph_record_model(pm, part), 1.0, 4);
  const std::vector<Vertex> a(part.stars.begin(), part.stars.begin() + 3);
  EXPECT_EQ(reach_statistic(rec, part, a, 0.0, 1.0), 0);
  EXPECT_THROW(reach_statistic(rec, part, a, 0.999, 1.0), std::invalid_argument);
}

TEST(SubsetScans, ExhaustiveForSmallStarSets) {
  const PairModel pm(model(64, KernelKind::Factor, 4.0, 0.5, 30.0));
  const auto part = build_partition(64, 0.5, true);
  const auto rec = generate_record(subgraph_record_model(pm, part), 1.0, 5);
  const auto g = record_graph_at(rec, 0.0);
  const auto cut = cut_scan(g, part, pm.params().kernel, 0.25);
  EXPECT_TRUE(cut.exhaustive);
  EXPECT_EQ(cut.subsets_checked, 238u);  // subsets of 8 with size 2..6
  const auto reach = reach_scan(rec, part, 0.0, 1.0);
  EXPECT_TRUE(reach.exhaustive);
  EXPECT_EQ(reach.subsets_checked, 254u);  // sizes 1..7 of 8 have rho in [0.05, 0.95]
  // The scan agrees with direct per-subset evaluation.
  std::uint64_t violations = 0;
  const double an = 32.0;
  for (std::uint64_t mask = 1; mask < 255; ++mask) {
    std::vector<Vertex> a;
    for (std::size_t k = 0; k < 8; ++k)
      if ((mask >> k) & 1u) a.push_back(part.stars[k]);
    const double rho = static_cast<double>(a.size()) / 8.0;
    if (static_cast<double>(reach_statistic(rec, part, a, 0.0, 1.0)) < (1 - rho) * an / 20) ++violations;
  }
  EXPECT_EQ(reach.violations, violations);
}

TEST(SubsetScans, SampledForLargeStarSets) {
  const PairModel pm(model(256, KernelKind::Factor, 4.0, 0.5, 1.0));
  const auto part = build_partition(256, 0.5, true);
  ASSERT_EQ(part.stars.size(), 32u);
  const auto g = record_graph_at(generate_record(subgraph_record_model(pm, part), 0.0, 6), 0.0);
  const auto s = cut_scan(g, part, pm.params().kernel, 0.3, 500, 7);
  EXPECT_FALSE(s.exhaustive);
  EXPECT_GT(s.subsets_checked, 400u);
}

TEST(LocalSurvival, ParamsMatchDefinitions) {
  const auto m = model(100, KernelKind::Factor, 2.0, 0.5, 0.75);
  const auto ls = local_survival_params(m, 0.25, 0.08);
  EXPECT_NEAR(ls.t_unit, 1.0 / 3, 1e-15);
  EXPECT_DOUBLE_EQ(ls.delta, 0.01);
  // p(1/4, 1) = 2 * 0.25^{-1/2} = 4; exponent = 0.01 * 0.5625 * (1/9) * 4 / 4 = 0.000625.
  EXPECT_NEAR(ls.exponent, 0.000625, 1e-16);
  EXPECT_EQ(ls.k_bar, 1.0);
  const auto big = local_survival_params(model(100, KernelKind::Factor, 2.0, 0.5, 30.0), 1e-4, 0.08);
  const long double e = 0.01L * 900.0L * (1.0L / 9.0L) * (2.0L * 100.0L) / 4.0L;  // = 50
  EXPECT_NEAR(big.exponent, static_cast<double>(e), 1e-12);
  EXPECT_EQ(big.k_bar, std::floor(std::exp(big.exponent)));
  EXPECT_EQ(ls.window(0), (std::pair<double, double>{0.0, 2.0 / 3}));
  EXPECT_EQ(ls.window(1), (std::pair<double, double>{0.0, 1.0}));
  EXPECT_NEAR(ls.window(5).first, 1.0, 1e-15);
  EXPECT_NEAR(ls.window(5).second, 7.0 / 3, 1e-15);
}

TEST(LocalSurvival, CalibratedC1IsPositive) {
  const PairModel pm(model(512, KernelKind::Factor, 1.0, 0.5, 1.0, 0.25));
  const auto cal = calibrate_c1(pm, build_partition(512, 0.125));
  EXPECT_GT(cal.min_ratio, 0.0);
  EXPECT_DOUBLE_EQ(cal.c1, cal.min_ratio / 2);
}

TEST(StableNeighbours, PinnedEdgesWithoutRecoveries) {
  const auto part = build_partition(64, 0.5);
  const Vertex x = part.stars.front();
  const auto ls = local_survival_params(model(64, KernelKind::Factor, 1.0, 0.5, 1.0), 0.5);
  GraphicalRecord rec(64, 10 * ls.t_unit);
  std::vector<Vertex> nb;
  for (std::size_t k = 0; k < part.c0.size(); k += 2) {
    rec.set_initial(x, part.c0[k], true);
    nb.push_back(part.c0[k]);
  }
  rec.finalize();
  const auto full = all_vertices(64);
  const auto series = stable_neighbour_series(rec, part, x, ls, 5, full);
  ASSERT_EQ(series.size(), 6u);
  for (const auto& pt : series) {
    EXPECT_EQ(pt.stable, static_cast<std::int64_t>(nb.size()));
    EXPECT_EQ(pt.stable_infected, pt.stable);
    EXPECT_EQ(pt.healthy_time, 0.0);
  }
  EXPECT_THROW(stable_neighbour_series(rec, part, x, ls, 9, full), std::invalid_argument);
  EXPECT_THROW(stable_neighbour_series(rec, part, 3, ls, 2, full), DomainError);
}

TEST(StableNeighbours, RecoveredStarWithoutInfectionsHasNoReservoir) {
  const auto part = build_partition(64, 0.5);
  const Vertex x = part.stars.front();
  const auto ls = local_survival_params(model(64, KernelKind::Factor, 1.0, 0.5, 1.0), 0.5);
  ASSERT_GT(ls.reservoir_threshold, 0.0);
  GraphicalRecord rec(64, 8 * ls.t_unit);
  for (Vertex y : part.c0) rec.set_initial(x, y, true);
  rec.add_recovery(x, 1e-6);
  rec.finalize();
  const auto series = stable_neighbour_series(rec, part, x, ls, 5, all_vertices(64));
  for (const auto& pt : series) EXPECT_FALSE(pt.reservoir);
  EXPECT_NEAR(series[1].healthy_time, ls.t_unit, 1e-12);
}

TEST(StableNeighbours, NestingHoldsOnRandomRecords) {
  const auto m = model(64, KernelKind::Factor, 3.0, 0.5, 2.0, 0.0, 0.5);
  const PairModel pm(m);
  const auto part = build_partition(64, 0.5);
  const auto ls = local_survival_params(m, 0.5);
  for (std::uint64_t s = 0; s < 40; ++s) {
    const auto rec = generate_record(RecordModel(pm), 12 * ls.t_unit, s);
    for (Vertex x : part.stars) {
      const auto series = stable_neighbour_series(rec, part, x, ls, 10, all_vertices(64));
      for (const auto& pt : series) {
        EXPECT_LE(pt.stable_infected, pt.stable);
        EXPECT_LE(pt.stable, static_cast<std::int64_t>(part.c0.size()));
        EXPECT_GE(pt.healthy_time, 0.0);
        EXPECT_LE(pt.healthy_time, ls.t_unit + 1e-12);
      }
    }
  }
}

TEST(StableNeighbours, HealthyTimeObeysReservoirBound) {
  // Star x linked to every C0 connector by pinned edges; W = lambda t M with M = 2.
  const auto part = build_partition(64, 0.5);
  const Vertex x = part.stars.back();
  const std::int64_t k_max = 30;
  for (double w : {8.0, 16.0, 32.0}) {
    const double lambda = 1.5 * w;  // t = 1/3, M = 2
    const auto m = model(64, KernelKind::Factor, 1.0, 0.5, lambda);
    const auto ls = local_survival_params(m, 0.5);
    RecordModel rm(64, lambda);
    for (Vertex y : part.c0) rm.set(x, y, 1.0, 0.0);
    std::uint64_t qualifying = 0, long_healthy = 0;
    for (std::uint64_t s = 0; s < 300; ++s) {
      const auto rec = generate_record(rm, static_cast<double>(k_max + 2) * ls.t_unit, s);
      for (const auto& pt : stable_neighbour_series(rec, part, x, ls, k_max, all_vertices(64))) {
        if (pt.stable_infected < 2) continue;
        ++qualifying;
        if (pt.healthy_time > ls.t_unit / 2) ++long_healthy;
      }
    }
    ASSERT_GT(qualifying, 1000u) << "W=" << w;
    const double freq = static_cast<double>(long_healthy) / static_cast<double>(qualifying);
    EXPECT_LE(freq, std::exp(-w / 4)) << "W=" << w;
  }
}
