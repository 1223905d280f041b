#pragma once

#include <Eigen/Dense>
#include <bit>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dynnet/kernels.hpp"

namespace dynnet {

/// Brute-force joint chain over (graph, infection) states for N <= 4. A state packs one
/// bit per unordered pair followed by one bit per vertex.
class CtmcOracle {
 public:
  struct Transition {
    std::uint32_t to;
    double rate;
  };

  CtmcOracle(const ModelParams& m, std::uint32_t init_infected_mask) : pm_(m) {
    if (m.N > 4) throw std::length_error("ctmc_oracle: N must be at most 4");
    n_ = static_cast<int>(m.N);
    for (int i = 1; i <= n_; ++i)
      for (int j = i + 1; j <= n_; ++j) pairs_.emplace_back(i, j);
    np_ = static_cast<int>(pairs_.size());
    states_ = 1u << (np_ + n_);
    build();
    init_.assign(states_, 0.0);
    for (std::uint32_t gbits = 0; gbits < (1u << np_); ++gbits) {
      double w = 1.0;
      for (int k = 0; k < np_; ++k) {
        const double p = pm_.p(pairs_[k].first, pairs_[k].second);
        w *= ((gbits >> k) & 1u) ? p : 1.0 - p;
      }
      init_[gbits | (init_infected_mask << np_)] = w;
    }
  }

  [[nodiscard]] std::uint32_t state_count() const { return states_; }
  [[nodiscard]] std::uint32_t infection_bits(std::uint32_t s) const { return s >> np_; }
  [[nodiscard]] const std::vector<std::vector<Transition>>& transitions() const { return out_; }

  /// Transient law at t by uniformization, starting from stationary graph and the given infection set.
  [[nodiscard]] std::vector<double> distribution_at(double t) const {
    double lam = 0.0;
    for (std::uint32_t s = 0; s < states_; ++s) lam = std::max(lam, exit_[s]);
    if (lam == 0.0 || t == 0.0) return init_;
    std::vector<double> v = init_, acc(states_, 0.0), nxt(states_);
    const double mean = lam * t;
    double logw = -mean;  // log Poisson weight of k jumps
    double cum = 0.0;
    for (int k = 0; k < 100000; ++k) {
      const double w = std::exp(logw);
      for (std::uint32_t s = 0; s < states_; ++s) acc[s] += w * v[s];
      cum += w;
      if (cum > 1.0 - 1e-15 && k > mean) break;
      std::fill(nxt.begin(), nxt.end(), 0.0);
      for (std::uint32_t s = 0; s < states_; ++s) {
        if (v[s] == 0.0) continue;
        nxt[s] += v[s] * (1.0 - exit_[s] / lam);
        for (const auto& tr : out_[s]) nxt[tr.to] += v[s] * tr.rate / lam;
      }
      v.swap(nxt);
      logw += std::log(mean) - std::log(static_cast<double>(k + 1));
    }
    return acc;
  }

  [[nodiscard]] double extinct_probability(double t) const {
    const auto d = distribution_at(t);
    double p = 0.0;
    for (std::uint32_t s = 0; s < states_; ++s)
      if (infection_bits(s) == 0) p += d[s];
    return p;
  }

  [[nodiscard]] double expected_density(double t) const {
    const auto d = distribution_at(t);
    double e = 0.0;
    for (std::uint32_t s = 0; s < states_; ++s) e += d[s] * std::popcount(infection_bits(s));
    return e / n_;
  }

  /// E[T_ext] from the initial law: solves -Q_TT m = 1 on states with an infected vertex.
  [[nodiscard]] double expected_extinction_time() const { return solve_transient(false); }

  /// Probability of eventual absorption in the extinct class (conservation check).
  [[nodiscard]] double absorption_probability() const { return solve_transient(true); }

 private:
  void build() {
    out_.assign(states_, {});
    exit_.assign(states_, 0.0);
    for (std::uint32_t s = 0; s < states_; ++s) {
      const std::uint32_t inf = s >> np_;
      auto add = [&](std::uint32_t to, double r) {
        if (r <= 0.0) return;
        out_[s].push_back({to, r});
        exit_[s] += r;
      };
      for (int x = 0; x < n_; ++x)
        if ((inf >> x) & 1u) add(s & ~(1u << (np_ + x)), 1.0);
      for (int k = 0; k < np_; ++k) {
        const auto [i, j] = pairs_[k];
        const double p = pm_.p(i, j), kap = pm_.kappa(i, j);
        const bool present = (s >> k) & 1u;
        add(s ^ (1u << k), present ? kap * (1.0 - p) : kap * p);
        if (!present) continue;
        const bool ii = (inf >> (i - 1)) & 1u, ij = (inf >> (j - 1)) & 1u;
        if (ii != ij) add(s | (1u << (np_ + i - 1)) | (1u << (np_ + j - 1)), pm_.params().lambda);
      }
    }
  }

  [[nodiscard]] double solve_transient(bool absorption) const {
    std::vector<std::uint32_t> idx(states_, UINT32_MAX), trans;
    for (std::uint32_t s = 0; s < states_; ++s)
      if (infection_bits(s) != 0) {
        idx[s] = static_cast<std::uint32_t>(trans.size());
        trans.push_back(s);
      }
    const auto n = static_cast<Eigen::Index>(trans.size());
    if (n == 0) return absorption ? 1.0 : 0.0;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      const std::uint32_t s = trans[static_cast<std::size_t>(r)];
      A(r, r) = exit_[s];
      for (const auto& tr : out_[s]) {
        if (idx[tr.to] != UINT32_MAX) A(r, idx[tr.to]) -= tr.rate;
        else if (absorption) b(r) += tr.rate;
      }
      if (!absorption) b(r) = 1.0;
    }
    const Eigen::VectorXd m = A.partialPivLu().solve(b);
    double out = 0.0;
    for (std::uint32_t s = 0; s < states_; ++s) {
      if (init_[s] == 0.0) continue;
      out += init_[s] * (idx[s] == UINT32_MAX ? (absorption ? 1.0 : 0.0) : m(idx[s]));
    }
    return out;
  }

  PairModel pm_;
  int n_ = 0, np_ = 0;
  std::uint32_t states_ = 0;
  std::vector<std::pair<Vertex, Vertex>> pairs_;
  std::vector<std::vector<Transition>> out_;
  std::vector<double> exit_;
  std::vector<double> init_;
};

}  // namespace dynnet
