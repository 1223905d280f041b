#pragma once

#include <cassert>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "dynnet/kernels.hpp"
#include "dynnet/rng.hpp"

namespace dynnet {

/// Fenwick tree over non-negative weights with prefix-search sampling. Indices 1..n.
class Fenwick {
 public:
  explicit Fenwick(std::size_t n = 0) : tree_(n + 1, 0.0), w_(n + 1, 0.0) {
    top_ = 1;
    while (top_ * 2 <= n) top_ *= 2;
  }

  [[nodiscard]] std::size_t size() const { return w_.size() - 1; }
  [[nodiscard]] double weight(std::size_t i) const { return w_[i]; }
  [[nodiscard]] double total() const { return total_; }

  void set(std::size_t i, double w) {
    const double d = w - w_[i];
    if (d == 0.0) return;
    w_[i] = w;
    total_ += d;
    for (std::size_t k = i; k < tree_.size(); k += k & (~k + 1)) tree_[k] += d;
  }

  /// Smallest index whose prefix sum exceeds u, for u in [0,total).
  [[nodiscard]] std::size_t find(double u) const {
    std::size_t pos = 0;
    for (std::size_t step = top_; step > 0; step >>= 1) {
      const std::size_t nxt = pos + step;
      if (nxt < tree_.size() && tree_[nxt] <= u) {
        pos = nxt;
        u -= tree_[nxt];
      }
    }
    std::size_t idx = pos + 1;
    // Guard against rounding: fall back to the nearest positive weight.
    while (idx < w_.size() && w_[idx] <= 0.0) ++idx;
    if (idx >= w_.size()) {
      idx = w_.size() - 1;
      while (idx > 1 && w_[idx] <= 0.0) --idx;
    }
    return idx;
  }

  /// Recomputes internal sums from the stored weights, removing accumulated rounding.
  void rebuild() {
    std::fill(tree_.begin(), tree_.end(), 0.0);
    total_ = 0.0;
    for (std::size_t i = 1; i < w_.size(); ++i) {
      total_ += w_[i];
      for (std::size_t k = i; k < tree_.size(); k += k & (~k + 1)) tree_[k] += w_[i];
    }
  }

 private:
  std::vector<double> tree_;
  std::vector<double> w_;
  double total_ = 0.0;
  std::size_t top_ = 1;
};

/// Walker alias table for a fixed discrete law over 0..n-1.
class AliasTable {
 public:
  AliasTable() = default;
  explicit AliasTable(const std::vector<double>& w) {
    const std::size_t n = w.size();
    prob_.assign(n, 0.0);
    alias_.assign(n, 0);
    total_ = 0.0;
    for (double x : w) total_ += x;
    if (n == 0 || total_ <= 0.0) return;
    std::vector<double> scaled(n);
    std::vector<std::size_t> small, large;
    for (std::size_t i = 0; i < n; ++i) {
      scaled[i] = w[i] * static_cast<double>(n) / total_;
      (scaled[i] < 1.0 ? small : large).push_back(i);
    }
    while (!small.empty() && !large.empty()) {
      const std::size_t s = small.back(), l = large.back();
      small.pop_back();
      prob_[s] = scaled[s];
      alias_[s] = l;
      scaled[l] -= 1.0 - scaled[s];
      if (scaled[l] < 1.0) {
        large.pop_back();
        small.push_back(l);
      }
    }
    for (auto i : large) prob_[i] = 1.0;
    for (auto i : small) prob_[i] = 1.0;
  }

  [[nodiscard]] double total() const { return total_; }
  [[nodiscard]] bool empty() const { return prob_.empty() || total_ <= 0.0; }

  std::size_t sample(CounterStream& rng) const {
    const double u = rng.uniform() * static_cast<double>(prob_.size());
    auto i = static_cast<std::size_t>(u);
    if (i >= prob_.size()) i = prob_.size() - 1;
    return (u - static_cast<double>(i)) < prob_[i] ? i : alias_[i];
  }

 private:
  std::vector<double> prob_;
  std::vector<std::size_t> alias_;
  double total_ = 0.0;
};

/// Samples j in [lo,hi] \ {i} with probability proportional to p_{i,j}. The row is
/// non-increasing in j, so on each dyadic block [b, 2b) the value at b is an envelope;
/// power-law decay of order at most 2 keeps the acceptance ratio at least 1/4.
inline Vertex sample_row(const PairModel& pm, Vertex i, Vertex lo, Vertex hi, CounterStream& rng) {
  if (lo > hi) throw std::logic_error("sample_row: empty range");
  struct Block {
    Vertex b, e;
    double env;
  };
  Block blocks[40];
  int nb = 0;
  double total = 0.0;
  for (Vertex b = lo; b <= hi;) {
    const Vertex e = static_cast<Vertex>(std::min<std::int64_t>(hi, 2LL * b - 1));
    const Vertex first = (b == i) ? (b + 1 <= e ? b + 1 : b) : b;
    const double env = (first == i) ? 0.0 : pm.p(i, first);
    blocks[nb++] = {b, e, env * static_cast<double>(e - b + 1)};
    total += blocks[nb - 1].env;
    b = e + 1;
  }
  if (total <= 0.0) throw std::logic_error("sample_row: zero row");
  for (int guard = 0; guard < 1'000'000; ++guard) {
    double u = rng.uniform() * total;
    int k = 0;
    while (k < nb - 1 && u >= blocks[k].env) u -= blocks[k++].env;
    const Block& bl = blocks[k];
    const Vertex j = bl.b + static_cast<Vertex>(rng.below(static_cast<std::uint64_t>(bl.e - bl.b + 1)));
    if (j == i) continue;
    const Vertex first = (bl.b == i) ? bl.b + 1 : bl.b;
    const double envv = pm.p(i, first);
    if (rng.uniform() * envv < pm.p(i, j)) return j;
  }
  throw std::runtime_error("sample_row: rejection loop did not terminate");
}

}  // namespace dynnet
