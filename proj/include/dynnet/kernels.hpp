#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dynnet {

using Vertex = std::int32_t;

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

enum class KernelKind { Factor, PreferentialAttachment, Strong, Weak };
enum class UpdateRule { Sum, Max, MinIndex };

inline std::string_view to_string(KernelKind k) {
  switch (k) {
    case KernelKind::Factor: return "factor";
    case KernelKind::PreferentialAttachment: return "pa";
    case KernelKind::Strong: return "strong";
    case KernelKind::Weak: return "weak";
  }
  return "?";
}

inline KernelKind kernel_kind_from_string(std::string_view s) {
  if (s == "factor") return KernelKind::Factor;
  if (s == "pa" || s == "preferential_attachment") return KernelKind::PreferentialAttachment;
  if (s == "strong") return KernelKind::Strong;
  if (s == "weak") return KernelKind::Weak;
  throw std::invalid_argument("unknown kernel kind: " + std::string(s));
}

inline std::string_view to_string(UpdateRule r) {
  switch (r) {
    case UpdateRule::Sum: return "sum";
    case UpdateRule::Max: return "max";
    case UpdateRule::MinIndex: return "min_index";
  }
  return "?";
}

inline UpdateRule update_rule_from_string(std::string_view s) {
  if (s == "sum") return UpdateRule::Sum;
  if (s == "max") return UpdateRule::Max;
  if (s == "min_index") return UpdateRule::MinIndex;
  throw std::invalid_argument("unknown update rule: " + std::string(s));
}

/// Tail parameter and power-law exponent are linked by tau = 1 + 1/gamma.
inline double tau_from_gamma(double gamma) { return 1.0 + 1.0 / gamma; }
inline double gamma_from_tau(double tau) { return 1.0 / (tau - 1.0); }

struct KernelSpec {
  KernelKind kind = KernelKind::Factor;
  double beta = 1.0;
  double gamma = 0.5;

  [[nodiscard]] double tau() const { return tau_from_gamma(gamma); }

  void validate() const {
    if (!(beta > 0.0)) throw DomainError("kernel beta must be positive");
    if (!(gamma > 0.0 && gamma < 1.0)) throw DomainError("kernel gamma must lie in (0,1)");
  }
};

/// Kernel intensity p(x,y) on (0,1]^2. Symmetric, non-increasing in each argument.
inline double kernel_eval(const KernelSpec& k, double x, double y) {
  if (!(x > 0.0 && x <= 1.0 && y > 0.0 && y <= 1.0))
    throw DomainError("kernel arguments must lie in (0,1]");
  const double lo = std::min(x, y);
  const double hi = std::max(x, y);
  const double g = k.gamma;
  switch (k.kind) {
    case KernelKind::Factor: return k.beta * std::pow(x, -g) * std::pow(y, -g);
    case KernelKind::PreferentialAttachment: return k.beta * std::pow(lo, -g) * std::pow(hi, g - 1.0);
    case KernelKind::Strong: return k.beta * std::pow(lo, -g);
    case KernelKind::Weak: return k.beta * std::pow(hi, -g - 1.0);
  }
  return 0.0;
}

/// Exact closed form of the uncapped row integral over s in (0,1] of p(a,s).
inline double row_integral(const KernelSpec& k, double a) {
  if (!(a > 0.0 && a <= 1.0)) throw DomainError("row_integral level must lie in (0,1]");
  const double g = k.gamma;
  const double am = std::pow(a, -g);
  switch (k.kind) {
    case KernelKind::Factor: return k.beta * am / (1.0 - g);
    case KernelKind::PreferentialAttachment: return k.beta * (1.0 / (1.0 - g) + (am - 1.0) / g);
    case KernelKind::Strong: return k.beta * (std::pow(a, 1.0 - g) / (1.0 - g) + am * (1.0 - a));
    case KernelKind::Weak: return k.beta * (am + (am - 1.0) / g);
  }
  return 0.0;
}

/// Tightest constants with c1 a^-gamma <= lower(a) and row_integral(a) <= c2 a^-gamma on (0,1],
/// where lower(a) is p(a,1) for factor/PA/strong and row_integral(a) for the weak kernel.
struct CondpConstants {
  double c1 = 0.0;
  double c2 = 0.0;
};

inline CondpConstants condp_constants(const KernelSpec& k) {
  // Both normalised ratios are affine in a^gamma or in a, hence monotone: the extremes sit
  // at a = 1 or in the limit a -> 0, which is read off the leading constant. A log grid
  // scan confirms no interior extremum.
  const double g = k.gamma, b = k.beta;
  double upper_at_zero = 0.0;
  switch (k.kind) {
    case KernelKind::Factor: upper_at_zero = b / (1.0 - g); break;
    case KernelKind::PreferentialAttachment: upper_at_zero = b / g; break;
    case KernelKind::Strong: upper_at_zero = b; break;
    case KernelKind::Weak: upper_at_zero = b * (1.0 + 1.0 / g); break;
  }
  auto lower = [&](double a) {
    return (k.kind == KernelKind::Weak ? row_integral(k, a) : kernel_eval(k, a, 1.0)) * std::pow(a, g);
  };
  CondpConstants c{lower(1.0), std::max(upper_at_zero, row_integral(k, 1.0))};
  double lower_at_zero = k.kind == KernelKind::Weak ? upper_at_zero : b;
  c.c1 = std::min(c.c1, lower_at_zero);
  for (int e = 0; e <= 240; ++e) {
    const double a = std::pow(10.0, -e / 20.0);
    c.c1 = std::min(c.c1, lower(a));
    c.c2 = std::max(c.c2, row_integral(k, a) * std::pow(a, g));
  }
  return c;
}

struct ModelParams {
  std::int64_t N = 1;
  KernelSpec kernel{};
  double eta = 0.0;
  double varkappa = 1.0;
  double lambda = 0.0;
  UpdateRule update_rule = UpdateRule::Sum;

  [[nodiscard]] double tau() const { return kernel.tau(); }

  void validate() const {
    kernel.validate();
    if (N < 1) throw DomainError("N must be positive");
    if (N > (std::int64_t{1} << 30)) throw DomainError("N too large");
    if (!(varkappa > 0.0)) throw DomainError("varkappa must be positive");
    if (!(lambda >= 0.0)) throw DomainError("lambda must be non-negative");
    if (!std::isfinite(eta)) throw DomainError("eta must be finite");
  }
};

inline void check_pair(const ModelParams& m, std::int64_t i, std::int64_t j) {
  if (i < 1 || j < 1 || i > m.N || j > m.N) throw DomainError("vertex index out of range");
  if (i == j) throw DomainError("self-loops are excluded");
}

/// p_{i,j} = min(1, p(i/N, j/N) / N).
inline double connection_prob(const ModelParams& m, std::int64_t i, std::int64_t j) {
  check_pair(m, i, j);
  const double n = static_cast<double>(m.N);
  return std::min(1.0, kernel_eval(m.kernel, i / n, j / n) / n);
}

/// kappa_i = varkappa (N/i)^{gamma eta}.
inline double vertex_rate(const ModelParams& m, std::int64_t i) {
  return m.varkappa * std::pow(static_cast<double>(m.N) / static_cast<double>(i), m.kernel.gamma * m.eta);
}

inline double update_rate(const ModelParams& m, std::int64_t i, std::int64_t j) {
  check_pair(m, i, j);
  switch (m.update_rule) {
    case UpdateRule::Sum: return vertex_rate(m, i) + vertex_rate(m, j);
    case UpdateRule::Max: return std::max(vertex_rate(m, i), vertex_rate(m, j));
    case UpdateRule::MinIndex: return vertex_rate(m, std::min(i, j));
  }
  return 0.0;
}

/// Precomputed per-vertex powers so that p_{i,j} and kappa_{i,j} cost a few multiplications.
class PairModel {
 public:
  explicit PairModel(const ModelParams& m) : m_(m) {
    m.validate();
    const auto n = static_cast<std::size_t>(m.N);
    const double dn = static_cast<double>(m.N);
    const double g = m.kernel.gamma;
    lo_.resize(n + 1);
    hi_.resize(n + 1);
    kappa_.resize(n + 1);
    for (std::size_t i = 1; i <= n; ++i) {
      const double x = static_cast<double>(i) / dn;
      kappa_[i] = vertex_rate(m, static_cast<std::int64_t>(i));
      switch (m.kernel.kind) {
        case KernelKind::Factor: lo_[i] = hi_[i] = std::pow(x, -g); break;
        case KernelKind::PreferentialAttachment: lo_[i] = std::pow(x, -g); hi_[i] = std::pow(x, g - 1.0); break;
        case KernelKind::Strong: lo_[i] = std::pow(x, -g); hi_[i] = 1.0; break;
        case KernelKind::Weak: lo_[i] = 1.0; hi_[i] = std::pow(x, -g - 1.0); break;
      }
    }
    scale_ = m.kernel.beta / dn;
  }

  [[nodiscard]] const ModelParams& params() const { return m_; }
  [[nodiscard]] Vertex N() const { return static_cast<Vertex>(m_.N); }

  /// Capped connection probability; requires i != j, both in range.
  [[nodiscard]] double p(Vertex i, Vertex j) const {
    const auto a = static_cast<std::size_t>(std::min(i, j));
    const auto b = static_cast<std::size_t>(std::max(i, j));
    return std::min(1.0, scale_ * lo_[a] * hi_[b]);
  }

  [[nodiscard]] double kappa_vertex(Vertex i) const { return kappa_[static_cast<std::size_t>(i)]; }

  [[nodiscard]] double kappa(Vertex i, Vertex j) const {
    switch (m_.update_rule) {
      case UpdateRule::Sum: return kappa_vertex(i) + kappa_vertex(j);
      case UpdateRule::Max: return std::max(kappa_vertex(i), kappa_vertex(j));
      case UpdateRule::MinIndex: return kappa_vertex(std::min(i, j));
    }
    return 0.0;
  }

 private:
  ModelParams m_;
  std::vector<double> lo_, hi_, kappa_;
  double scale_ = 0.0;
};

struct EdgeCountEstimate {
  double value = 0.0;
  double error_bound = 0.0;  // zero when the pair sum is exact
};

/// Stationary mean edge count. Exact pair sum for N <= 10^4; above that each row is
/// bracketed on dyadic blocks using monotonicity of p_{i,j} in j.
inline EdgeCountEstimate expected_edge_count(const ModelParams& m) {
  if (m.N < 2) return {};
  const PairModel pm(m);
  const Vertex n = pm.N();
  EdgeCountEstimate est;
  if (m.N <= 10000) {
    for (Vertex i = 1; i < n; ++i)
      for (Vertex j = i + 1; j <= n; ++j) est.value += pm.p(i, j);
    return est;
  }
  for (Vertex i = 1; i < n; ++i) {
    Vertex lo = i + 1;
    while (lo <= n) {
      const Vertex hi = static_cast<Vertex>(std::min<std::int64_t>(n, 2LL * lo - 1));
      const double len = static_cast<double>(hi - lo + 1);
      const double pl = pm.p(i, lo), ph = pm.p(i, hi);
      est.value += 0.5 * len * (pl + ph);
      est.error_bound += 0.5 * len * (pl - ph);
      lo = hi + 1;
    }
  }
  return est;
}

}  // namespace dynnet
