#pragma once

#include <boost/math/quadrature/gauss.hpp>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dynnet/kernels.hpp"
#include "dynnet/quadrature.hpp"
#include "dynnet/stats.hpp"

// Closed-form side of the model: phase classification, metastable exponents, the path
// integrals F1/F2 with their upper bounds, and the supermartingale certificate.
// Every constant that the asymptotic statements leave unspecified (c', c_a, c_R, r) is a
// caller-supplied calibration value, never a derived one.
namespace dynnet::theory {

enum class Verdict { FastExtinction, SlowMetastable, BoundaryUnknown };
enum class Strategy { QuickDirect, QuickIndirect, LocalSurvival };

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::FastExtinction: return "fast";
    case Verdict::SlowMetastable: return "slow";
    case Verdict::BoundaryUnknown: return "unknown";
  }
  return "?";
}

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::QuickDirect: return "quick_direct";
    case Strategy::QuickIndirect: return "quick_indirect";
    case Strategy::LocalSurvival: return "local_survival";
  }
  return "?";
}

/// xi is present iff verdict == SlowMetastable; strategy likewise.
template <class T>
struct BasicPhaseResult {
  Verdict verdict = Verdict::BoundaryUnknown;
  std::optional<T> xi;
  std::optional<Strategy> strategy;
};
using PhaseResult = BasicPhaseResult<double>;

// Regime formulas for the metastable exponent, usable with exact rationals.
template <class T> T xi_quick_direct(T tau) { return T(1) / (T(3) - tau); }
template <class T> T xi_local_nonpositive(T tau) { return T(2) * tau - T(3); }
template <class T> T xi_local_positive(T tau, T eta) { return (T(2) * tau - T(3) - T(2) * eta) / (T(1) - T(2) * eta); }
template <class T> T xi_quick_indirect(T tau) { return (tau - T(1)) / (T(3) - tau); }
template <class T> T xi_weak(T tau) { return tau - T(1); }

/// Phase of (kernel, tau, eta). Regimes the asymptotic statements leave open (tau = 3 with
/// eta >= 1/2 for factor and PA/strong) are reported as BoundaryUnknown.
template <class T>
BasicPhaseResult<T> classify_phase_exact(KernelKind kind, T tau, T eta) {
  const T zero(0), two(2), three(3);
  const T half = T(1) / two;
  if (!(tau > two)) throw DomainError("classify_phase: tau must exceed 2");
  auto slow = [](T xi, Strategy s) { return BasicPhaseResult<T>{Verdict::SlowMetastable, xi, s}; };
  auto fast_or_open = [&]() -> std::optional<BasicPhaseResult<T>> {
    if (eta >= half && tau > three) return BasicPhaseResult<T>{Verdict::FastExtinction, {}, {}};
    if (eta >= half && tau == three) return BasicPhaseResult<T>{};
    return std::nullopt;
  };
  switch (kind) {
    case KernelKind::Weak: return slow(xi_weak(tau), Strategy::QuickDirect);
    case KernelKind::Factor:
      if (auto r = fast_or_open()) return *r;
      if (eta >= half) return slow(xi_quick_direct(tau), Strategy::QuickDirect);
      if (eta <= zero)
        return tau <= T(5) / two ? slow(xi_quick_direct(tau), Strategy::QuickDirect)
                                 : slow(xi_local_nonpositive(tau), Strategy::LocalSurvival);
      return tau <= T(5) / two + eta ? slow(xi_quick_direct(tau), Strategy::QuickDirect)
                                     : slow(xi_local_positive(tau, eta), Strategy::LocalSurvival);
    case KernelKind::PreferentialAttachment:
    case KernelKind::Strong:
      if (auto r = fast_or_open()) return *r;
      if (eta >= half) return slow(xi_quick_indirect(tau), Strategy::QuickIndirect);
      if (eta <= zero) return slow(xi_local_nonpositive(tau), Strategy::LocalSurvival);
      return tau >= two + two * eta ? slow(xi_local_positive(tau, eta), Strategy::LocalSurvival)
                                    : slow(xi_quick_indirect(tau), Strategy::QuickIndirect);
  }
  throw DomainError("classify_phase: unknown kernel");
}

inline PhaseResult classify_phase(KernelKind kind, double tau, double eta) {
  if (!std::isfinite(tau) || !std::isfinite(eta)) throw DomainError("classify_phase: non-finite parameter");
  return classify_phase_exact<double>(kind, tau, eta);
}

/// Upper-bound exponent for non-positive eta from the path-counting bound.
inline double static_exponent(KernelKind kind, double tau) {
  if (!(tau > 2.0)) throw DomainError("static_exponent: tau must exceed 2");
  switch (kind) {
    case KernelKind::Factor:
      if (tau > 2.5) throw DomainError("static_exponent: factor kernel only covered for tau <= 5/2");
      return xi_quick_direct(tau);
    case KernelKind::PreferentialAttachment:
    case KernelKind::Strong: return xi_local_nonpositive(tau);
    case KernelKind::Weak: return xi_weak(tau);
  }
  throw DomainError("static_exponent: unknown kernel");
}

enum class UpperForm { FastExtinction, PowerLaw, Stretched, BoundaryUnknown };

inline std::string_view to_string(UpperForm f) {
  switch (f) {
    case UpperForm::FastExtinction: return "fast";
    case UpperForm::PowerLaw: return "power_law";
    case UpperForm::Stretched: return "stretched";
    case UpperForm::BoundaryUnknown: return "unknown";
  }
  return "?";
}

/// Upper bound c lambda^exponent log(1/lambda)^log_power. Stretched means exp(-r/lambda),
/// i.e. an infinite exponent; it carries no number.
struct UpperExponent {
  UpperForm form = UpperForm::BoundaryUnknown;
  std::optional<double> exponent;
  double log_power = 0.0;
};

/// Exponents certified by the supermartingale bound (eta >= 0).
inline UpperExponent supermartingale_exponent(KernelKind kind, double tau, double eta) {
  if (!(tau > 2.0)) throw DomainError("supermartingale_exponent: tau must exceed 2");
  if (!(eta >= 0.0)) throw DomainError("supermartingale_exponent: eta must be non-negative");
  auto power = [](double e) { return UpperExponent{UpperForm::PowerLaw, e, 0.0}; };
  if (kind == KernelKind::Weak) return {UpperForm::PowerLaw, xi_weak(tau), tau};
  if (eta > 0.5 && tau > 3.0) return {UpperForm::FastExtinction, {}, 0.0};
  if (kind == KernelKind::Factor) {
    if (tau == 3.0 && eta >= 0.5) return {UpperForm::Stretched, {}, 0.0};
    if (tau < 3.0 && tau <= 2.5 + eta) return power(xi_quick_direct(tau));
    if (eta < 0.5 && tau >= 2.5 + eta) return power(xi_local_positive(tau, eta));
    return {};
  }
  if (tau < 3.0 && tau <= 2.0 + 2.0 * eta) return power(xi_quick_indirect(tau));
  if (eta < 0.5 && tau >= 2.0 + 2.0 * eta) return power(xi_local_positive(tau, eta));
  return {};
}

/// Phase diagram rows: kind,tau,eta,verdict,xi,strategy (xi and strategy empty when absent).
inline void write_phase_csv(std::ostream& os, KernelKind kind, std::span<const double> taus,
                            std::span<const double> etas) {
  os << "kind,tau,eta,verdict,xi,strategy\n";
  const auto flags = os.flags();
  const auto prec = os.precision();
  os << std::setprecision(17);
  for (double tau : taus)
    for (double eta : etas) {
      const auto r = classify_phase(kind, tau, eta);
      os << to_string(kind) << ',' << tau << ',' << eta << ',' << to_string(r.verdict) << ',';
      if (r.xi) os << *r.xi;
      os << ',';
      if (r.strategy) os << to_string(*r.strategy);
      os << '\n';
    }
  os.flags(flags);
  os.precision(prec);
}

// ---------------------------------------------------------------------------------------
// Path integrals. F1(l) integrates p(x0,x1)...p(x_{l-1},x_l) over [a,1]^l x [0,a];
// F2(R) integrates the same chain of length R over [a,1]^R x [0,1]. Kernels are uncapped.

enum class FMode { F1, F2 };

namespace detail {

inline void check_f_args(double a, int n) {
  if (!(a > 0.0 && a < 1.0)) throw DomainError("F integrals: a must lie in (0,1)");
  if (n < 1) throw DomainError("F integrals: path length must be >= 1");
}

/// g(x) = integral over y in [0,a] of p(x,y), for x >= a.
inline double tail_to_floor(const KernelSpec& k, double a, double x) {
  const double g = k.gamma, b = k.beta, ia = std::pow(a, 1.0 - g) / (1.0 - g);
  switch (k.kind) {
    case KernelKind::Factor: return b * std::pow(x, -g) * ia;
    case KernelKind::PreferentialAttachment: return b * std::pow(x, g - 1.0) * ia;
    case KernelKind::Strong: return b * ia;
    case KernelKind::Weak: return b * std::pow(x, -g - 1.0) * a;
  }
  return 0.0;
}

/// Nystrom discretisation of T f(x) = integral over [a,1] of p(x,y) f(y) dy. Gauss-Legendre
/// panels are uniform in log y; the panel holding the collocation point is split at the
/// diagonal and the unknown is interpolated there, so kernel kinks cost no accuracy.
class Nystrom {
 public:
  Nystrom(const KernelSpec& k, double a) {
    using G = boost::math::quadrature::gauss<double, kQ>;
    std::array<double, kQ> gx{}, gw{};
    const auto& ab = G::abscissa();
    const auto& wt = G::weights();
    for (std::size_t i = 0; i < kQ / 2; ++i) {
      gx[i] = -ab[kQ / 2 - 1 - i];
      gw[i] = wt[kQ / 2 - 1 - i];
      gx[kQ / 2 + i] = ab[i];
      gw[kQ / 2 + i] = wt[i];
    }
    const double u0 = std::log(a);
    const auto panels = static_cast<std::size_t>(std::max(8.0, std::ceil(-u0 / std::log(10.0) * 8.0)));
    const double h = -u0 / static_cast<double>(panels);
    n_ = panels * kQ;
    u_.resize(n_);
    y_.resize(n_);
    w_.resize(n_);
    for (std::size_t p = 0; p < panels; ++p)
      for (std::size_t q = 0; q < kQ; ++q) {
        const std::size_t i = p * kQ + q;
        u_[i] = u0 + h * (static_cast<double>(p) + 0.5 * (gx[q] + 1.0));
        y_[i] = std::exp(u_[i]);
        w_[i] = 0.5 * h * gw[q] * y_[i];
      }
    K_.assign(n_ * n_, 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
      const std::size_t pi = i / kQ;
      for (std::size_t j = 0; j < n_; ++j)
        if (j / kQ != pi) K_[i * n_ + j] = kernel_eval(k, y_[i], y_[j]) * w_[j];
      const double lo = u0 + h * static_cast<double>(pi), hi = lo + h;
      for (auto [s0, s1] : {std::pair{lo, u_[i]}, std::pair{u_[i], hi}})
        for (std::size_t q = 0; q < kQ; ++q) {
          const double v = s0 + 0.5 * (s1 - s0) * (gx[q] + 1.0);
          const double yv = std::exp(v);
          const double wk = 0.5 * (s1 - s0) * gw[q] * yv * kernel_eval(k, y_[i], std::min(yv, 1.0));
          for (std::size_t m = 0; m < kQ; ++m) {
            const std::size_t j = pi * kQ + m;
            double l = 1.0;
            for (std::size_t o = 0; o < kQ; ++o)
              if (o != m) l *= (v - u_[pi * kQ + o]) / (u_[j] - u_[pi * kQ + o]);
            K_[i * n_ + j] += wk * l;
          }
        }
    }
  }

  [[nodiscard]] const std::vector<double>& nodes() const { return y_; }

  [[nodiscard]] std::vector<double> apply(const std::vector<double>& f) const {
    std::vector<double> out(n_, 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n_; ++j) s += K_[i * n_ + j] * f[j];
      out[i] = s;
    }
    return out;
  }

  [[nodiscard]] double integrate(const std::vector<double>& f) const {
    double s = 0.0;
    for (std::size_t i = 0; i < n_; ++i) s += w_[i] * f[i];
    return s;
  }

  /// Operator norm on L2(a,1). T is self-adjoint with a positive kernel, so the norm is the
  /// spectral radius, estimated by power iteration.
  [[nodiscard]] double norm_estimate(int iters = 200) const {
    std::vector<double> v(n_, 1.0);
    double lam = 0.0;
    for (int it = 0; it < iters; ++it) {
      auto nv = apply(v);
      std::vector<double> sq(n_);
      for (std::size_t i = 0; i < n_; ++i) sq[i] = nv[i] * nv[i];
      const double nn = std::sqrt(integrate(sq));
      for (std::size_t i = 0; i < n_; ++i) sq[i] = v[i] * v[i];
      lam = nn / std::sqrt(integrate(sq));
      for (std::size_t i = 0; i < n_; ++i) v[i] = nv[i] / nn;
    }
    return lam;
  }

 private:
  static constexpr std::size_t kQ = 10;
  std::size_t n_ = 0;
  std::vector<double> u_, y_, w_, K_;
};

}  // namespace detail

/// F1(1..n) and F2(1..n) for one (kernel, a).
struct FSeries {
  std::vector<double> f1, f2;  // index l-1
};

/// Product structure of the factor kernel gives every term exactly.
inline FSeries f_series_closed_form(const KernelSpec& k, double a, int n) {
  detail::check_f_args(a, n);
  if (k.kind != KernelKind::Factor) throw DomainError("F integrals: closed form needs the factor kernel");
  const double g = k.gamma, b = k.beta;
  const double i1 = (1.0 - std::pow(a, 1.0 - g)) / (1.0 - g);
  const double i2 = g == 0.5 ? -std::log(a) : (1.0 - std::pow(a, 1.0 - 2.0 * g)) / (1.0 - 2.0 * g);
  const double below = std::pow(a, 1.0 - g) / (1.0 - g), full = 1.0 / (1.0 - g);
  FSeries s;
  double chain = b * i1;  // beta^l I1 I2^{l-1}
  for (int l = 1; l <= n; ++l) {
    s.f1.push_back(chain * below);
    s.f2.push_back(chain * full);
    chain *= b * i2;
  }
  return s;
}

/// Iterated operator evaluation; valid for every kernel.
inline FSeries f_series_numeric(const KernelSpec& k, double a, int n) {
  detail::check_f_args(a, n);
  const detail::Nystrom T(k, a);
  std::vector<double> g, h;
  for (double x : T.nodes()) {
    g.push_back(detail::tail_to_floor(k, a, x));
    h.push_back(row_integral(k, x));
  }
  FSeries s;
  for (int l = 1; l <= n; ++l) {
    s.f1.push_back(T.integrate(g));
    s.f2.push_back(T.integrate(h));
    if (l < n) {
      g = T.apply(g);
      h = T.apply(h);
    }
  }
  return s;
}

inline FSeries f_series(const KernelSpec& k, double a, int n) {
  return k.kind == KernelKind::Factor ? f_series_closed_form(k, a, n) : f_series_numeric(k, a, n);
}

inline double f_integral(const KernelSpec& k, double a, int n, FMode mode) {
  const auto s = f_series(k, a, n);
  return mode == FMode::F1 ? s.f1.back() : s.f2.back();
}

enum class FBoundCase {
  FactorBelowHalf,    // (b/(1-g)^2)(b/(1-2g))^{l-1}
  FactorHalf,         // (b/(1-g)^2)(b log(1/a))^{l-1}
  FactorAboveHalf,    // (b/(1-g)^2)(b a^{1-2g}/(2g-1))^{l-1}
  OperatorAboveHalf,  // PA/strong, g > 1/2: L2 operator-norm chain
  PABelowHalf,        // PA, g < 1/2: weighted sup chain, one log(1/a) per step
  StrongBelowHalf,    // strong, g < 1/2: weighted sup chain
  WeakSup,            // weak: sup-norm chain
};

struct FBound {
  double value = 0.0;
  double c = 0.0;  // the constant raised to the path length (0 for the factor cases)
  FBoundCase which = FBoundCase::FactorBelowHalf;
};

/// Explicit upper bound on F1(l) (mode F1) or F2(R) (mode F2).
inline FBound f_bound(const KernelSpec& k, double a, int n, FMode mode) {
  detail::check_f_args(a, n);
  k.validate();
  const double g = k.gamma, b = k.beta, len = static_cast<double>(n);
  const bool f1 = mode == FMode::F1;
  const bool factor_like = k.kind == KernelKind::Factor || (g == 0.5 && k.kind != KernelKind::Weak);
  if (factor_like) {
    // At gamma = 1/2 the PA kernel is the factor kernel and dominates the strong kernel.
    double step = 0.0;
    FBoundCase c = FBoundCase::FactorBelowHalf;
    if (g < 0.5) step = b / (1.0 - 2.0 * g);
    else if (g == 0.5) step = b * std::log(1.0 / a), c = FBoundCase::FactorHalf;
    else step = b * std::pow(a, 1.0 - 2.0 * g) / (2.0 * g - 1.0), c = FBoundCase::FactorAboveHalf;
    const double lead = b / ((1.0 - g) * (1.0 - g)) * std::pow(step, len - 1.0);
    return {f1 ? lead * std::pow(a, 1.0 - g) : lead, 0.0, c};
  }
  if (k.kind == KernelKind::Weak) {
    const double c2 = condp_constants(k).c2;
    const double c = std::max({b / g, c2 / (1.0 - g)});
    const double v = f1 ? std::pow(c, len) * std::pow(a, 1.0 - g * len) : std::pow(c, len) * std::pow(a, -g * (len - 1.0));
    return {v, c, FBoundCase::WeakSup};
  }
  if (g > 0.5) {
    // PA dominates the strong kernel, so its constants serve both.
    const double c2 = condp_constants(KernelSpec{KernelKind::PreferentialAttachment, b, g}).c2;
    const double sq = std::sqrt(2.0 * g - 1.0);
    const double cf = c2 / sq, cg = b / ((1.0 - g) * sq), ct = b * std::sqrt(2.0) / (2.0 * g - 1.0);
    const double c = std::max(cf + cg, ct);
    const double v = f1 ? std::pow(a, 1.0 - g) * std::pow(c, len) * std::pow(a, (0.5 - g) * (len - 1.0))
                        : std::pow(c * std::pow(a, 0.5 - g), len);
    return {v, c, FBoundCase::OperatorAboveHalf};
  }
  const double c2 = condp_constants(k).c2;
  if (k.kind == KernelKind::Strong) {
    const double ct = b * (1.0 / (1.0 - 2.0 * g) + 1.0 / (1.0 - g));
    const double c = std::max({b / ((1.0 - g) * (1.0 - g)), ct, c2 / (1.0 - 2.0 * g)});
    return {f1 ? std::pow(a, 1.0 - g) * std::pow(c, len) : std::pow(c, len), c, FBoundCase::StrongBelowHalf};
  }
  const double L = 1.0 + std::log(1.0 / a);
  const double c = std::max({b * (1.0 / (1.0 - g) + 1.0 / g), b * (1.0 / (1.0 - 2.0 * g) + 1.0), b / (g * (1.0 - g)),
                             c2 / (1.0 - 2.0 * g), c2 / (1.0 - g)});
  const double v = f1 ? std::pow(a, 1.0 - g) * std::pow(c, len) * std::pow(L, len - 1.0) : std::pow(c * L, len);
  return {v, c, FBoundCase::PABelowHalf};
}

// ---------------------------------------------------------------------------------------
// Path-counting upper bound on the upper metastable density.

struct StaticBoundConstants {
  double c_prime = 1.0;  // exponent constant of the 2 lambda^{c' R} term
  double c_a = 1.0;      // sanity floor a >= c_a lambda^{2/gamma}
  double c_R = 1.0;      // sanity floor R >= c_R
};

enum class StaticTerm { Floor, LambdaPower, PathSum, LongPath };

struct StaticBound {
  double floor_term = 0.0;         // a
  double lambda_term = 0.0;        // 2 lambda^{c' R}
  std::vector<double> path_terms;  // (2 lambda (1+8 varkappa))^l F1(l), l = 1..R-1
  double long_path_term = 0.0;     // (2 lambda (1+8 varkappa))^R F2(R)
  double total = 0.0;
  StaticTerm dominant = StaticTerm::Floor;
  int dominant_l = 0;  // path length when the dominant term is a path term
  std::vector<std::string> warnings;
};

inline StaticBound general_static_bound(const KernelSpec& k, double lambda, double a, int R, double varkappa,
                                        const StaticBoundConstants& c = {}) {
  if (!(lambda >= 0.0)) throw DomainError("general_static_bound: lambda must be non-negative");
  if (!(varkappa > 0.0)) throw DomainError("general_static_bound: varkappa must be positive");
  if (R < 1) throw DomainError("general_static_bound: R must be >= 1");
  StaticBound out;
  if (lambda > 0.0 && a < c.c_a * std::pow(lambda, 2.0 / k.gamma))
    out.warnings.emplace_back("a below c_a lambda^(2/gamma)");
  if (static_cast<double>(R) < c.c_R) out.warnings.emplace_back("R below c_R");
  const auto f = f_series(k, a, R);
  const double q = 2.0 * lambda * (1.0 + 8.0 * varkappa);
  out.floor_term = a;
  out.lambda_term = lambda == 0.0 ? 0.0 : 2.0 * std::pow(lambda, c.c_prime * R);
  double best = a;
  if (out.lambda_term > best) best = out.lambda_term, out.dominant = StaticTerm::LambdaPower;
  for (int l = 1; l < R; ++l) {
    const double t = std::pow(q, l) * f.f1[static_cast<std::size_t>(l - 1)];
    out.path_terms.push_back(t);
    if (t > best) best = t, out.dominant = StaticTerm::PathSum, out.dominant_l = l;
  }
  out.long_path_term = std::pow(q, R) * f.f2.back();
  if (out.long_path_term > best) out.dominant = StaticTerm::LongPath, out.dominant_l = R;
  out.total = out.floor_term + out.lambda_term + out.long_path_term;
  for (double t : out.path_terms) out.total += t;
  return out;
}

// ---------------------------------------------------------------------------------------
// Supermartingale certificate.

/// psi(x) = integral over (0,1) of p(x,y) / (kappa(x)+kappa(y))^2 dy, continuum rates
/// kappa(x) = varkappa x^{-gamma eta}. Always by quadrature.
inline double psi_quadrature(const KernelSpec& k, double eta, double varkappa, double x) {
  if (!(x > 0.0 && x <= 1.0)) throw DomainError("psi: x must lie in (0,1]");
  const double kx = varkappa * std::pow(x, -k.gamma * eta);
  auto f = [&](double y) {
    const double d = kx + varkappa * std::pow(y, -k.gamma * eta);
    return kernel_eval(k, x, y) / (d * d);
  };
  return quad::graded(f, 0.0, 1.0, {x});
}

/// psi with the closed form row_integral(x) / (4 varkappa^2) when eta = 0.
inline double psi(const KernelSpec& k, double eta, double varkappa, double x) {
  if (eta == 0.0) {
    if (!(x > 0.0 && x <= 1.0)) throw DomainError("psi: x must lie in (0,1]");
    return row_integral(k, x) / (4.0 * varkappa * varkappa);
  }
  return psi_quadrature(k, eta, varkappa, x);
}

/// Non-increasing s >= 1 on [floor, 1]; s(x) for x < floor reads s(floor).
class ScoringFunction {
 public:
  enum class Form { Monomial, PAComposite };

  /// s(x) = x^{-c}, c >= 0.
  static ScoringFunction monomial(double c, double floor = 0.0) {
    if (!(c >= 0.0)) throw DomainError("ScoringFunction: monomial exponent must be >= 0");
    return ScoringFunction(Form::Monomial, c, 0.0, 0.0, floor);
  }

  /// s(x) = x^{gamma-1} + (5 lambda/(2 gamma-1)) x^{-gamma}, gamma > 1/2.
  static ScoringFunction pa_composite(double gamma, double lambda, double floor) {
    if (!(gamma > 0.5 && gamma < 1.0)) throw DomainError("ScoringFunction: composite form needs gamma in (1/2,1)");
    if (!(lambda >= 0.0)) throw DomainError("ScoringFunction: lambda must be non-negative");
    return ScoringFunction(Form::PAComposite, 0.0, gamma, lambda, floor);
  }

  [[nodiscard]] Form form() const { return form_; }
  [[nodiscard]] double floor() const { return floor_; }
  [[nodiscard]] double exponent() const { return c_; }

  [[nodiscard]] double operator()(double x) const {
    const double y = std::max(x, floor_);
    if (form_ == Form::Monomial) return std::pow(y, -c_);
    return std::pow(y, g_ - 1.0) + 5.0 * lambda_ / (2.0 * g_ - 1.0) * std::pow(y, -g_);
  }

  /// Integral of s over [lo, 1], lo >= floor; infinite if not integrable at 0.
  [[nodiscard]] double integral(double lo) const {
    if (lo < floor_) throw DomainError("ScoringFunction: integral below the floor");
    if (form_ == Form::Monomial) {
      if (c_ == 1.0) return lo > 0.0 ? -std::log(lo) : std::numeric_limits<double>::infinity();
      if (c_ > 1.0 && lo == 0.0) return std::numeric_limits<double>::infinity();
      return (1.0 - std::pow(lo, 1.0 - c_)) / (1.0 - c_);
    }
    return (1.0 - std::pow(lo, g_)) / g_ + 5.0 * lambda_ / (2.0 * g_ - 1.0) * (1.0 - std::pow(lo, 1.0 - g_)) / (1.0 - g_);
  }

  /// Power of the strongest singularity at 0 (s(y) ~ y^{-e}).
  [[nodiscard]] double singular_exponent() const {
    if (form_ == Form::Monomial) return c_;
    return lambda_ > 0.0 ? g_ : 1.0 - g_;
  }

 private:
  ScoringFunction(Form f, double c, double g, double lambda, double floor)
      : form_(f), c_(c), g_(g), lambda_(lambda), floor_(floor) {
    if (!(floor >= 0.0 && floor < 1.0)) throw DomainError("ScoringFunction: floor must lie in [0,1)");
  }
  Form form_;
  double c_, g_, lambda_, floor_;
};

struct SupermartingaleCheck {
  bool cond1 = true;
  double cond1_margin = 0.0;  // sup of 6 lambda^2 psi over the grid; passes iff <= 1
  double cond1_worst_x = 1.0;
  bool psi_decreasing = true;  // psi non-increasing along the grid
  bool cond2 = true;
  double cond2_margin = 0.0;  // sup of lhs / s(x); passes iff <= 1
  double cond2_worst_x = 1.0;
  [[nodiscard]] bool pass() const { return cond1 && cond2; }
};

struct ConditionGrid {
  int points_per_decade = 8;
  int decades_at_zero = 40;  // how far below 1 the grid reaches when a = 0
  int refine_steps = 30;     // golden-section steps around the worst grid point
};

namespace detail {

/// Small-y singularity power of y -> p(x,y) at fixed x > 0.
inline double kernel_small_y_power(const KernelSpec& k) { return k.kind == KernelKind::Weak ? 0.0 : k.gamma; }

inline std::vector<double> log_grid(double lo, double hi, int per_decade) {
  const double dec = std::log10(hi / lo);
  const int n = std::max(2, static_cast<int>(std::ceil(dec * per_decade)) + 1);
  std::vector<double> xs;
  for (int i = 0; i < n; ++i) xs.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1)));
  xs.back() = hi;
  return xs;
}

template <class F>
std::pair<double, double> refine_max(F f, std::span<const double> xs, int steps) {
  std::size_t best = 0;
  std::vector<double> v;
  for (double x : xs) v.push_back(f(x));
  for (std::size_t i = 1; i < xs.size(); ++i)
    if (v[i] > v[best]) best = i;
  double lo = std::log(xs[best == 0 ? 0 : best - 1]), hi = std::log(xs[std::min(best + 1, xs.size() - 1)]);
  double bx = xs[best], bv = v[best];
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  for (int s = 0; s < steps && hi > lo; ++s) {
    const double m1 = hi - phi * (hi - lo), m2 = lo + phi * (hi - lo);
    const double f1 = f(std::exp(m1)), f2 = f(std::exp(m2));
    if (f1 > bv) bv = f1, bx = std::exp(m1);
    if (f2 > bv) bv = f2, bx = std::exp(m2);
    if (f1 >= f2) hi = m2;
    else lo = m1;
  }
  return {bx, bv};
}

}  // namespace detail

/// Checks 6 lambda^2 psi(x) <= 1 and
/// 3 lambda (1 + lambda/(2 varkappa^2)) int_0^1 p(x,y) s(y v a) dy <= s(x) on (a,1].
inline SupermartingaleCheck check_supermartingale_conditions(const ModelParams& m, double a, const ScoringFunction& s,
                                                             const ConditionGrid& grid = {}) {
  m.kernel.validate();
  if (!(m.eta >= 0.0)) throw DomainError("supermartingale conditions: eta must be non-negative");
  if (!(a >= 0.0 && a < 1.0)) throw DomainError("supermartingale conditions: a must lie in [0,1)");
  if (s.floor() > a) throw DomainError("supermartingale conditions: scoring floor above a");
  SupermartingaleCheck out;
  const double lam = m.lambda;
  if (lam == 0.0) return out;
  const KernelSpec& k = m.kernel;
  const double lo = a > 0.0 ? a : std::pow(10.0, -grid.decades_at_zero);
  const auto xs = detail::log_grid(lo, 1.0, grid.points_per_decade);

  std::vector<double> ps;
  for (double x : xs) ps.push_back(psi(k, m.eta, m.varkappa, x));
  for (std::size_t i = 1; i < ps.size(); ++i)
    if (ps[i] > ps[i - 1] * (1.0 + 1e-9)) out.psi_decreasing = false;
  const auto imax = static_cast<std::size_t>(std::max_element(ps.begin(), ps.end()) - ps.begin());
  out.cond1_margin = 6.0 * lam * lam * ps[imax];
  out.cond1_worst_x = xs[imax];
  if (a == 0.0) {
    // psi ~ x^{-slope} near 0 means it is unbounded on (0,1]: the last decade decides.
    const std::size_t d = static_cast<std::size_t>(grid.points_per_decade);
    const double slope = std::log10(ps[0] / ps[std::min(d, ps.size() - 1)]);
    if (slope > 1e-3) out.cond1_margin = std::numeric_limits<double>::infinity(), out.cond1_worst_x = 0.0;
  }
  out.cond1 = out.cond1_margin <= 1.0;

  const double pref = 3.0 * lam * (1.0 + lam / (2.0 * m.varkappa * m.varkappa));
  if (a == 0.0 && detail::kernel_small_y_power(k) + s.singular_exponent() >= 1.0) {
    out.cond2 = false;
    out.cond2_margin = std::numeric_limits<double>::infinity();
    out.cond2_worst_x = 0.0;
    return out;
  }
  auto ratio = [&](double x) {
    auto f = [&](double y) { return kernel_eval(k, x, y) * s(std::max(y, a)); };
    return pref * quad::graded(f, 0.0, 1.0, {a, x}) / s(x);
  };
  const auto [wx, wv] = detail::refine_max(ratio, xs, grid.refine_steps);
  out.cond2_margin = wv;
  out.cond2_worst_x = wx;
  out.cond2 = wv <= 1.0;
  return out;
}

/// rho = min(1/3, varkappa, 2 varkappa/(varkappa+1)), the drift rate of the supermartingale.
inline double supermartingale_rate(double varkappa) {
  if (!(varkappa > 0.0)) throw DomainError("supermartingale_rate: varkappa must be positive");
  return std::min({1.0 / 3.0, varkappa, 2.0 * varkappa / (varkappa + 1.0)});
}

struct ResdensBound {
  double floor_term = 0.0;  // a
  double tail_term = 0.0;   // (1/s(a)) int_a^1 s
  double omega = 0.0;       // (2/rho) int_a^1 log(1+s)
  double time_term = 0.0;   // omega / t
  double size_term = 0.0;   // 1/N
  double total = 0.0;
  SupermartingaleCheck check;
  /// The metastable density bound: t and N taken to infinity.
  [[nodiscard]] double limit() const { return floor_term + tail_term; }
};

/// Upper bound on the infected fraction at time t; t and N may be +infinity.
inline ResdensBound resdens_bound(const ModelParams& m, double a, const ScoringFunction& s, double t, double n,
                                  const ConditionGrid& grid = {}) {
  if (!(a > 0.0 && a < 1.0)) throw DomainError("resdens_bound: a must lie in (0,1)");
  if (!(t > 0.0) || !(n >= 1.0)) throw DomainError("resdens_bound: need t > 0 and N >= 1");
  ResdensBound r;
  r.check = check_supermartingale_conditions(m, a, s, grid);
  if (!r.check.pass()) throw DomainError("resdens_bound: supermartingale conditions fail for (a, s)");
  r.floor_term = a;
  r.tail_term = s.integral(a) / s(a);
  r.omega = 2.0 / supermartingale_rate(m.varkappa) *
            quad::graded([&](double y) { return std::log1p(s(y)); }, a, 1.0, {});
  r.time_term = std::isinf(t) ? 0.0 : r.omega / t;
  r.size_term = std::isinf(n) ? 0.0 : 1.0 / n;
  r.total = r.floor_term + r.tail_term + r.time_term + r.size_term;
  return r;
}

/// Bound (2/rho) log(1 + N int_0^1 s) on the mean extinction time when the conditions hold
/// with a = 0.
inline double fast_extinction_time_bound(double varkappa, const ScoringFunction& s, double n) {
  if (s.floor() != 0.0) throw DomainError("fast_extinction_time_bound: needs a scoring function with floor 0");
  return 2.0 / supermartingale_rate(varkappa) * std::log1p(n * s.integral(0.0));
}

/// Level a and scoring function for each supermartingale regime; r is a calibration
/// constant (large enough for the conditions to hold at the lambdas of interest).
struct UpperChoice {
  double a = 0.0;
  ScoringFunction s = ScoringFunction::monomial(0.0);
};

enum class UpperRegime { FactorQuickDirect, QuickIndirect, LocalSurvival, Weak };

inline UpperChoice supermartingale_choice(const KernelSpec& k, UpperRegime regime, double lambda, double eta, double r) {
  if (!(lambda > 0.0 && lambda < 1.0)) throw DomainError("supermartingale_choice: lambda must lie in (0,1)");
  if (!(r > 0.0)) throw DomainError("supermartingale_choice: r must be positive");
  const double g = k.gamma;
  auto clamp = [](double a) {
    if (!(a > 0.0 && a < 1.0)) throw DomainError("supermartingale_choice: level a falls outside (0,1)");
    return a;
  };
  switch (regime) {
    case UpperRegime::FactorQuickDirect: {
      if (k.kind != KernelKind::Factor || !(g > 0.5)) throw DomainError("supermartingale_choice: needs factor, gamma > 1/2");
      const double a = clamp(r * std::pow(lambda, 1.0 / (2.0 * g - 1.0)));
      return {a, ScoringFunction::monomial(g, a)};
    }
    case UpperRegime::QuickIndirect: {
      if (k.kind == KernelKind::Factor || k.kind == KernelKind::Weak || !(g > 0.5))
        throw DomainError("supermartingale_choice: needs PA/strong, gamma > 1/2");
      const double a = clamp(r * std::pow(lambda, 2.0 / (2.0 * g - 1.0)));
      return {a, ScoringFunction::pa_composite(g, lambda, a)};
    }
    case UpperRegime::LocalSurvival: {
      if (k.kind == KernelKind::Weak || !(eta >= 0.0 && eta < 0.5))
        throw DomainError("supermartingale_choice: local survival needs 0 <= eta < 1/2");
      const double a = clamp(r * std::pow(lambda, 2.0 / (g * (1.0 - 2.0 * eta))));
      return {a, ScoringFunction::monomial(1.0 - g / 2.0 - g * eta, a)};
    }
    case UpperRegime::Weak: {
      if (k.kind != KernelKind::Weak) throw DomainError("supermartingale_choice: needs the weak kernel");
      const double a = clamp(r * std::pow(lambda * std::log(1.0 / lambda), 1.0 / g));
      return {a, ScoringFunction::monomial(1.0, a)};
    }
  }
  throw DomainError("supermartingale_choice: unknown regime");
}

/// Smallest r = 2^j (integer j in [0, 200]) for which the supermartingale conditions hold at
/// every lambda with the regime's choice of (a, s). Larger r raises a, which only relaxes
/// both conditions, so j is found by bisection below the largest j that keeps a < 1.
inline std::optional<double> calibrate_choice_r(const ModelParams& m, UpperRegime regime,
                                                std::span<const double> lambdas, const ConditionGrid& grid = {}) {
  if (lambdas.empty()) throw DomainError("calibrate_choice_r: empty lambda list");
  const double lam_max = *std::max_element(lambdas.begin(), lambdas.end());
  auto fits = [&](int j) {
    try {
      (void)supermartingale_choice(m.kernel, regime, lam_max, m.eta, std::ldexp(1.0, j));
      return true;
    } catch (const DomainError&) {
      return false;
    }
  };
  auto passes = [&](int j) {
    for (double lam : lambdas) {
      ModelParams p = m;
      p.lambda = lam;
      const auto ch = supermartingale_choice(m.kernel, regime, lam, m.eta, std::ldexp(1.0, j));
      if (!check_supermartingale_conditions(p, ch.a, ch.s, grid).pass()) return false;
    }
    return true;
  };
  int hi = 200;
  while (hi >= 0 && !fits(hi)) --hi;
  if (hi < 0 || !passes(hi)) return std::nullopt;
  int lo = -1;  // passes(lo) false or out of range
  while (hi - lo > 1) {
    const int mid = lo + (hi - lo) / 2;
    (passes(mid) ? hi : lo) = mid;
  }
  return std::ldexp(1.0, hi);
}

/// Least-squares slope of log y against log x.
inline double log_log_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DomainError("log_log_slope: size mismatch");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) lx.push_back(std::log(x[i])), ly.push_back(std::log(y[i]));
  return fit_line(lx, ly).slope;
}

}  // namespace dynnet::theory
