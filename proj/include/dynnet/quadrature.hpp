#pragma once

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <limits>
#include <vector>

namespace dynnet::quad {

inline constexpr double kAbsTol = 1e-10;

/// Adaptive Gauss-Kronrod on an interval where the integrand is smooth.
template <class F>
double smooth(F f, double lo, double hi, double rel_tol = 1e-12) {
  if (!(hi > lo)) return 0.0;
  double err = 0.0;
  const double v = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, lo, hi, 25, rel_tol, &err);
  return v;
}

/// Tanh-sinh on an interval with an integrable endpoint singularity.
template <class F>
double singular(F f, double lo, double hi, double rel_tol = 1e-12) {
  if (!(hi > lo)) return 0.0;
  thread_local boost::math::quadrature::tanh_sinh<double> ts(15);
  double err = 0.0, l1 = 0.0;
  return ts.integrate(f, lo, hi, rel_tol, &err, &l1);
}

/// Integral over [lo,hi] split at the given interior breakpoints (kinks). Every piece
/// uses tanh-sinh, which is robust to endpoint singularities and kinks at breakpoints.
template <class F>
double piecewise(F f, double lo, double hi, std::initializer_list<double> breaks, double rel_tol = 1e-12) {
  std::vector<double> pts{lo};
  for (double b : breaks)
    if (b > lo && b < hi) pts.push_back(b);
  pts.push_back(hi);
  std::sort(pts.begin(), pts.end());
  double s = 0.0;
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) s += singular(f, pts[k], pts[k + 1], rel_tol);
  return s;
}

/// Like piecewise, but every piece [u,v] with u > 0 and v/u > 10 is further cut at powers of
/// ten, so power-law integrands spanning many decades are resolved piece by piece.
template <class F>
double graded(F f, double lo, double hi, std::initializer_list<double> breaks, double rel_tol = 1e-12) {
  std::vector<double> pts{lo};
  for (double b : breaks)
    if (b > lo && b < hi) pts.push_back(b);
  pts.push_back(hi);
  std::sort(pts.begin(), pts.end());
  double s = 0.0;
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
    double u = pts[k];
    const double v = pts[k + 1];
    if (u > 0.0)
      for (double w = u * 10.0; w < v; u = w, w *= 10.0) s += singular(f, u, w, rel_tol);
    s += singular(f, u, v, rel_tol);
  }
  return s;
}

}  // namespace dynnet::quad
