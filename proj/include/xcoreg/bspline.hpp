// Centered cubic B-spline kernel and its derivatives.
#pragma once

#include <cmath>

namespace xcoreg {

/// Cubic B-spline, support (-2, 2), partition of unity over integer shifts.
inline double bspline3(double s) {
  const double a = std::abs(s);
  if (a < 1.0) return 2.0 / 3.0 - a * a + 0.5 * a * a * a;
  if (a < 2.0) {
    const double t = 2.0 - a;
    return t * t * t / 6.0;
  }
  return 0.0;
}

inline double bspline3_deriv(double s) {
  const double a = std::abs(s);
  const double sign = s < 0.0 ? -1.0 : 1.0;
  if (a < 1.0) return sign * (-2.0 * a + 1.5 * a * a);
  if (a < 2.0) {
    const double t = 2.0 - a;
    return -sign * 0.5 * t * t;
  }
  return 0.0;
}

inline double bspline3_deriv2(double s) {
  const double a = std::abs(s);
  if (a < 1.0) return -2.0 + 3.0 * a;
  if (a < 2.0) return 2.0 - a;
  return 0.0;
}

}  // namespace xcoreg
