#pragma once

#include <cmath>
#include <limits>
#include <numbers>

#include "treewave/graph.hpp"
#include "treewave/wavefront.hpp"

namespace treewave::detail {

/// Sum of coefficients of spikes within `tol` of `t`.
inline double coeff_near(const SpikeTrain& train, double t, double tol) {
  double sum = 0.0;
  for (const Spike& sp : train)
    if (std::abs(sp.time - t) <= tol) sum += sp.coeff;
  return sum;
}

/// Direction of a vector's axis in [0, pi).
inline double axis_angle(const Vec2& v) {
  double a = std::atan2(v[1], v[0]);
  if (a < 0) a += std::numbers::pi;
  if (a >= std::numbers::pi) a -= std::numbers::pi;
  return a;
}

/// Earliest spike with |coeff| above `floor`, as a time (infinity if none
/// before `limit`).
inline double first_arrival(const SpikeTrain& train, double floor, double limit) {
  for (const Spike& sp : train) {
    if (sp.time > limit) break;
    if (std::abs(sp.coeff) > floor) return sp.time;
  }
  return std::numeric_limits<double>::infinity();
}

}  // namespace treewave::detail
