#pragma once

#include <cmath>

#include <Eigen/Core>

namespace oqr {

/// ceil(fraction * n), ignoring floating-point noise (0.9 * 10 -> 9, not 10).
inline Eigen::Index ceil_rank(double fraction, Eigen::Index n) {
  const double raw = fraction * static_cast<double>(n);
  const double nearest = std::round(raw);
  return static_cast<Eigen::Index>(std::abs(raw - nearest) < 1e-9 ? nearest : std::ceil(raw));
}

}  // namespace oqr
