#include "oqr/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "oqr/error.hpp"
#include "oqr/rank.hpp"

namespace oqr {

Eigen::VectorXd conformity_scores(const IntervalBatch& intervals) {
  return (intervals.lo - intervals.y).cwiseMax(intervals.y - intervals.hi);
}

Eigen::Index conformal_rank(Eigen::Index n_cal, double alpha) {
  if (!(alpha > 0 && alpha < 1)) throw ConfigError("conformal: alpha must lie in (0, 1)");
  return ceil_rank(1 - alpha, n_cal + 1);
}

CalibrationResult calibrate(const IntervalBatch& calibration, double alpha) {
  const Eigen::Index n = calibration.size();
  const Eigen::Index k = conformal_rank(n, alpha);
  if (k > n || n == 0)
    throw DataError("conformal: " + std::to_string(n) + " calibration points cannot support alpha = " +
                    std::to_string(alpha) + " (rank " + std::to_string(k) + ")");
  const Eigen::VectorXd scores = conformity_scores(calibration);
  std::vector<double> sorted(scores.data(), scores.data() + n);
  std::nth_element(sorted.begin(), sorted.begin() + (k - 1), sorted.end());
  const double q = sorted[static_cast<std::size_t>(k - 1)];
  if (!std::isfinite(q)) throw NumericError("conformal: non-finite conformity score");
  return {q, n, alpha};
}

IntervalBatch conformalize(const IntervalBatch& intervals, const CalibrationResult& result) {
  return IntervalBatch{intervals.lo.array() - result.Q, intervals.hi.array() + result.Q, intervals.y};
}

}  // namespace oqr
