#pragma once

#include <Eigen/Dense>

#include "oqr/losses.hpp"

namespace oqr {

/// Split-conformal (CQR) correction fitted on a calibration set.
struct CalibrationResult {
  double Q = 0;  // in the units of the calibration intervals
  Eigen::Index n_cal = 0;
  double alpha = 0.1;
};

/// max(lo - y, y - hi) per row.
Eigen::VectorXd conformity_scores(const IntervalBatch& intervals);

/// Rank of the conformal quantile: ceil((1 - alpha)(n_cal + 1)).
Eigen::Index conformal_rank(Eigen::Index n_cal, double alpha);

/// Q = k-th smallest conformity score. Throws DataError when n_cal is too
/// small for the level (k > n_cal).
CalibrationResult calibrate(const IntervalBatch& calibration, double alpha);

/// [lo - Q, hi + Q].
IntervalBatch conformalize(const IntervalBatch& intervals, const CalibrationResult& result);

}  // namespace oqr
