#pragma once

// Slow, direct reference implementations used to check the library.

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

/// Median of |v_i - v_j| over i < j by full enumeration (average of the two
/// middle values for an even count); 1.0 when it is 0.
inline double median_pairwise(const Eigen::VectorXd& v) {
  std::vector<double> d;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    for (Eigen::Index j = i + 1; j < v.size(); ++j) d.push_back(std::abs(v(i) - v(j)));
  std::sort(d.begin(), d.end());
  const std::size_t m = d.size();
  const double med = m % 2 ? d[m / 2] : 0.5 * (d[m / 2 - 1] + d[m / 2]);
  return med == 0 ? 1.0 : med;
}

inline Eigen::MatrixXd gram(const Eigen::VectorXd& v, double sigma) {
  const Eigen::Index n = v.size();
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) k(i, j) = std::exp(-(v(i) - v(j)) * (v(i) - v(j)) / (2 * sigma * sigma));
  return k;
}

/// tr(K H Q H) / n^2 with explicit matrices.
inline double hsic(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::Index n = a.size();
  const Eigen::MatrixXd h = Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / n);
  const Eigen::MatrixXd k = gram(a, median_pairwise(a));
  const Eigen::MatrixXd q = gram(b, median_pairwise(b));
  return (k * h * q * h).trace() / static_cast<double>(n * n);
}

/// Minimum mean over all windows of length >= m, by exhaustive scan.
inline double min_window_mean(const std::vector<double>& v, std::size_t m) {
  double best = 1e300;
  for (std::size_t i = 0; i < v.size(); ++i) {
    double sum = 0;
    for (std::size_t j = i; j < v.size(); ++j) {
      sum += v[j];
      if (j - i + 1 >= m) best = std::min(best, sum / static_cast<double>(j - i + 1));
    }
  }
  return best;
}

/// Every c with sum rho_alpha(y_i - c) minimal lies in [y_(lo), y_(hi)] of
/// the sorted sample; returns that closed range of empirical alpha-quantiles.
inline std::pair<double, double> empirical_quantile_range(std::vector<double> y, double alpha) {
  std::sort(y.begin(), y.end());
  const double n = static_cast<double>(y.size());
  // c is a minimiser iff #{y < c} <= alpha n <= #{y <= c}.
  double lo = 1e300;
  double hi = -1e300;
  for (double c : y) {
    double below = 0;
    double at_or_below = 0;
    for (double v : y) {
      below += v < c;
      at_or_below += v <= c;
    }
    if (below <= alpha * n + 1e-9 && alpha * n <= at_or_below + 1e-9) {
      lo = std::min(lo, c);
      hi = std::max(hi, c);
    }
  }
  return {lo, hi};
}

inline double pearson_abs(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double n = static_cast<double>(a.size());
  const double ma = a.sum() / n;
  const double mb = b.sum() / n;
  double cab = 0, caa = 0, cbb = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    cab += (a(i) - ma) * (b(i) - mb);
    caa += (a(i) - ma) * (a(i) - ma);
    cbb += (b(i) - mb) * (b(i) - mb);
  }
  if (caa == 0 || cbb == 0) return 0;
  return std::abs(cab / std::sqrt(caa * cbb));
}

}  // namespace oracle
